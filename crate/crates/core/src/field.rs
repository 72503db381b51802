//! Node-sampled tensor fields and their JSON / binary container.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatlapError};
use crate::grid::Grid;

/// Declared index symmetry of a field's components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    None,
    /// Rank 2, symmetric in `(i, j)`.
    Symmetric,
    /// Rank 3, symmetric under every permutation.
    FullySymmetric,
    /// Rank 3 stored as `[k][i][j]`, symmetric in the lower pair `(i, j)`.
    LowerPair,
}

/// Components of a rank 0..=3 tensor at every node of a grid.
///
/// Storage is node-major, then row-major over the component indices. Declared
/// symmetries are imposed at construction so they hold bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Arc<Grid>,
    rank: usize,
    symmetry: Symmetry,
    values: Vec<f64>,
}

impl TensorField {
    pub fn new(grid: Arc<Grid>, rank: usize, symmetry: Symmetry, values: Vec<f64>) -> Result<Self> {
        if rank > 3 {
            return Err(StatlapError::ShapeMismatch(format!("rank {rank} exceeds 3")));
        }
        let ok = matches!(
            (symmetry, rank),
            (Symmetry::None, _) | (Symmetry::Symmetric, 2) | (Symmetry::FullySymmetric, 3) | (Symmetry::LowerPair, 3)
        );
        if !ok {
            return Err(StatlapError::ShapeMismatch(format!(
                "symmetry {symmetry:?} does not apply to rank {rank}"
            )));
        }
        let expected = grid.len() * grid.dim().pow(rank as u32);
        if values.len() != expected {
            return Err(StatlapError::ShapeMismatch(format!(
                "rank-{rank} field needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(StatlapError::InvalidInput(format!("non-finite field value at offset {i}")));
        }
        let mut field = TensorField { grid, rank, symmetry, values };
        field.impose_symmetry();
        Ok(field)
    }

    pub fn scalar(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        TensorField::new(grid, 0, Symmetry::None, values)
    }

    pub fn vector(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        TensorField::new(grid, 1, Symmetry::None, values)
    }

    pub fn zeros(grid: Arc<Grid>, rank: usize, symmetry: Symmetry) -> Self {
        let n = grid.len() * grid.dim().pow(rank as u32);
        TensorField::new(grid, rank, symmetry, vec![0.0; n]).expect("zero field is well formed")
    }

    /// Fills a field from a per-node closure writing `d^rank` components.
    pub fn from_fn(
        grid: Arc<Grid>,
        rank: usize,
        symmetry: Symmetry,
        mut f: impl FnMut(usize, &mut [f64]),
    ) -> Result<Self> {
        let per = grid.dim().pow(rank as u32);
        let mut values = vec![0.0; grid.len() * per];
        for (x, chunk) in values.chunks_mut(per).enumerate() {
            f(x, chunk);
        }
        TensorField::new(grid, rank, symmetry, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn components_per_node(&self) -> usize {
        self.dim().pow(self.rank as u32)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let per = self.components_per_node();
        &self.values[node * per..(node + 1) * per]
    }

    pub fn get2(&self, node: usize, i: usize, j: usize) -> f64 {
        let d = self.dim();
        self.values[node * d * d + i * d + j]
    }

    pub fn get3(&self, node: usize, a: usize, b: usize, c: usize) -> f64 {
        let d = self.dim();
        self.values[((node * d + a) * d + b) * d + c]
    }

    fn impose_symmetry(&mut self) {
        let d = self.dim();
        let per = self.components_per_node();
        for chunk in self.values.chunks_mut(per) {
            match self.symmetry {
                Symmetry::None => {}
                Symmetry::Symmetric => {
                    for i in 0..d {
                        for j in i + 1..d {
                            let v = 0.5 * (chunk[i * d + j] + chunk[j * d + i]);
                            chunk[i * d + j] = v;
                            chunk[j * d + i] = v;
                        }
                    }
                }
                Symmetry::LowerPair => {
                    for k in 0..d {
                        for i in 0..d {
                            for j in i + 1..d {
                                let (p, q) = ((k * d + i) * d + j, (k * d + j) * d + i);
                                let v = 0.5 * (chunk[p] + chunk[q]);
                                chunk[p] = v;
                                chunk[q] = v;
                            }
                        }
                    }
                }
                Symmetry::FullySymmetric => {
                    for a in 0..d {
                        for b in a..d {
                            for c in b..d {
                                let perms = [
                                    (a, b, c),
                                    (a, c, b),
                                    (b, a, c),
                                    (b, c, a),
                                    (c, a, b),
                                    (c, b, a),
                                ];
                                let idx = |(i, j, k): (usize, usize, usize)| (i * d + j) * d + k;
                                let first = chunk[idx(perms[0])];
                                if perms.iter().all(|&p| chunk[idx(p)].to_bits() == first.to_bits()) {
                                    continue;
                                }
                                let mut distinct: Vec<(usize, usize, usize)> = perms.to_vec();
                                distinct.sort_unstable();
                                distinct.dedup();
                                let v = distinct.iter().map(|&p| chunk[idx(p)]).sum::<f64>() / distinct.len() as f64;
                                for &p in &perms {
                                    chunk[idx(p)] = v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Torsion-free connection coefficients `Γ^k_{ij}`, stored `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionField(TensorField);

impl ConnectionField {
    pub fn new(field: TensorField) -> Result<Self> {
        if field.rank() != 3 || field.symmetry() != Symmetry::LowerPair {
            return Err(StatlapError::ShapeMismatch(
                "connection coefficients must be a rank-3 field symmetric in the lower pair".into(),
            ));
        }
        Ok(ConnectionField(field))
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        ConnectionField::new(TensorField::new(grid, 3, Symmetry::LowerPair, values)?)
    }

    /// `Γ^k_{ij}` at a node.
    pub fn get(&self, node: usize, k: usize, i: usize, j: usize) -> f64 {
        self.0.get3(node, k, i, j)
    }

    pub fn field(&self) -> &TensorField {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }
}

/// One serialized field inside a [`FieldContainer`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRecord {
    pub rank: usize,
    pub symmetries: Symmetry,
    pub values: Vec<f64>,
}

/// JSON document `{grid, fields: {name: {rank, symmetries, values}}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldContainer {
    pub grid: Grid,
    pub fields: BTreeMap<String, FieldRecord>,
}

impl FieldContainer {
    pub fn new(grid: Grid) -> Self {
        FieldContainer { grid, fields: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, field: &TensorField) -> Result<()> {
        if **field.grid() != self.grid {
            return Err(StatlapError::ShapeMismatch("field lives on a different grid".into()));
        }
        self.fields.insert(
            name.into(),
            FieldRecord {
                rank: field.rank(),
                symmetries: field.symmetry(),
                values: field.values().to_vec(),
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<TensorField> {
        let rec = self
            .fields
            .get(name)
            .ok_or_else(|| StatlapError::InvalidInput(format!("container has no field `{name}`")))?;
        TensorField::new(Arc::new(self.grid.clone()), rec.rank, rec.symmetries, rec.values.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: FieldContainer = serde_json::from_str(text)?;
        for name in c.fields.keys() {
            c.get(name)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        FieldContainer::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Writes values as a little-endian column of 64-bit floats, same ordering as JSON.
pub fn write_binary_column(mut w: impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary_column(mut r: impl Read) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(StatlapError::InvalidInput(format!(
            "binary column of {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2() -> Arc<Grid> {
        Arc::new(Grid::new(vec![4, 4], vec![1.0, 1.0]).unwrap())
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        let g = grid2();
        assert!(TensorField::new(g.clone(), 2, Symmetry::Symmetric, vec![0.0; 10]).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(TensorField::scalar(g.clone(), v).is_err());
        assert!(TensorField::new(g, 1, Symmetry::Symmetric, vec![0.0; 32]).is_err());
    }

    #[test]
    fn container_json_shape() {
        let g = Arc::new(Grid::new(vec![4], vec![2.0]).unwrap());
        let f = TensorField::scalar(g.clone(), vec![1.0, 2.0, 3.0, 4.5]).unwrap();
        let mut c = FieldContainer::new((*g).clone());
        c.insert("f", &f).unwrap();
        let s = c.to_json().unwrap();
        assert_eq!(
            s,
            r#"{"grid":{"dims":1,"points":[4],"periods":[2.0]},"fields":{"f":{"rank":0,"symmetries":"none","values":[1.0,2.0,3.0,4.5]}}}"#
        );
        assert_eq!(FieldContainer::from_json(&s).unwrap().get("f").unwrap(), f);
    }

    #[test]
    fn container_rejects_unknown_keys() {
        let s = r#"{"grid":{"dims":1,"points":[4],"periods":[2.0]},"fields":{},"extra":1}"#;
        assert!(FieldContainer::from_json(s).is_err());
    }

    proptest! {
        #[test]
        fn fully_symmetric_holds_exactly(vals in proptest::collection::vec(-10.0f64..10.0, 16 * 8)) {
            let f = TensorField::new(grid2(), 3, Symmetry::FullySymmetric, vals).unwrap();
            for x in 0..16 {
                for a in 0..2 { for b in 0..2 { for c in 0..2 {
                    let v = f.get3(x, a, b, c);
                    prop_assert_eq!(v.to_bits(), f.get3(x, b, a, c).to_bits());
                    prop_assert_eq!(v.to_bits(), f.get3(x, c, b, a).to_bits());
                    prop_assert_eq!(v.to_bits(), f.get3(x, a, c, b).to_bits());
                }}}
            }
        }

        #[test]
        fn binary_column_round_trips(vals in proptest::collection::vec(proptest::num::f64::ANY, 0..64)) {
            let mut buf = Vec::new();
            write_binary_column(&mut buf, &vals).unwrap();
            let back = read_binary_column(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), vals.len());
            for (a, b) in back.iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
