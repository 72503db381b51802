//! Artifact serialization. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a partial file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use statlap_core::field::{FieldContainer, TensorField};

use crate::checks::{Check, CheckKind};
use crate::error::CliError;
use crate::pipeline::Outcome;

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn spectrum_csv(out: &Outcome) -> Result<Vec<u8>, CliError> {
    let rows = out.spectrum.eigenvalues.iter().enumerate().map(|(n, l)| vec![n.to_string(), num(*l)]).collect();
    csv_bytes(vec!["index".into(), "eigenvalue".into()], rows)
}

pub fn eigenfields_json(out: &Outcome) -> Result<Vec<u8>, CliError> {
    let grid = out.md.grid.clone();
    let mut container = FieldContainer::new((*grid).clone());
    let width = out.spectrum.len().saturating_sub(1).to_string().len().max(4);
    for n in 0..out.spectrum.len() {
        let field = TensorField::vector(grid.clone(), out.spectrum.eigenfield(n)).map_err(CliError::from_setup)?;
        container.insert(format!("X{n:0width$}"), &field).map_err(CliError::from_setup)?;
    }
    Ok(container.to_json().map_err(CliError::from_setup)?.into_bytes())
}

pub fn vdd_csv(out: &Outcome) -> Result<Vec<u8>, CliError> {
    let dm = &out.distances;
    let mut header = vec!["node".to_string()];
    header.extend(dm.nodes.iter().map(|n| n.to_string()));
    let rows = dm
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let mut row = vec![node.to_string()];
            row.extend((0..dm.nodes.len()).map(|j| num(dm.values[(i, j)])));
            row
        })
        .collect();
    csv_bytes(header, rows)
}

/// One block of rows per diffusion time: `t, sample, K(sample, id_0), …`.
pub fn gram_csv(out: &Outcome) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["t".to_string(), "sample".to_string()];
    header.extend(out.sample_ids.iter().cloned());
    let mut rows = Vec::new();
    for gram in &out.grams {
        for (i, id) in out.sample_ids.iter().enumerate() {
            let mut row = vec![num(gram.t), id.clone()];
            row.extend((0..out.sample_ids.len()).map(|j| num(gram.values[(i, j)])));
            rows.push(row);
        }
    }
    csv_bytes(header, rows)
}

pub fn report_json(out: &Outcome) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(&out.report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

/// Human-readable verification table.
pub fn table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(8).max(8);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}  {:>4}  {:>8}", "identity", "residual", "tolerance", "pass", "ratio");
    for c in checks {
        let (residual, tolerance) = match c.kind {
            CheckKind::Skipped => ("-".to_string(), "-".to_string()),
            CheckKind::Convergence => (sci(c.residual), format!("4±{}", c.tolerance)),
            CheckKind::Floor => (sci(c.residual), format!(">={}", sci(c.tolerance))),
            CheckKind::Bound => (sci(c.residual), sci(c.tolerance)),
        };
        let pass = match (c.kind, c.pass) {
            (CheckKind::Skipped, _) => "skip",
            (_, true) => "ok",
            (_, false) => "FAIL",
        };
        let ratio = c.ratio.map_or_else(|| c.note.clone().unwrap_or_default(), |r| format!("{r:.3}"));
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}  {:>4}  {:>8}", c.name, residual, tolerance, pass, ratio);
    }
    s
}
