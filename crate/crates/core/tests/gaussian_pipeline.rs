//! End to end on the normal family in `(μ, σ)`: closed-form geometry, weak
//! Laplacian, spectrum, vector diffusion distances and kernel Grams.

use std::collections::BTreeMap;

use statlap_core::geometry::Potential;
use statlap_core::kernels::{kernel_gram, kernel_value_checked, uniform_prior, KernelContext};
use statlap_core::models::{catalog_model, draw_samples, ChartSpec, ChartedModel};
use statlap_core::operators::assemble_weak_laplacian;
use statlap_core::spectral::{eigendecompose, vdd_matrix, SpectralOptions};

fn chart(points: usize) -> ChartedModel {
    let model = catalog_model("gaussian", &BTreeMap::new()).unwrap();
    ChartedModel::new(model, ChartSpec { center: vec![0.0, 1.2], period: vec![5.0, 2.0], points: vec![points, points] }).unwrap()
}

#[test]
fn gaussian_geometry_spectrum_and_kernels() {
    let chart = chart(16);
    let md = chart.manifold(Potential::LogSqrtDetG, 1.0).unwrap();
    assert!(md.check_invariants().all_pass());

    let weak = assemble_weak_laplacian(&md);
    assert!(weak.stiffness.is_bitwise_symmetric());
    let spec = eigendecompose(&weak.stiffness, &weak.mass.vector_mass, 2, &SpectralOptions::default()).unwrap();
    assert!(spec.is_complete());
    assert!(spec.eigenvalues.iter().all(|&l| l >= 0.0));
    assert!(spec.orthonormality_residual < 1e-8);

    let nodes: Vec<usize> = (0..md.len()).step_by(7).collect();
    let dm = vdd_matrix(&spec, &md, 0.1, &nodes, usize::MAX).unwrap();
    assert_eq!(dm.checked_pairs, nodes.len() * (nodes.len() - 1) / 2);
    for i in 0..nodes.len() {
        assert_eq!(dm.values[(i, i)], 0.0);
        for j in 0..nodes.len() {
            assert_eq!(dm.values[(i, j)], dm.values[(j, i)]);
        }
    }

    let prior = uniform_prior(&md);
    let ctx = KernelContext { model: &chart, md: &md, spec: &spec, prior: &prior };
    let samples = draw_samples(chart.model().as_ref(), &[0.0, 1.2], 11, 20);
    for t in [0.01, 0.1, 1.0] {
        let gram = kernel_gram(&ctx, &samples, t).unwrap();
        assert!(gram.min_eigenvalue >= -1e-10, "t={t}: {}", gram.min_eigenvalue);
    }
    let (_, gap) = kernel_value_checked(&ctx, samples[0], samples[1], 0.1).unwrap();
    assert!(gap < 1e-7);
}

#[test]
fn spectrum_refines_toward_a_limit() {
    // low eigenvalues on the finer chart differ from the coarse ones by
    // about a quarter of the coarse-versus-coarser gap
    let lows: Vec<Vec<f64>> = [8, 16, 32]
        .iter()
        .map(|&n| {
            let md = chart(n).manifold(Potential::Zero, 0.0).unwrap();
            let weak = assemble_weak_laplacian(&md);
            let spec = eigendecompose(&weak.stiffness, &weak.mass.vector_mass, 2, &SpectralOptions::with_k(4)).unwrap();
            spec.eigenvalues[..4].to_vec()
        })
        .collect();
    for n in 0..4 {
        let coarse = (lows[0][n] - lows[1][n]).abs();
        let fine = (lows[1][n] - lows[2][n]).abs();
        assert!(fine < coarse, "mode {n}: {coarse} then {fine}");
    }
}
