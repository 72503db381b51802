//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::process::ExitCode;

use serde_json::{json, Value};
use statlap::checks::Check;
use statlap::config::RunConfig;
use statlap::pipeline::{self, Outcome, Problem};
use statlap::{Command, Overrides};
use statlap_core::models::{ac_tensor_mc, fisher_mc, Bernoulli, Gaussian, StatModel};
use statlap_core::operators::assemble_weak_laplacian;
use statlap_core::spectral::{eigendecompose, SpectralOptions};

fn config(value: Value) -> RunConfig {
    let c: RunConfig = serde_json::from_value(value).expect("acceptance config parses");
    c.validate().expect("acceptance config validates");
    c
}

/// The catalog configurations the operator criteria run on.
fn catalog() -> Vec<(&'static str, Value)> {
    vec![
        (
            "bernoulli",
            json!({"model": {"name": "bernoulli", "chart": {"center": [0.5], "period": [0.8], "points": [32]}},
                   "f": "log-sqrt-det-g", "tasks": ["verify"], "seed": 1}),
        ),
        (
            "gaussian-location",
            json!({"model": {"name": "gaussian-location", "fixed_params": {"sigma": 0.8},
                             "chart": {"center": [0.0], "period": [5.0], "points": [32]}},
                   "tasks": ["verify"], "seed": 2}),
        ),
        (
            "gaussian",
            json!({"model": {"name": "gaussian", "chart": {"center": [0.0, 1.2], "period": [5.0, 2.0], "points": [16, 16]}},
                   "f": "log-sqrt-det-g", "tasks": ["verify"], "seed": 3}),
        ),
        (
            "categorical",
            json!({"model": {"name": "categorical", "fixed_params": {"categories": 3},
                             "chart": {"center": [0.33, 0.33], "period": [0.3, 0.3], "points": [16, 16]}},
                   "tasks": ["verify"], "seed": 4}),
        ),
        (
            "synthetic",
            json!({"synthetic": {"points": [16, 16], "periods": [TAU, TAU],
                                 "metric_amplitude": 0.3, "tensor_amplitude": 0.5, "potential_amplitude": 0.4},
                   "f": "synthetic", "tasks": ["verify"], "seed": 5}),
        ),
    ]
}

struct Tally {
    failed: usize,
}

impl Tally {
    fn record(&mut self, n: usize, title: &str, pass: bool, detail: String) {
        println!("criterion {n:>2} {}  {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn find<'a>(out: &'a Outcome, name: &str) -> &'a Check {
    out.report.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("check {name} missing"))
}

fn worst(outcomes: &[(&str, Outcome)], name: &str) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, out) in outcomes {
        let c = find(out, name);
        pass &= c.pass;
        parts.push(match c.ratio {
            Some(r) => format!("{label} ratio {r:.3}"),
            None => format!("{label} {:.2e}", c.residual),
        });
    }
    (pass, parts.join(", "))
}

fn flat_spectrum_error(points: &[usize], periods: &[f64]) -> f64 {
    let c = config(json!({"flat": {"points": points, "periods": periods}, "tasks": ["spectrum"]}));
    let md = Problem::build(&c).unwrap().md;
    let weak = assemble_weak_laplacian(&md);
    let spec = eigendecompose(&weak.stiffness, &weak.mass.vector_mass, md.dim(), &SpectralOptions::default()).unwrap();
    let d = points.len();
    let mut exact = vec![0.0];
    for (&n, &l) in points.iter().zip(periods) {
        let h = l / n as f64;
        let axis: Vec<f64> = (0..n).map(|k| 4.0 / (h * h) * (PI * k as f64 / n as f64).sin().powi(2)).collect();
        exact = exact.iter().flat_map(|a| axis.iter().map(move |b| a + b)).collect();
    }
    // One copy per vector component.
    let mut exact: Vec<f64> = exact.iter().flat_map(|&v| std::iter::repeat_n(v, d)).collect();
    exact.sort_by(f64::total_cmp);
    assert_eq!(exact.len(), spec.eigenvalues.len());
    exact.iter().zip(&spec.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Largest `|MC − exact| / SE` over all components; components with zero
/// standard error must match exactly.
fn z_score(value: &[f64], stderr: &[f64], exact: &[f64]) -> f64 {
    value
        .iter()
        .zip(stderr)
        .zip(exact)
        .map(|((v, s), e)| {
            let gap = (v - e).abs();
            if *s > 0.0 {
                gap / s
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Exact moments of the Bernoulli score by summing over both outcomes.
fn bernoulli_enumerated(p: f64) -> (f64, f64) {
    let mut g = 0.0;
    let mut c = 0.0;
    for x in [0.0, 1.0] {
        let mut s = [0.0];
        Bernoulli.loglik_grad(x, &[p], &mut s);
        let w = Bernoulli.loglik(x, &[p]).exp();
        g += w * s[0] * s[0];
        c += w * s[0] * s[0] * s[0];
    }
    (g, c)
}

fn gaussian_analytic(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let s2 = sigma * sigma;
    let s3 = s2 * sigma;
    let mut c = vec![0.0; 8];
    // Index (i, j, k) over (μ, σ) flattened as 4i + 2j + k.
    c[1] = 2.0 / s3;
    c[2] = 2.0 / s3;
    c[4] = 2.0 / s3;
    c[7] = 8.0 / s3;
    (vec![1.0 / s2, 0.0, 0.0, 2.0 / s2], c)
}

fn main() -> ExitCode {
    let mut tally = Tally { failed: 0 };

    let outcomes: Vec<(&str, Outcome)> = catalog()
        .into_iter()
        .map(|(label, value)| (label, pipeline::execute(&config(value), "verify").expect("catalog verify runs")))
        .collect();

    let (pass, detail) = worst(&outcomes, "operators.laplacian-symmetry");
    tally.record(1, "L = L^T bit-exactly on all catalog configurations", pass, detail);

    let (pass, detail) = worst(&outcomes, "spectral.positive-semidefinite");
    tally.record(2, "smallest generalized eigenvalue >= -1e-10", pass, detail);

    let mut pass = true;
    let mut parts = Vec::new();
    for name in
        ["operators.total-weighted-divergence", "operators.divergence-minus-drift", "operators.divergence-product-rule"]
    {
        let (p, d) = worst(&outcomes, name);
        pass &= p;
        parts.push(format!("[{}] {d}", name.trim_start_matches("operators.")));
    }
    tally.record(3, "divergence identities, exact to 1e-12 and O(h^2) ratio 4 +- 25%", pass, parts.join("; "));

    let (pass, detail) = worst(&outcomes, "operators.adjoint-pairing");
    tally.record(4, "adjoint pairing <= 1e-10 relative over 20 field pairs", pass, detail);

    let e1 = flat_spectrum_error(&[64], &[TAU]);
    let e2 = flat_spectrum_error(&[16, 16], &[TAU, 3.0]);
    tally.record(
        5,
        "flat torus spectrum matches (4/h^2) sin^2(pi k/N)",
        e1 <= 1e-8 && e2 <= 1e-7,
        format!("1D N=64 max error {e1:.2e} (tol 1e-8), 2D 16x16 max error {e2:.2e} (tol 1e-7)"),
    );

    let (pass, detail) = worst(&outcomes, "operators.connection-laplacian-reduction");
    tally.record(6, "C = 0, f = 0 strong form matches connection Laplacian at O(h^2)", pass, detail);

    let synthetic = &outcomes.iter().find(|(l, _)| *l == "synthetic").unwrap().1;
    let ws = find(synthetic, "operators.weak-strong-consistency");
    tally.record(
        7,
        "weak/strong disagreement O(h^2) on a C != 0, f != 0 synthetic manifold",
        ws.pass,
        format!("ratio {:.3} (fine residual {:.2e})", ws.ratio.unwrap_or(f64::NAN), ws.residual),
    );

    let n = 40_000;
    let mut z_max: f64 = 0.0;
    for (i, p) in [0.1, 0.2, 0.3, 0.4, 0.5, 0.55, 0.6, 0.7, 0.8, 0.9].into_iter().enumerate() {
        let seed = 1000 + i as u64;
        let (g, c) = bernoulli_enumerated(p);
        let fm = fisher_mc(&Bernoulli, &[p], n, seed).unwrap();
        let cm = ac_tensor_mc(&Bernoulli, &[p], n, seed).unwrap();
        z_max = z_max.max(z_score(&fm.value, &fm.stderr, &[g])).max(z_score(&cm.value, &cm.stderr, &[c]));
    }
    let bern_z = z_max;
    let mut closed_gap: f64 = 0.0;
    z_max = 0.0;
    for i in 0..10 {
        let theta = [-1.0 + 0.3 * i as f64, 0.5 + 0.2 * i as f64];
        let seed = 2000 + i as u64;
        let (g, c) = gaussian_analytic(theta[1]);
        let (cg, cc) = Gaussian.closed_form(&theta).unwrap();
        closed_gap = closed_gap.max(
            g.iter().zip(&cg).chain(c.iter().zip(&cc)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        );
        let fm = fisher_mc(&Gaussian, &theta, n, seed).unwrap();
        let cm = ac_tensor_mc(&Gaussian, &theta, n, seed).unwrap();
        z_max = z_max.max(z_score(&fm.value, &fm.stderr, &g)).max(z_score(&cm.value, &cm.stderr, &c));
    }
    tally.record(
        8,
        "Monte-Carlo Fisher and AC estimates within 4 SE at 10 (seed, theta) points",
        bern_z <= 4.0 && z_max <= 4.0 && closed_gap <= 1e-12,
        format!("Bernoulli max |z| {bern_z:.2}, Gaussian max |z| {z_max:.2}, closed form vs analytic {closed_gap:.1e}"),
    );

    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["spectral.vdd-trace-vs-double-sum", "spectral.vdd-triangle", "spectral.vdd-symmetry"] {
        let (p, d) = worst(&outcomes, name);
        pass &= p;
        parts.push(format!("[{}] {d}", name.trim_start_matches("spectral.")));
    }
    tally.record(9, "vdd trace form = double sum within 1e-8, pseudo-metric over 200 triples", pass, parts.join("; "));

    let kernel_runs = [
        (
            "bernoulli",
            json!({"model": {"name": "bernoulli", "chart": {"center": [0.5], "period": [0.8], "points": [48]}},
                   "tasks": ["kernel-gram"],
                   "kernel": {"times": [0.01, 0.1, 1.0], "draw": {"theta": [0.35], "count": 20}}, "seed": 21}),
        ),
        (
            "gaussian",
            json!({"model": {"name": "gaussian", "chart": {"center": [0.0, 1.2], "period": [5.0, 2.0], "points": [24, 24]}},
                   "tasks": ["kernel-gram"],
                   "kernel": {"times": [0.01, 0.1, 1.0], "draw": {"theta": [0.0, 1.2], "count": 20}}, "seed": 22}),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, value) in kernel_runs {
        match pipeline::execute(&config(value), "verify") {
            Ok(out) => {
                let mut min_eig = f64::INFINITY;
                for g in &out.grams {
                    pass &= g.values.nrows() == 20 && g.min_eigenvalue >= -1e-10;
                    min_eig = min_eig.min(g.min_eigenvalue);
                }
                pass &= out.grams.len() == 3;
                let limit = find(&out, "kernels.zero-time-limit");
                pass &= limit.pass && limit.kind == statlap::checks::CheckKind::Bound;
                parts.push(format!("{label} min eigenvalue {min_eig:.2e}, t->0 gap {:.2e}", limit.residual));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{label} failed: {e}"));
            }
        }
    }
    tally.record(10, "kernel Gram PSD at t in {0.01, 0.1, 1}, t->0 limit within 1e-7", pass, parts.join("; "));

    let dir = tempfile::tempdir().unwrap();
    let run_config = json!({
        "model": {"name": "gaussian", "chart": {"center": [0.0, 1.2], "period": [5.0, 2.0], "points": [16, 16]}},
        "tasks": ["spectrum", "vdd-matrix", "kernel-gram"],
        "vdd": {"t": 0.1, "stride": 5},
        "spectral": {"k": 40},
        "kernel": {"times": [0.1], "samples": [{"id": "a", "value": -0.5}, {"id": "b", "value": 0.3}, {"id": "c", "value": 1.1}]},
        "seed": 31
    });
    let path = dir.path().join("run.json");
    fs::write(&path, run_config.to_string()).unwrap();
    let mut reports = Vec::new();
    for sub in ["first", "second"] {
        let overrides = Overrides { output: Some(dir.path().join(sub)), seed: None };
        let c = statlap::load_config(&path, &overrides).unwrap();
        statlap::execute(Command::Run, &c).expect("run succeeds");
        reports.push(fs::read(dir.path().join(sub).join("report.json")).unwrap());
    }
    tally.record(
        11,
        "identical config and seed give byte-identical report.json",
        reports[0] == reports[1],
        format!("{} bytes", reports[0].len()),
    );

    if tally.failed == 0 {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria fail", tally.failed);
        ExitCode::FAILURE
    }
}
