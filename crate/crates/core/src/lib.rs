//! Vector (Bochner) Laplacian on statistical manifolds with density.
//!
//! A statistical manifold `(M, g, ∇)` carries the Fisher metric `g` and a
//! torsion-free connection whose failure to be metric is the Amari-Chentsov
//! tensor `C`. Adding a volume density `ρ = e^{−f}√det g` makes the Bochner
//! Laplacian `Δ = ∇*∇` symmetric in `L²(ρ)`, and its heat kernel yields the
//! vector diffusion distance on `M` and a posterior-gradient kernel on sample
//! space.
//!
//! Everything is discretized on periodic rectangular charts:
//!
//! - [`geometry`]: metric inverse, Levi-Civita symbols, the dual `α`-pair and `ρ`.
//! - [`models`]: parametric families with closed-form and Monte-Carlo `g`, `C`.
//! - [`operators`]: covariant derivative, `div_f`, the adjoint connection and
//!   the Laplacian in weak (exactly symmetric) and strong form.
//! - [`spectral`]: generalized eigenpairs, heat semigroup and diffusion distance.
//! - [`kernels`]: posterior fields, their gradients and the heat kernel on samples.

pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod models;
pub mod numeric;
pub mod operators;
pub mod probe;
pub mod sparse;
pub mod spectral;

pub use error::{Result, StatlapError};
pub use field::{ConnectionField, FieldContainer, Symmetry, TensorField};
pub use geometry::{ManifoldData, Potential, Which};
pub use grid::Grid;
