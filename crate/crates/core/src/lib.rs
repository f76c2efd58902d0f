//! Numerical companion for the partial-data inverse problem of the perturbed
//! biharmonic operator `Δ² + A·D + q` with Navier boundary conditions.
//!
//! The crate is organised bottom-up: [`geometry`] and [`weights`] describe the
//! domain and the limiting Carleman weights, [`discretization`] holds grid
//! fields and quadrature, [`forward`] solves the boundary value problem,
//! [`transport`] and [`cgo`] build complex geometrical optics solutions,
//! [`carleman`] measures the estimates and [`identities`] evaluates the
//! integral identities of the uniqueness argument.

pub mod carleman;
pub mod cgo;
pub mod discretization;
pub mod error;
pub mod expr;
pub mod fit;
pub mod forward;
pub mod geometry;
pub mod identities;
pub mod linalg;
pub mod quadrature;
pub mod transport;
pub mod weights;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Point in ℝ³.
pub type Vec3 = [f64; 3];

pub(crate) mod vec3 {
    use super::Vec3;

    #[inline]
    pub fn add(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }
    #[inline]
    pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }
    #[inline]
    pub fn scale(a: Vec3, s: f64) -> Vec3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }
    #[inline]
    pub fn dot(a: Vec3, b: Vec3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }
    #[inline]
    pub fn norm(a: Vec3) -> f64 {
        dot(a, a).sqrt()
    }
    #[inline]
    pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }
    pub fn normalize(a: Vec3) -> Vec3 {
        scale(a, 1.0 / norm(a))
    }
}
