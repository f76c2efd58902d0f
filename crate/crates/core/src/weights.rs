//! Limiting Carleman weights φ = log|x − x0| and
//! ψ = d_{S²}((x − x0)/|x − x0|, ω).

use crate::geometry::{Frame, Viewpoint};
use crate::vec3::{dot, scale, sub};
use crate::{Error, Result, Vec3, C64};
use serde::Serialize;

/// Sign of the real weight: `Plus` uses φ, `Minus` uses −φ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Weights and their first and second order data at a point.
#[derive(Clone, Copy, Debug)]
pub struct WeightEval {
    pub phi: f64,
    pub psi: f64,
    pub grad_phi: Vec3,
    pub grad_psi: Vec3,
    pub lap_phi: f64,
    pub lap_psi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightPair {
    pub viewpoint: Viewpoint,
    /// Diameter of the domain, used for the on-axis tolerance.
    pub scale: f64,
}

impl WeightPair {
    pub fn new(viewpoint: Viewpoint, scale: f64) -> Self {
        WeightPair { viewpoint, scale }
    }

    pub fn frame(&self) -> &Frame {
        &self.viewpoint.frame
    }

    pub fn eval(&self, x: Vec3) -> Result<WeightEval> {
        let vp = &self.viewpoint;
        let y = sub(x, vp.x0);
        let y1 = dot(y, vp.omega);
        let perp = sub(y, scale(vp.omega, y1));
        let r = dot(perp, perp).sqrt();
        if r < 1e-12 * self.scale {
            return Err(Error::OnAxis);
        }
        let rho2 = dot(y, y);
        let grad_phi = scale(y, 1.0 / rho2);
        let grad_psi = scale(sub(scale(perp, y1 / r), scale(vp.omega, r)), 1.0 / rho2);
        Ok(WeightEval {
            phi: 0.5 * rho2.ln(),
            psi: r.atan2(y1),
            grad_phi,
            grad_psi,
            lap_phi: 1.0 / rho2,
            lap_psi: y1 / (r * rho2),
        })
    }

    /// Φ = σφ + iψ.
    pub fn complex_phase(&self, x: Vec3, sign: Sign) -> Result<C64> {
        let w = self.eval(x)?;
        Ok(C64::new(sign.value() * w.phi, w.psi))
    }

    /// ∇(σφ + iψ).
    pub fn complex_gradient(&self, x: Vec3, sign: Sign) -> Result<[C64; 3]> {
        let w = self.eval(x)?;
        let s = sign.value();
        Ok([0, 1, 2].map(|k| C64::new(s * w.grad_phi[k], w.grad_psi[k])))
    }

    /// Δ(σφ + iψ).
    pub fn complex_laplacian(&self, x: Vec3, sign: Sign) -> Result<C64> {
        let w = self.eval(x)?;
        Ok(C64::new(sign.value() * w.lap_phi, w.lap_psi))
    }

    /// Spherical distance from the direction of x − x0 to ω, computed
    /// independently of the atan2 form.
    pub fn spherical_distance(&self, x: Vec3) -> f64 {
        let y = sub(x, self.viewpoint.x0);
        let n = dot(y, y).sqrt();
        (dot(y, self.viewpoint.omega) / n).clamp(-1.0, 1.0).acos()
    }

    /// Boundary split into ∂Ω₋ (∂νφ < 0, true) and ∂Ω₊.
    pub fn minus_side(&self, pos: Vec3, normal: Vec3) -> Result<bool> {
        let w = self.eval(pos)?;
        Ok(dot(w.grad_phi, normal) < 0.0)
    }

    /// Largest |∇ψ| over a set of points.
    pub fn max_grad_psi(&self, pts: impl Iterator<Item = Vec3>) -> Result<f64> {
        let mut m: f64 = 0.0;
        for p in pts {
            let w = self.eval(p)?;
            m = m.max(dot(w.grad_psi, w.grad_psi).sqrt());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;
    use proptest::prelude::*;

    fn standard() -> WeightPair {
        let s = Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 };
        WeightPair::new(Viewpoint::standard(&s).unwrap(), 2.0)
    }

    #[test]
    fn closed_form_values() {
        let wp = standard();
        let w = wp.eval([0.0, 0.0, 4.0]).unwrap();
        assert!((w.phi - 4f64.ln()).abs() < 1e-15);
        assert!((w.psi - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        // |∇φ| = |∇ψ| = 1/|y|
        let n = |v: Vec3| dot(v, v).sqrt();
        assert!((n(w.grad_phi) - 0.25).abs() < 1e-15);
        assert!((n(w.grad_psi) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn on_axis_is_an_error() {
        let wp = standard();
        assert!(matches!(wp.eval([3.0, 0.0, 0.0]), Err(Error::OnAxis)));
    }

    fn fd_check(wp: &WeightPair, x: Vec3) {
        let h = 1e-4;
        let w = wp.eval(x).unwrap();
        let mut lap_phi = -6.0 * w.phi;
        let mut lap_psi = -6.0 * w.psi;
        for k in 0..3 {
            let mut a = x;
            let mut b = x;
            a[k] += h;
            b[k] -= h;
            let wa = wp.eval(a).unwrap();
            let wb = wp.eval(b).unwrap();
            assert!(((wa.phi - wb.phi) / (2.0 * h) - w.grad_phi[k]).abs() < 1e-7);
            assert!(((wa.psi - wb.psi) / (2.0 * h) - w.grad_psi[k]).abs() < 1e-7);
            lap_phi += wa.phi + wb.phi;
            lap_psi += wa.psi + wb.psi;
        }
        assert!((lap_phi / (h * h) - w.lap_phi).abs() < 1e-5);
        assert!((lap_psi / (h * h) - w.lap_psi).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn eikonal_orthogonality_and_derivatives(
            x in -0.9f64..0.9, y in -0.6f64..0.6, z in 3.3f64..4.7
        ) {
            let wp = standard();
            let p = [x, y, z];
            let w = wp.eval(p).unwrap();
            let g2 = dot(w.grad_phi, w.grad_phi);
            let s2 = dot(w.grad_psi, w.grad_psi);
            prop_assert!((g2 - s2).abs() < 1e-12 * g2);
            prop_assert!(dot(w.grad_phi, w.grad_psi).abs() < 1e-12 * g2);
            // ψ agrees with the spherical distance
            prop_assert!((w.psi - wp.spherical_distance(p)).abs() < 1e-10);
            // (∇φ + i∇ψ)·(∇φ + i∇ψ) = 0
            let g = wp.complex_gradient(p, Sign::Plus).unwrap();
            let sq: C64 = g.iter().map(|c| c * c).sum();
            prop_assert!(sq.norm() < 1e-12 * g2);
            fd_check(&wp, p);
        }
    }
}
