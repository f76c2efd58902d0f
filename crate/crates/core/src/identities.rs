//! Integral identities behind the uniqueness argument, evaluated by
//! quadrature, and a distinguisher comparing restricted DN maps.
//!
//! In every product u₂v̄ used below the exponential weights cancel, so the
//! identities are computed from amplitudes or from physical fields whose
//! size stays moderate over the admissible h-range.

use crate::cgo::{CgoBuilder, CgoFamily, CgoSolution};
use crate::expr::{Expr, VectorExpr};
use crate::fit::{fit_slope, polyfit, SlopeFit};
use crate::forward::{match_solution, spectral_norm, DnMap, NavierSystem, Perturbation};
use crate::geometry::{Cylindrical, DiscretizedDomain, Frame, Shape, Viewpoint, VolumeRule};
use crate::transport::{chart_z, inv_sqrt_s, Generator, SliceGrid, SliceSetup};
use crate::vec3::{add, dot, scale};
use crate::weights::{Sign, WeightPair};
use crate::{Error, Result, Vec3, C64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

// ---------------------------------------------------------------------------
// sections Ω_θ

/// Polar description of a section Ω_θ in the (x1, r) half-plane: boundary
/// points c + ρ(α)e^{iα} at equispaced angles α.
#[derive(Clone, Debug)]
pub struct SliceSection {
    pub theta: f64,
    pub center: C64,
    pub radii: Vec<f64>,
    /// dρ/dα at the same angles (spectral)
    pub radii_prime: Vec<f64>,
}

/// Bounding box [x1_lo, x1_hi, r_lo, r_hi] of Ω in the chart, with the θ-range.
fn chart_extent(shape: &Shape, frame: &Frame) -> ([f64; 4], [f64; 2]) {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut t = [f64::INFINITY, f64::NEG_INFINITY];
    let n = 64;
    for i in 0..=n {
        let pol = PI * i as f64 / n as f64;
        for j in 0..2 * n {
            let az = PI * j as f64 / n as f64;
            let d = [pol.sin() * az.cos(), pol.sin() * az.sin(), pol.cos()];
            let c = frame.chart(shape.boundary_point(d));
            b = [b[0].min(c.x1), b[1].max(c.x1), b[2].min(c.r), b[3].max(c.r)];
            t = [t[0].min(c.theta), t[1].max(c.theta)];
        }
    }
    let pad = 0.05 * (b[1] - b[0]).max(b[3] - b[2]);
    ([b[0] - pad, b[1] + pad, (b[2] - pad).max(0.0), b[3] + pad], t)
}

/// `count` section angles at the midpoints of equal cells of the θ-range of Ω.
pub fn section_angles(shape: &Shape, frame: &Frame, count: usize) -> Vec<f64> {
    let (_, t) = chart_extent(shape, frame);
    (0..count).map(|k| t[0] + (k as f64 + 0.5) * (t[1] - t[0]) / count as f64).collect()
}

fn periodic_derivative(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let m = if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        };
        *b *= I * m;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|z| z.re / n as f64).collect()
}

impl SliceSection {
    /// Sections with fewer than 8 interior samples on a 48×48 scan are
    /// treated as degenerate.
    pub fn new(shape: &Shape, frame: &Frame, theta: f64, angles: usize) -> Result<SliceSection> {
        let (b, _) = chart_extent(shape, frame);
        let inside = |z: C64| z.im > 0.0 && shape.contains(frame.inverse_chart(Cylindrical { x1: z.re, r: z.im, theta }));
        const SCAN: usize = 48;
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for i in 0..SCAN {
            for j in 0..SCAN {
                let z = C64::new(
                    b[0] + (i as f64 + 0.5) * (b[1] - b[0]) / SCAN as f64,
                    b[2] + (j as f64 + 0.5) * (b[3] - b[2]) / SCAN as f64,
                );
                if inside(z) {
                    ins.push(z)
                } else {
                    outs.push(z)
                }
            }
        }
        if ins.len() < 8 {
            return Err(Error::DegenerateSlice(theta));
        }
        let mean = ins.iter().sum::<C64>() / ins.len() as f64;
        let center = if inside(mean) {
            mean
        } else {
            // deepest scan point
            *ins.iter()
                .max_by(|a, c| {
                    let da = outs.iter().map(|o| (*a - o).norm()).fold(f64::INFINITY, f64::min);
                    let dc = outs.iter().map(|o| (*c - o).norm()).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&dc)
                })
                .unwrap()
        };
        let reach = ((b[1] - b[0]).powi(2) + (b[3] - b[2]).powi(2)).sqrt();
        let march = reach / 512.0;
        let radii: Vec<f64> = (0..angles)
            .map(|k| {
                let dir = C64::from_polar(1.0, 2.0 * PI * k as f64 / angles as f64);
                let mut hi = march;
                while inside(center + dir * hi) && hi < reach {
                    hi += march;
                }
                let mut lo = hi - march;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if inside(center + dir * mid) {
                        lo = mid
                    } else {
                        hi = mid
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        let radii_prime = periodic_derivative(&radii);
        Ok(SliceSection { theta, center, radii, radii_prime })
    }

    fn angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.radii.len() as f64
    }

    pub fn boundary(&self, k: usize) -> C64 {
        self.center + C64::from_polar(self.radii[k], self.angle(k))
    }

    /// dz/dα along the counter-clockwise boundary.
    fn tangent(&self, k: usize) -> C64 {
        C64::new(self.radii_prime[k], self.radii[k]) * C64::from_polar(1.0, self.angle(k))
    }

    pub fn area(&self) -> f64 {
        let da = 2.0 * PI / self.radii.len() as f64;
        self.radii.iter().map(|r| 0.5 * r * r * da).sum()
    }

    /// (∫ f dx1 dr, ∫ |f| dx1 dr) by Gauss–Legendre along each ray.
    pub fn integrate<F: Fn(C64) -> C64>(&self, radial: usize, f: F) -> (C64, f64) {
        let (t, w) = crate::quadrature::gauss_legendre_on(radial, 0.0, 1.0);
        let da = 2.0 * PI / self.radii.len() as f64;
        let mut acc = ZERO;
        let mut mag = 0.0;
        for (k, &rho) in self.radii.iter().enumerate() {
            let dir = C64::from_polar(1.0, self.angle(k));
            for (s, ws) in t.iter().zip(&w) {
                let v = f(self.center + dir * (s * rho)) * (ws * s * rho * rho * da);
                acc += v;
                mag += v.norm();
            }
        }
        (acc, mag)
    }

    /// ∮ f dz, counter-clockwise.
    pub fn contour_dz<F: Fn(C64) -> C64>(&self, f: F) -> C64 {
        let da = 2.0 * PI / self.radii.len() as f64;
        (0..self.radii.len()).map(|k| f(self.boundary(k)) * self.tangent(k) * da).sum()
    }

    /// ∮ f dz̄, counter-clockwise.
    pub fn contour_dzbar<F: Fn(C64) -> C64>(&self, f: F) -> C64 {
        let da = 2.0 * PI / self.radii.len() as f64;
        (0..self.radii.len()).map(|k| f(self.boundary(k)) * self.tangent(k).conj() * da).sum()
    }
}

// ---------------------------------------------------------------------------
// plane integrals and Stokes reductions

/// Resolution of the per-section quadrature.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SliceQuadrature {
    pub slices: usize,
    pub angles: usize,
    pub radial: usize,
}

impl Default for SliceQuadrature {
    fn default() -> Self {
        SliceQuadrature { slices: 16, angles: 96, radial: 20 }
    }
}

impl SliceQuadrature {
    /// The refinement used to estimate quadrature noise.
    pub fn refined(&self) -> Self {
        SliceQuadrature { slices: self.slices, angles: 2 * self.angles, radial: self.radial + 12 }
    }
}

/// Planar generator at fixed θ: g₀(z) for σ = +, its conjugate for σ = −.
fn planar_generator(g: &Generator, direction: Sign, z: C64, theta: f64) -> C64 {
    let v = g.eval(z, theta, Sign::Plus);
    match direction {
        Sign::Plus => v,
        Sign::Minus => v.conj(),
    }
}

/// (∫_{Ω_θ} B·(e₁ ± i e_r) g₀ dz∧dz̄, ∫|…|) with dz∧dz̄ = −2i dx1 dr.
pub fn plane_integral(section: &SliceSection, frame: &Frame, field: &VectorExpr, g: &Generator, direction: Sign, radial: usize) -> (C64, f64) {
    let theta = section.theta;
    let e1 = frame.e[0];
    let er = frame.radial_unit(theta);
    let s = direction.value();
    let (v, mag) = section.integrate(radial, |z| {
        let p = frame.inverse_chart(Cylindrical { x1: z.re, r: z.im, theta });
        let b = field.eval(p);
        let along: C64 = (0..3).map(|k| b[k] * C64::new(e1[k], s * er[k])).sum();
        along * planar_generator(g, direction, z, theta)
    });
    (v * C64::new(0.0, -2.0), 2.0 * mag)
}

/// Per-θ plane integrals for a family of generators.
#[derive(Clone, Debug, Serialize)]
pub struct SliceIntegralSet {
    pub direction: Sign,
    pub thetas: Vec<f64>,
    pub generators: Vec<String>,
    /// values[generator][θ]; None where the section is degenerate
    pub values: Vec<Vec<Option<C64>>>,
    /// quadrature noise of each value: max(refinement change, roundoff scale)
    pub floors: Vec<Vec<Option<f64>>>,
    pub skipped: Vec<f64>,
}

impl SliceIntegralSet {
    /// Largest |value| / floor over all entries.
    pub fn max_floor_ratio(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (vs, fs) in self.values.iter().zip(&self.floors) {
            for (v, f) in vs.iter().zip(fs) {
                if let (Some(v), Some(f)) = (v, f) {
                    m = m.max(v.norm() / f.max(f64::MIN_POSITIVE));
                }
            }
        }
        m
    }
}

fn sections(shape: &Shape, frame: &Frame, thetas: &[f64], angles: usize) -> Vec<Option<SliceSection>> {
    thetas.par_iter().map(|&t| SliceSection::new(shape, frame, t, angles).ok()).collect()
}

fn floor_of(coarse: C64, fine: C64, mag: f64) -> f64 {
    (coarse - fine).norm().max(64.0 * f64::EPSILON * mag)
}

pub fn plane_integrals(
    shape: &Shape,
    frame: &Frame,
    field: &VectorExpr,
    generators: &[Generator],
    direction: Sign,
    quad: &SliceQuadrature,
) -> SliceIntegralSet {
    let thetas = section_angles(shape, frame, quad.slices);
    let fine = quad.refined();
    let coarse_sec = sections(shape, frame, &thetas, quad.angles);
    let fine_sec = sections(shape, frame, &thetas, fine.angles);
    let skipped = thetas.iter().zip(&coarse_sec).filter(|(_, s)| s.is_none()).map(|(t, _)| *t).collect();
    let mut values = Vec::new();
    let mut floors = Vec::new();
    for g in generators {
        let row: Vec<(Option<C64>, Option<f64>)> = coarse_sec
            .par_iter()
            .zip(&fine_sec)
            .map(|(c, f)| match (c, f) {
                (Some(c), Some(f)) => {
                    let (v, mag) = plane_integral(c, frame, field, g, direction, quad.radial);
                    let (vf, _) = plane_integral(f, frame, field, g, direction, fine.radial);
                    (Some(v), Some(floor_of(v, vf, mag)))
                }
                _ => (None, None),
            })
            .collect();
        values.push(row.iter().map(|r| r.0).collect());
        floors.push(row.iter().map(|r| r.1).collect());
    }
    SliceIntegralSet { direction, thetas, generators: generators.iter().map(|g| g.label()).collect(), values, floors, skipped }
}

/// ∮_{∂Ω_θ} Ψ g₀ dz (σ = +) or ∮ Ψ ḡ₀ dz̄ (σ = −).
pub fn stokes_boundary_integral(section: &SliceSection, frame: &Frame, psi: &Expr, g: &Generator, direction: Sign) -> Result<C64> {
    if section.radii.len() < 8 {
        return Err(Error::DegenerateSlice(section.theta));
    }
    let theta = section.theta;
    let f = |z: C64| {
        let p = frame.inverse_chart(Cylindrical { x1: z.re, r: z.im, theta });
        psi.eval(p) * planar_generator(g, direction, z, theta)
    };
    Ok(match direction {
        Sign::Plus => section.contour_dz(f),
        Sign::Minus => section.contour_dzbar(f),
    })
}

/// Discrete Stokes check on one section: for B = ∇Ψ and (anti)holomorphic
/// g₀, plane(B) + 2∮Ψg₀dz = 0 (σ = +) and plane(B) − 2∮Ψḡ₀dz̄ = 0 (σ = −).
#[derive(Clone, Debug, Serialize)]
pub struct StokesCheck {
    pub theta: f64,
    pub generator: String,
    pub plane: C64,
    pub contour: C64,
    /// |plane ± 2·contour| / (|plane| + 2|contour|), zero when both vanish
    pub residual: f64,
}

pub fn stokes_check(shape: &Shape, frame: &Frame, psi: &Expr, generators: &[Generator], direction: Sign, quad: &SliceQuadrature) -> Result<Vec<StokesCheck>> {
    let grad = VectorExpr::gradient_of(psi);
    let mut out = Vec::new();
    for theta in section_angles(shape, frame, quad.slices) {
        let sec = match SliceSection::new(shape, frame, theta, quad.angles) {
            Ok(s) => s,
            Err(Error::DegenerateSlice(_)) => continue,
            Err(e) => return Err(e),
        };
        for g in generators {
            let (plane, _) = plane_integral(&sec, frame, &grad, g, direction, quad.radial);
            let contour = stokes_boundary_integral(&sec, frame, psi, g, direction)?;
            let combined = plane + 2.0 * direction.value() * contour;
            let scale = plane.norm() + 2.0 * contour.norm();
            let residual = if scale > 0.0 { combined.norm() / scale } else { 0.0 };
            out.push(StokesCheck { theta, generator: g.label(), plane, contour, residual });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// limit and q identities

#[derive(Clone, Debug)]
enum AmplitudeModel {
    /// Φ₂ on the reference slice; Φ₁ = conj(Φ₂)
    PhiPair { grid: SliceGrid, phi: Vec<C64> },
    /// s^{-1/2}, the closed form used by the exponential solutions
    Closed,
}

/// Leading amplitudes a₀⁽²⁾ = lead·g and conj(a₀⁽¹⁾) = partner of the pair
/// (u₂ with weight σφ, v with −σφ), evaluated pointwise.
#[derive(Clone, Debug)]
pub struct LeadingPair {
    pub sign: Sign,
    frame: Frame,
    model: AmplitudeModel,
}

impl LeadingPair {
    /// e^{Φ₂} and e^{Φ̄₁} from the slice solve.
    pub fn phi_pair(setup: &SliceSetup, sign: Sign) -> LeadingPair {
        let pair = crate::transport::build_phi_pair(setup, Sign::Plus);
        LeadingPair {
            sign,
            frame: setup.frame().clone(),
            model: AmplitudeModel::PhiPair { grid: setup.plane.grid.clone(), phi: pair.plane_phi2 },
        }
    }

    /// s^{-1/2} for both, matching [`crate::transport::a0_exact`].
    pub fn closed(frame: &Frame, sign: Sign) -> LeadingPair {
        LeadingPair { sign, frame: frame.clone(), model: AmplitudeModel::Closed }
    }

    fn plane_phi(&self, c: &Cylindrical) -> C64 {
        match &self.model {
            AmplitudeModel::PhiPair { grid, phi } => grid.interpolate(phi, c.x1, c.r),
            AmplitudeModel::Closed => ZERO,
        }
    }

    /// The T_σ-annihilated factor of a₀⁽²⁾.
    pub fn lead(&self, c: &Cylindrical) -> C64 {
        match (&self.model, self.sign) {
            (AmplitudeModel::Closed, _) => inv_sqrt_s(c.r),
            (_, Sign::Plus) => self.plane_phi(c).exp(),
            (_, Sign::Minus) => self.plane_phi(c).conj().exp(),
        }
    }

    /// conj(a₀⁽¹⁾); it is annihilated by T_σ as well.
    pub fn partner(&self, c: &Cylindrical) -> C64 {
        match self.model {
            AmplitudeModel::Closed => inv_sqrt_s(c.r).conj(),
            // e^{Φ̄₁} coincides with e^{Φ₂} for the conjugate pair
            _ => self.lead(c),
        }
    }

    /// a₀⁽²⁾·conj(a₀⁽¹⁾) at a world point.
    pub fn product(&self, g: &Generator, p: Vec3) -> C64 {
        let c = self.frame.chart(p);
        self.lead(&c) * g.eval(chart_z(&c), c.theta, self.sign) * self.partner(&c)
    }
}

/// ∫_Ω (A⁽²⁾−A⁽¹⁾)·∇(σφ+iψ) a₀⁽²⁾ conj(a₀⁽¹⁾) dx.
pub fn limit_identity(diff_a: &VectorExpr, pair: &LeadingPair, wp: &WeightPair, g: &Generator, rule: &VolumeRule) -> Result<C64> {
    let mut acc = ZERO;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let a = diff_a.eval(*p);
        let grad = wp.complex_gradient(*p, pair.sign)?;
        let dot: C64 = (0..3).map(|k| a[k] * grad[k]).sum();
        acc += dot * pair.product(g, *p) * *w;
    }
    Ok(acc)
}

/// ∫_Ω (q⁽²⁾−q⁽¹⁾) a₀⁽²⁾ conj(a₀⁽¹⁾) dx.
pub fn q_identity(diff_q: &Expr, pair: &LeadingPair, g: &Generator, rule: &VolumeRule) -> C64 {
    rule.integrate(|p| diff_q.eval(p) * pair.product(g, p))
}

/// Value with the quadrature noise floor used for verdicts.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlooredValue {
    pub value: C64,
    pub floor: f64,
}

impl FlooredValue {
    pub fn ratio(&self) -> f64 {
        self.value.norm() / self.floor.max(f64::MIN_POSITIVE)
    }
}

/// Coarse and refined (rule, amplitudes) for floor estimates.
pub struct IdentityQuadrature {
    pub coarse: (VolumeRule, LeadingPair),
    pub fine: (VolumeRule, LeadingPair),
}

impl IdentityQuadrature {
    /// Spectral volume rules of (n, n) and (3n/2, 3n/2) points; `fine` is
    /// normally the Φ-pair of a slice setup with a finer step.
    pub fn new(shape: &Shape, n: usize, coarse: LeadingPair, fine: LeadingPair) -> Self {
        let m = 3 * n / 2;
        IdentityQuadrature { coarse: (VolumeRule::new(shape, n, n), coarse), fine: (VolumeRule::new(shape, m, m), fine) }
    }

    /// Evaluates `f` on both levels; the floor is their difference.
    pub fn floored<F>(&self, f: F) -> Result<FlooredValue>
    where
        F: Fn(&VolumeRule, &LeadingPair) -> Result<C64>,
    {
        let value = f(&self.coarse.0, &self.coarse.1)?;
        let fine = f(&self.fine.0, &self.fine.1)?;
        Ok(FlooredValue { value, floor: (value - fine).norm() })
    }
}

/// Two evaluations of the limit identity for A⁽²⁾−A⁽¹⁾ = ∇Ψ, Ψ|∂Ω = 0,
/// with a first amplitude a = lead·|z|²g/2 that T_σ maps to σ·lead·g.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TwoRoute {
    /// ∫ ∇Ψ·∇Φ a·partner
    pub direct: C64,
    /// −∫ Ψ (T a)·partner after integrating by parts
    pub by_parts: C64,
    pub relative: f64,
}

pub fn two_route_check(psi: &Expr, pair: &LeadingPair, wp: &WeightPair, g: &Generator, rule: &VolumeRule) -> Result<TwoRoute> {
    let grad = psi.gradient();
    let frame = wp.frame();
    let mut direct = ZERO;
    let mut by_parts = ZERO;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let c = frame.chart(*p);
        let z = chart_z(&c);
        let base = pair.lead(&c) * g.eval(z, c.theta, pair.sign) * pair.partner(&c);
        let gp = wp.complex_gradient(*p, pair.sign)?;
        let dot: C64 = (0..3).map(|k| grad[k].eval(*p) * gp[k]).sum();
        direct += dot * base * (0.5 * z.norm_sqr()) * *w;
        by_parts -= psi.eval(*p) * base * pair.sign.value() * *w;
    }
    let relative = (direct - by_parts).norm() / direct.norm().max(by_parts.norm()).max(f64::MIN_POSITIVE);
    Ok(TwoRoute { direct, by_parts, relative })
}

/// `count` admissible viewpoints on a circle of radius `distance` about the
/// centre, in the plane spanned by the first and third axes; ω is tangent
/// to the circle. Inadmissible positions are skipped.
pub fn viewpoint_ring(shape: &Shape, count: usize, distance: f64) -> Vec<Viewpoint> {
    let c = shape.center();
    (0..count)
        .filter_map(|k| {
            let t = 2.0 * PI * k as f64 / count as f64;
            let x0 = add(c, scale([t.sin(), 0.0, -t.cos()], distance));
            Viewpoint::new(shape, x0, [t.cos(), 0.0, t.sin()]).ok()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// main identity and boundary terms

/// Facets of F̃ = {∂νφ ≤ ε}, a neighbourhood of the front face.
pub fn front_neighbourhood(dom: &DiscretizedDomain, wp: &WeightPair, eps: f64) -> Result<Vec<bool>> {
    dom.facets.iter().map(|f| Ok(dot(wp.eval(f.pos)?.grad_phi, f.normal) <= eps)).collect()
}

/// Everything needed to evaluate the main identity for one pair over an h-list.
pub struct PairProblem {
    pub dom: Arc<DiscretizedDomain>,
    pub wp: WeightPair,
    pub pert1: Perturbation,
    pub pert2: Perturbation,
    pub generator: Generator,
    /// F̃ as a facet mask
    pub front: Vec<bool>,
    sys1: NavierSystem,
    builder_u: CgoBuilder,
    builder_v: CgoBuilder,
    family_u: CgoFamily,
    family_v: CgoFamily,
}

/// One h of the main identity. `lhs` is the interior side, `rhs_*` the
/// boundary side split into F̃ and its complement.
#[derive(Clone, Debug, Serialize)]
pub struct MainIdentityEntry {
    pub h: f64,
    pub lhs_a: C64,
    pub lhs_q: C64,
    pub lhs: C64,
    pub rhs_front: C64,
    pub rhs_back: C64,
    pub rhs: C64,
    /// |lhs − rhs| / max(|lhs|, |rhs|)
    pub defect: f64,
    /// |h ∫_{∂Ω∖F̃} ∂ν(−Δw) v̄| with w = u₁ − u₂
    pub back_lap_term: f64,
    /// |h ∫_{∂Ω∖F̃} ∂νw (−Δv̄)|
    pub back_grad_term: f64,
    pub u_residual: f64,
    pub v_residual: f64,
}

impl PairProblem {
    /// u₂ solves the σ = + problem for pert2 with generator `generator`; v
    /// solves the σ = − problem for the adjoint of pert1 with g = 1.
    pub fn new(
        setup: &SliceSetup,
        pert1: &Perturbation,
        pert2: &Perturbation,
        generator: &Generator,
        front_eps: f64,
    ) -> Result<PairProblem> {
        let dom = setup.dom.clone();
        let wp = setup.wp.clone();
        let builder_u = CgoBuilder::new(&dom, &wp, pert2)?;
        let builder_v = CgoBuilder::new(&dom, &wp, &pert1.adjoint())?;
        let family_u = builder_u.family(setup, Sign::Plus, generator)?;
        let family_v = builder_v.family(setup, Sign::Minus, &Generator::one())?;
        let sys1 = NavierSystem::assemble(&dom, pert1)?;
        let front = front_neighbourhood(&dom, &wp, front_eps)?;
        Ok(PairProblem {
            dom,
            wp,
            pert1: pert1.clone(),
            pert2: pert2.clone(),
            generator: generator.clone(),
            front,
            sys1,
            builder_u,
            builder_v,
            family_u,
            family_v,
        })
    }

    pub fn floor(&self) -> f64 {
        self.builder_u.floor.max(self.builder_v.floor)
    }

    /// Both exponential solutions at a common h.
    pub fn solutions(&self, h: f64) -> Result<(CgoSolution, CgoSolution)> {
        let u2 = self.builder_u.solve(&self.family_u, h)?;
        let v = self.builder_v.solve(&self.family_v, u2.h)?;
        if v.h != u2.h {
            let u2 = self.builder_u.solve(&self.family_u, v.h)?;
            return Ok((u2, v));
        }
        Ok((u2, v))
    }

    pub fn main_identity(&self, h: f64) -> Result<MainIdentityEntry> {
        let (u2, v) = self.solutions(h)?;
        let h = u2.h;
        let grad = u2.gradient(&self.wp)?;
        let matched = match_solution(&self.sys1, &u2.u, Some(&grad), &self.pert2)?;
        let dom = &self.dom;
        let (mut lhs_a, mut lhs_q) = (ZERO, ZERO);
        for (idx, &w) in dom.weights.iter().enumerate() {
            if w > 0.0 {
                let p = dom.grid().point(idx);
                let a1 = self.pert1.eval_a(p);
                let a2 = self.pert2.eval_a(p);
                let vb = v.u.values[idx].conj();
                let da: C64 = (0..3).map(|k| (a2[k] - a1[k]) * -I * grad[k].values[idx]).sum();
                let dq = self.pert2.eval_q(p) - self.pert1.eval_q(p);
                lhs_a += da * vb * w;
                lhs_q += dq * u2.u.values[idx] * vb * w;
            }
        }
        let lhs = lhs_a + lhs_q;
        let lap_v = v.u.laplacian()?;
        let (mut rhs_front, mut rhs_back) = (ZERO, ZERO);
        let (mut back_lap, mut back_grad) = (ZERO, ZERO);
        for (i, f) in dom.facets.iter().enumerate() {
            let dw = matched.diff.u.trace_normal(f, Some(ZERO))?;
            let dlw = matched.diff.w.trace_normal(f, Some(ZERO))?;
            let vb = v.u.trace(f)?.conj();
            let lvb = lap_v.trace(f)?.conj();
            let t_lap = dlw * vb * f.weight;
            let t_grad = dw * lvb * f.weight;
            if self.front[i] {
                rhs_front += t_lap + t_grad;
            } else {
                rhs_back += t_lap + t_grad;
                back_lap += t_lap;
                back_grad += t_grad;
            }
        }
        let rhs = rhs_front + rhs_back;
        let scale = lhs.norm().max(rhs.norm());
        let defect = if scale > 0.0 { (lhs - rhs).norm() / scale } else { 0.0 };
        Ok(MainIdentityEntry {
            h,
            lhs_a,
            lhs_q,
            lhs,
            rhs_front,
            rhs_back,
            rhs,
            defect,
            back_lap_term: h * back_lap.norm(),
            back_grad_term: h * back_grad.norm(),
            u_residual: u2.diagnostics.pde_residual,
            v_residual: v.diagnostics.pde_residual,
        })
    }

    /// −i × the limit identity with the closed-form amplitudes of the
    /// exponential solutions; h·lhs tends to this value.
    pub fn limit_value(&self, rule: &VolumeRule) -> Result<C64> {
        let pair = LeadingPair::closed(self.wp.frame(), Sign::Plus);
        let diff = self.pert2.a.sub(&self.pert1.a);
        Ok(-I * limit_identity(&diff, &pair, &self.wp, &self.generator, rule)?)
    }
}

/// Slopes of the scaled back-side boundary terms against h.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub lap: SlopeFit,
    pub grad: SlopeFit,
    pub threshold: f64,
    pub pass: bool,
}

pub fn boundary_decay(entries: &[MainIdentityEntry], threshold: f64) -> Result<DecayFit> {
    if entries.len() < 3 {
        return Err(Error::InsufficientPoints(format!("decay fit needs three h values, got {}", entries.len())));
    }
    let h: Vec<f64> = entries.iter().map(|e| e.h).collect();
    let lap = fit_slope(&h, &entries.iter().map(|e| e.back_lap_term).collect::<Vec<_>>())?;
    let grad = fit_slope(&h, &entries.iter().map(|e| e.back_grad_term).collect::<Vec<_>>())?;
    let pass = lap.slope >= threshold && grad.slope >= threshold;
    Ok(DecayFit { lap, grad, threshold, pass })
}

/// Linear extrapolation of h·lhs to h = 0 against the direct limit value.
#[derive(Clone, Debug, Serialize)]
pub struct LimitConsistency {
    pub scaled_lhs: Vec<C64>,
    pub extrapolated: C64,
    pub direct: C64,
    pub relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn limit_consistency(entries: &[MainIdentityEntry], direct: C64, tolerance: f64) -> Result<LimitConsistency> {
    if entries.len() < 3 {
        return Err(Error::InsufficientPoints(format!("extrapolation needs three h values, got {}", entries.len())));
    }
    let h: Vec<f64> = entries.iter().map(|e| e.h).collect();
    let scaled_lhs: Vec<C64> = entries.iter().map(|e| e.lhs * e.h).collect();
    let re = polyfit(&h, &scaled_lhs.iter().map(|v| v.re).collect::<Vec<_>>(), 1)?;
    let im = polyfit(&h, &scaled_lhs.iter().map(|v| v.im).collect::<Vec<_>>(), 1)?;
    let extrapolated = C64::new(re[0], im[0]);
    let relative_error = (extrapolated - direct).norm() / direct.norm().max(f64::MIN_POSITIVE);
    Ok(LimitConsistency { scaled_lhs, extrapolated, direct, relative_error, tolerance, pass: relative_error <= tolerance })
}

// ---------------------------------------------------------------------------
// distinguisher

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DataSlot {
    /// basis function prescribed as u
    Value,
    /// basis function prescribed as Δu
    Laplacian,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FluxBlock {
    /// ∂νu
    Normal,
    /// ∂νΔu
    LaplacianNormal,
}

/// Boundary datum whose response differs most between the two maps.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Witness {
    pub column: usize,
    pub slot: DataSlot,
    pub exponents: [u32; 3],
    pub block: FluxBlock,
    /// ‖(M₁ − M₂)e_j‖ / max(‖M₁‖, ‖M₂‖) in that block
    pub relative_gap: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Indistinguishable,
    Distinct { witness: Witness },
}

#[derive(Clone, Debug, Serialize)]
pub struct Distinction {
    pub gap: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

fn weighted_block(m: &DnMap, b: usize) -> Vec<Vec<C64>> {
    let k = m.facets.len();
    m.columns.iter().map(|c| (0..k).map(|i| c[b * k + i] * m.sqrt_weights[i]).collect()).collect()
}

/// Compares two maps sampled on the same data and facets.
pub fn distinguisher(a: &DnMap, b: &DnMap, tolerance: f64) -> Result<Distinction> {
    if a.basis != b.basis || a.facets != b.facets || a.facet_count != b.facet_count {
        return Err(Error::BasisMismatch("maps sampled on different data or facets".into()));
    }
    let m = a.basis.len();
    let mut gap: f64 = 0.0;
    let mut best: Option<Witness> = None;
    for (blk, block) in [FluxBlock::Normal, FluxBlock::LaplacianNormal].into_iter().enumerate() {
        let ba = weighted_block(a, blk);
        let bb = weighted_block(b, blk);
        let diff: Vec<Vec<C64>> = ba.iter().zip(&bb).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
        let scale = spectral_norm(&ba).max(spectral_norm(&bb));
        if scale == 0.0 {
            continue;
        }
        gap = gap.max(spectral_norm(&diff) / scale);
        for (j, col) in diff.iter().enumerate() {
            let rel = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / scale;
            if best.as_ref().map_or(true, |w| rel > w.relative_gap) {
                best = Some(Witness {
                    column: j,
                    slot: if j < m { DataSlot::Value } else { DataSlot::Laplacian },
                    exponents: a.basis.exponents[j % m],
                    block,
                    relative_gap: rel,
                });
            }
        }
    }
    let verdict = match best {
        Some(witness) if gap > tolerance => Verdict::Distinct { witness },
        _ => Verdict::Indistinguishable,
    };
    Ok(Distinction { gap, tolerance, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;
    use crate::transport::SliceOptions;

    fn ball() -> Shape {
        Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 }
    }

    fn wp() -> WeightPair {
        WeightPair::new(Viewpoint::standard(&ball()).unwrap(), 2.0)
    }

    #[test]
    fn section_of_ball_is_a_disk() {
        let shape = ball();
        let w = wp();
        let frame = w.frame();
        for theta in section_angles(&shape, frame, 5) {
            let sec = SliceSection::new(&shape, frame, theta, 64).unwrap();
            // section of the sphere by a half-plane through the x1 axis
            let l = frame.to_local(shape.center());
            let er = [0.0, theta.cos(), theta.sin()];
            let d = l[1] * er[1] + l[2] * er[2];
            let off2 = l[1] * l[1] + l[2] * l[2] - d * d;
            let area = PI * (1.0 - off2).max(0.0);
            assert!((sec.area() - area).abs() < 1e-10 * area.max(1.0), "{} vs {area}", sec.area());
        }
    }

    #[test]
    fn closed_contour_integrates_dz_to_zero() {
        let shape = ball();
        let w = wp();
        let frame = w.frame();
        let theta = section_angles(&shape, frame, 3)[1];
        let sec = SliceSection::new(&shape, frame, theta, 64).unwrap();
        assert!(sec.contour_dz(|_| C64::new(1.0, 0.0)).norm() < 1e-12);
        // ∮ z̄ dz = 2i·area
        let v = sec.contour_dz(|z| z.conj());
        assert!((v - C64::new(0.0, 2.0 * sec.area())).norm() < 1e-10);
    }

    #[test]
    fn constant_field_gives_area() {
        let shape = ball();
        let w = wp();
        let frame = w.frame();
        let c = [C64::new(0.3, 0.0), C64::new(-0.2, 0.1), C64::new(0.5, 0.0)];
        let field = VectorExpr::constant(c);
        let quad = SliceQuadrature { slices: 4, ..Default::default() };
        let set = plane_integrals(&shape, frame, &field, &[Generator::one()], Sign::Plus, &quad);
        for (t, v) in set.thetas.iter().zip(&set.values[0]) {
            let sec = SliceSection::new(&shape, frame, *t, quad.angles).unwrap();
            let e1 = frame.e[0];
            let er = frame.radial_unit(*t);
            let along: C64 = (0..3).map(|k| c[k] * C64::new(e1[k], er[k])).sum();
            let expect = along * C64::new(0.0, -2.0) * sec.area();
            assert!((v.unwrap() - expect).norm() < 1e-11, "{v:?} {expect}");
        }
    }

    #[test]
    fn gradient_of_vanishing_potential_integrates_to_zero() {
        let shape = ball();
        let w = wp();
        let frame = w.frame();
        let psi = Expr::parse("(1 - x^2 - y^2 - (z-4)^2)*exp(x)*(1+y)").unwrap();
        let grad = VectorExpr::gradient_of(&psi);
        let gens = crate::transport::holomorphic_family(3, 0);
        for dir in [Sign::Plus, Sign::Minus] {
            let set = plane_integrals(&shape, frame, &grad, &gens, dir, &SliceQuadrature::default());
            assert!(set.skipped.is_empty());
            assert!(set.max_floor_ratio() < 10.0, "{}", set.max_floor_ratio());
        }
    }

    #[test]
    fn stokes_reduction_holds_for_nonvanishing_potential() {
        let shape = ball();
        let w = wp();
        let psi = Expr::parse("sin(x)*y + z^2").unwrap();
        let gens = crate::transport::holomorphic_family(2, 0);
        for dir in [Sign::Plus, Sign::Minus] {
            let checks = stokes_check(&shape, w.frame(), &psi, &gens, dir, &SliceQuadrature { slices: 4, ..Default::default() }).unwrap();
            for c in checks {
                assert!(c.residual < 1e-10, "{c:?}");
            }
        }
    }

    #[test]
    fn two_routes_agree_with_closed_amplitudes() {
        let shape = ball();
        let w = wp();
        let psi = Expr::parse("(1 - x^2 - y^2 - (z-4)^2)*(1 + 0.5*x - y*z/4)").unwrap();
        let rule = VolumeRule::new(&shape, 20, 20);
        for sign in [Sign::Plus, Sign::Minus] {
            let pair = LeadingPair::closed(w.frame(), sign);
            for g in [Generator::one(), Generator::monomial(2, 1)] {
                let t = two_route_check(&psi, &pair, &w, &g, &rule).unwrap();
                assert!(t.relative < 1e-8, "{t:?}");
            }
        }
    }

    #[test]
    fn two_routes_agree_with_phi_pair() {
        let shape = ball();
        let dom = Arc::new(DiscretizedDomain::new(&DomainSpec { shape: shape.clone(), grid_n: 33 }).unwrap());
        let w = wp();
        let setup = SliceSetup::new(&dom, &w, SliceOptions::default()).unwrap();
        let psi = Expr::parse("(1 - x^2 - y^2 - (z-4)^2)*(1 + 0.5*x)").unwrap();
        let rule = VolumeRule::new(&shape, 20, 20);
        let pair = LeadingPair::phi_pair(&setup, Sign::Plus);
        let t = two_route_check(&psi, &pair, &w, &Generator::monomial(1, 0), &rule).unwrap();
        assert!(t.relative < 1e-3, "{t:?}");
    }

    #[test]
    fn identical_coefficients_give_zero() {
        let shape = ball();
        let w = wp();
        let rule = VolumeRule::new(&shape, 12, 12);
        let pair = LeadingPair::closed(w.frame(), Sign::Plus);
        let g = Generator::monomial(1, 0);
        assert_eq!(q_identity(&Expr::zero(), &pair, &g, &rule), ZERO);
        assert_eq!(limit_identity(&VectorExpr::zero(), &pair, &w, &g, &rule).unwrap(), ZERO);
    }

    #[test]
    fn ring_viewpoints_are_admissible() {
        let vps = viewpoint_ring(&ball(), 8, 4.0);
        assert_eq!(vps.len(), 8);
        assert!(vps[0].x0.iter().all(|v| v.abs() < 1e-12));
    }
}
