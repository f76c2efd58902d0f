//! Empirical Carleman constants. Each estimate is measured as the ratio of
//! its two sides over a random test ensemble; a Carleman estimate holds with
//! an h-uniform constant when the per-h minimum ratio stays bounded below.

use crate::discretization::{deep_mask, ComplexField};
use crate::forward::{apply_operator, Perturbation};
use crate::geometry::{DiscretizedDomain, Shape, GHOST_LAYERS};
use crate::quadrature::smooth_step;
use crate::vec3::{dot, norm, sub};
use crate::weights::WeightPair;
use crate::{Error, Result, Vec3, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    /// ‖e^{φ/h}(−h²Δ)e^{−φ/h}u‖ ≥ (h/C)‖u‖_{H²scl}, u compactly supported
    InteriorLaplacian,
    /// ‖e^{φ/h}(h²Δ)²e^{−φ/h}u‖ ≥ (h²/C)‖u‖_{H⁴scl}
    InteriorBilaplacian,
    /// the same with h⁴(A·D + q) added
    InteriorPerturbed,
    /// Laplacian estimate with ∂Ω± flux terms, u|∂Ω = 0
    BoundaryLaplacian,
    /// perturbed biharmonic estimate with flux terms, u = Δu = 0 on ∂Ω
    BoundaryPerturbed,
}

impl Estimate {
    pub const ALL: [Estimate; 5] = [
        Estimate::InteriorLaplacian,
        Estimate::InteriorBilaplacian,
        Estimate::InteriorPerturbed,
        Estimate::BoundaryLaplacian,
        Estimate::BoundaryPerturbed,
    ];

    pub fn is_boundary(self) -> bool {
        matches!(self, Estimate::BoundaryLaplacian | Estimate::BoundaryPerturbed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimate::InteriorLaplacian => "interior_laplacian",
            Estimate::InteriorBilaplacian => "interior_bilaplacian",
            Estimate::InteriorPerturbed => "interior_perturbed",
            Estimate::BoundaryLaplacian => "boundary_laplacian",
            Estimate::BoundaryPerturbed => "boundary_perturbed",
        }
    }
}

/// e^{σφ/h} on the grid.
fn weight_field(dom: &Arc<DiscretizedDomain>, wp: &WeightPair, h: f64, sigma: f64) -> Result<ComplexField> {
    ComplexField::try_from_fn(dom, GHOST_LAYERS, |p| Ok(C64::new((sigma * wp.eval(p)?.phi / h).exp(), 0.0)))
}

fn check_collar(u: &ComplexField) -> Result<()> {
    let deep = deep_mask(&u.dom, 3);
    for (i, v) in u.values.iter().enumerate() {
        if u.valid[i] && !deep[i] && *v != C64::new(0.0, 0.0) {
            return Err(Error::Invalid("test function does not vanish on the 3-cell collar".into()));
        }
    }
    Ok(())
}

/// e^{φ/h}(−h²Δ)e^{−φ/h}u.
pub fn conjugated_laplacian(u: &ComplexField, wp: &WeightPair, h: f64) -> Result<ComplexField> {
    let up = weight_field(&u.dom, wp, h, 1.0)?;
    let down = weight_field(&u.dom, wp, h, -1.0)?;
    Ok(u.mul(&down).laplacian()?.mul(&up).scale(C64::new(-h * h, 0.0)))
}

/// e^{φ/h}h⁴L e^{−φ/h}u; the zero perturbation gives the biharmonic case.
pub fn conjugated_operator(u: &ComplexField, pert: &Perturbation, wp: &WeightPair, h: f64) -> Result<ComplexField> {
    let up = weight_field(&u.dom, wp, h, 1.0)?;
    let down = weight_field(&u.dom, wp, h, -1.0)?;
    Ok(apply_operator(&u.mul(&down), pert)?.mul(&up).scale(C64::new(h.powi(4), 0.0)))
}

/// ‖e^{φ/h}(−h²Δ)e^{−φ/h}u‖ / (h‖u‖_{H²scl}).
pub fn laplacian_ratio(u: &ComplexField, wp: &WeightPair, h: f64) -> Result<f64> {
    check_collar(u)?;
    let den = h * u.scl_norm(2, h)?;
    if den == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(conjugated_laplacian(u, wp, h)?.l2_norm()? / den)
}

/// ‖L_φ u‖ / (h²‖u‖_{H⁴scl}) with L_φ = e^{φ/h}h⁴L e^{−φ/h}.
pub fn interior_ratio(u: &ComplexField, pert: &Perturbation, wp: &WeightPair, h: f64) -> Result<f64> {
    check_collar(u)?;
    let den = h * h * u.scl_norm(4, h)?;
    if den == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(conjugated_operator(u, pert, wp, h)?.l2_norm()? / den)
}

/// A test function with vanishing Navier data, with its exact normal
/// derivative at every facet.
pub struct NavierZero {
    pub field: ComplexField,
    pub normal_flux: Vec<C64>,
}

/// Both sides of a boundary estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Sides {
    pub lhs: f64,
    pub rhs: f64,
}

impl Sides {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }
}

/// √(∓∂νφ) e^{−φ/h}-weighted L² norms of a facet quantity over ∂Ω₋ and ∂Ω₊.
/// Facets with ∂νφ < 0 form ∂Ω₋, the rest ∂Ω₊.
fn split_flux_norms(dom: &DiscretizedDomain, wp: &WeightPair, h: f64, vals: &[C64]) -> Result<(f64, f64)> {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (f, v) in dom.facets.iter().zip(vals) {
        let w = wp.eval(f.pos)?;
        let dn = dot(w.grad_phi, f.normal);
        let t = (-w.phi / h).exp() * v.norm();
        let contrib = dn.abs() * t * t * f.weight;
        if dn < 0.0 {
            minus += contrib;
        } else {
            plus += contrib;
        }
    }
    Ok((minus.sqrt(), plus.sqrt()))
}

/// Sides of the boundary Laplacian estimate:
/// ‖e^{−φ/h}(−h²Δ)u‖ + h^{3/2}‖·∂νu‖₋ against h‖e^{−φ/h}u‖_{H¹scl} + h^{3/2}‖·∂νu‖₊.
pub fn boundary_laplacian_sides(u: &NavierZero, wp: &WeightPair, h: f64) -> Result<Sides> {
    let f = &u.field;
    let down = weight_field(&f.dom, wp, h, -1.0)?;
    let op = f.laplacian()?.mul(&down).scale(C64::new(-h * h, 0.0)).l2_norm()?;
    let (fm, fp) = split_flux_norms(&f.dom, wp, h, &u.normal_flux)?;
    let weighted = f.mul(&down).scl_norm(1, h)?;
    let h32 = h.powf(1.5);
    Ok(Sides { lhs: op + h32 * fm, rhs: h * weighted + h32 * fp })
}

/// Sides of the boundary estimate for the perturbed operator, with flux
/// terms in ∂ν(−h²Δu) (weight h^{3/2}) and ∂νu (weight h^{5/2}).
pub fn boundary_ratio(u: &NavierZero, pert: &Perturbation, wp: &WeightPair, h: f64) -> Result<Sides> {
    let f = &u.field;
    let dom = &f.dom;
    let down = weight_field(dom, wp, h, -1.0)?;
    let op = apply_operator(f, pert)?.mul(&down).scale(C64::new(h.powi(4), 0.0)).l2_norm()?;
    let lap = f.laplacian()?;
    let lap_flux: Vec<C64> = dom
        .facets
        .iter()
        .map(|fc| Ok(lap.trace_normal(fc, Some(C64::new(0.0, 0.0)))? * -h * h))
        .collect::<Result<_>>()?;
    let (lm, lp) = split_flux_norms(dom, wp, h, &lap_flux)?;
    let (fm, fp) = split_flux_norms(dom, wp, h, &u.normal_flux)?;
    let weighted = f.mul(&down).scl_norm(1, h)?;
    let (h32, h52) = (h.powf(1.5), h.powf(2.5));
    Ok(Sides { lhs: op + h32 * lm + h52 * fm, rhs: h * h * weighted + h32 * lp + h52 * fp })
}

// ---------------------------------------------------------------------------
// ensembles

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleOptions {
    /// plane waves per member
    pub modes: usize,
    /// largest wavenumber of the plane waves (clipped to the grid)
    pub max_wavenumber: f64,
    /// largest μ in the modulation e^{iμψ/h}
    pub max_modulation: f64,
    pub seed: u64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions { modes: 4, max_wavenumber: 4.0, max_modulation: 1.5, seed: 0 }
    }
}

/// Compact radial profile of a test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bump {
    pub center: Vec3,
    pub radius: f64,
    /// (1 − t)^power for power ≥ 5 (C⁴ at the rim), the C^∞ bump for 0
    pub power: u32,
}

impl Bump {
    fn eval(&self, p: Vec3) -> f64 {
        let d = sub(p, self.center);
        let t = dot(d, d) / (self.radius * self.radius);
        if t >= 1.0 {
            0.0
        } else if self.power == 0 {
            (1.0 - 1.0 / (1.0 - t)).exp()
        } else {
            (1.0 - t).powi(self.power as i32)
        }
    }
}

/// One random test profile: Σ c_j e^{ik_j·x} times e^{(λφ + iμψ)/h}, with an
/// optional compactly supported bump.
#[derive(Clone, Debug, Serialize)]
pub struct Member {
    pub waves: Vec<(C64, Vec3)>,
    pub lambda: f64,
    pub mu: f64,
    pub bump: Option<Bump>,
}

/// Radius of a ball about the centre contained in Ω (sampled).
fn inner_radius(shape: &Shape) -> f64 {
    let mut r = f64::INFINITY;
    let n = 24;
    for i in 0..=n {
        let pol = std::f64::consts::PI * i as f64 / n as f64;
        for j in 0..2 * n {
            let az = std::f64::consts::PI * j as f64 / n as f64;
            r = r.min(shape.radius_along([pol.sin() * az.cos(), pol.sin() * az.sin(), pol.cos()]));
        }
    }
    0.98 * r
}

impl Member {
    /// Member `index` of the ensemble; members depend only on (seed, index),
    /// so a larger ensemble extends a smaller one.
    pub fn generate(options: &EnsembleOptions, index: usize, dom: &DiscretizedDomain, interior: bool) -> Member {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(index as u64 + if interior { 0 } else { 1 << 32 });
        let kmax = options.max_wavenumber.min(std::f64::consts::PI / (8.0 * dom.dx()));
        let count = rng.gen_range(1..=options.modes.max(1));
        let waves = (0..count)
            .map(|_| {
                let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let u = crate::geometry::random_unit(&mut rng);
                let k = kmax * rng.gen::<f64>();
                (c, [u[0] * k, u[1] * k, u[2] * k])
            })
            .collect();
        // the infimum of the ratio sits on the characteristic set ξ = ±∇ψ, so a
        // quarter of the draws land there exactly and another quarter at ξ = 0
        let mu = match rng.gen_range(0..4) {
            0 => 1.0,
            1 => -1.0,
            2 => 0.0,
            _ => options.max_modulation * rng.gen_range(-1.0..1.0),
        };
        let (lambda, bump) = if interior {
            let shape = dom.shape();
            let big = inner_radius(shape);
            // the depth-3 cube stencil plus the irregular layer reach about 3√3 + 1 cells
            let collar = 7.0 * dom.dx();
            // wide smooth bumps carry the smallest ratios, so half of them fill the room
            let u = crate::geometry::random_unit(&mut rng);
            let off = if rng.gen_bool(0.5) { 0.0 } else { 0.25 * (big - collar).max(0.0) * rng.gen::<f64>() };
            let center = crate::vec3::add(shape.center(), crate::vec3::scale(u, off));
            let room = (big - off - collar).max(0.0);
            let radius = if rng.gen_bool(0.5) { room } else { room * rng.gen_range(0.5..1.0) };
            let power = [0, 5, 6, 8][rng.gen_range(0..4)];
            (0.0, Some(Bump { center, radius, power }))
        } else {
            // λ = 1 makes e^{−φ/h}u free of exponential size, the extremal case
            let lambda = if rng.gen_bool(0.5) { 1.0 } else { rng.gen::<f64>() };
            (lambda, None)
        };
        Member { waves, lambda, mu, bump }
    }

    /// Profile F and ∇F (without the bump).
    fn profile(&self, wp: &WeightPair, h: f64, p: Vec3) -> Result<(C64, [C64; 3])> {
        let w = wp.eval(p)?;
        let mut s = C64::new(0.0, 0.0);
        let mut g = [C64::new(0.0, 0.0); 3];
        for (c, k) in &self.waves {
            let e = c * C64::new(0.0, dot(*k, p)).exp();
            s += e;
            for d in 0..3 {
                g[d] += e * I * k[d];
            }
        }
        let m = ((self.lambda * w.phi + I * self.mu * w.psi) / h).exp();
        let mut grad = [C64::new(0.0, 0.0); 3];
        for d in 0..3 {
            let dm = m * (self.lambda * w.grad_phi[d] + I * self.mu * w.grad_psi[d]) / h;
            grad[d] = g[d] * m + s * dm;
        }
        Ok((s * m, grad))
    }

    /// Compactly supported interior test function on the grid.
    pub fn interior_field(&self, dom: &Arc<DiscretizedDomain>, wp: &WeightPair, h: f64) -> Result<ComplexField> {
        let bump = self.bump.ok_or_else(|| Error::Invalid("member has no bump".into()))?;
        if bump.radius <= 2.0 * dom.dx() {
            return Err(Error::Invalid("grid too coarse for a compactly supported test function".into()));
        }
        ComplexField::try_from_fn(dom, GHOST_LAYERS, |p| {
            let b = bump.eval(p);
            if b == 0.0 {
                return Ok(C64::new(0.0, 0.0));
            }
            Ok(self.profile(wp, h, p)?.0 * b)
        })
    }

    /// u = dF + d²G with G chosen so that Δu = 0 on ∂Ω; d is the closed-form
    /// defining function of the shape.
    pub fn navier_zero(&self, dom: &Arc<DiscretizedDomain>, wp: &WeightPair, h: f64) -> Result<NavierZero> {
        let shape = dom.shape();
        let dc = shape
            .defining_function(shape.center())
            .ok_or_else(|| Error::Invalid("boundary ensemble needs a closed-form defining function".into()))?
            .0;
        let g_of = |p: Vec3| -> Result<(C64, C64, f64, Vec3, f64)> {
            let (d, gd, ld) = shape.defining_function(p).unwrap();
            let (f, gf) = self.profile(wp, h, p)?;
            let chi = 1.0 - smooth_step((d / dc - 0.3) / 0.4);
            let mixed: C64 = (0..3).map(|k| gf[k] * gd[k]).sum();
            let n2 = dot(gd, gd);
            let g = if chi > 0.0 { -chi * (f * ld + 2.0 * mixed) / (2.0 * n2) } else { C64::new(0.0, 0.0) };
            Ok((f, g, d, gd, ld))
        };
        let field = ComplexField::try_from_fn(dom, GHOST_LAYERS, |p| {
            let (f, g, d, _, _) = g_of(p)?;
            Ok(d * f + d * d * g)
        })?;
        let mut normal_flux = Vec::with_capacity(dom.facets.len());
        let mut worst: f64 = 0.0;
        for fc in &dom.facets {
            let (f, g, d, gd, ld) = g_of(fc.pos)?;
            let (_, gf) = self.profile(wp, h, fc.pos)?;
            let mixed: C64 = (0..3).map(|k| gf[k] * gd[k]).sum();
            let scale = (f * ld).norm() + 2.0 * mixed.norm() + f64::MIN_POSITIVE;
            let trace = (d * f + d * d * g).norm() / (f.norm() * norm(gd)).max(f64::MIN_POSITIVE);
            let lap_trace = (f * ld + 2.0 * mixed + 2.0 * dot(gd, gd) * g).norm() / scale;
            worst = worst.max(trace).max(lap_trace);
            normal_flux.push(f * dot(gd, fc.normal));
        }
        if worst > 1e-10 {
            return Err(Error::BcViolated(format!("Navier trace {worst:.2e}")));
        }
        Ok(NavierZero { field, normal_flux })
    }
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Clone, Debug, Serialize)]
pub struct CarlemanReport {
    pub estimate: Estimate,
    pub h_list: Vec<f64>,
    /// per-h minimum ratio over the ensemble
    pub minima: Vec<f64>,
    /// ensemble index attaining each minimum
    pub argmin: Vec<usize>,
    pub medians: Vec<f64>,
    pub ensemble_size: usize,
    pub ensemble: EnsembleOptions,
    /// max/min of the per-h minima
    pub spread: f64,
    /// min over h of the minima ≥ ½ × minimum at the largest h
    pub pass: bool,
}

fn member_ratio(
    estimate: Estimate,
    member: &Member,
    dom: &Arc<DiscretizedDomain>,
    pert: &Perturbation,
    wp: &WeightPair,
    h: f64,
) -> Result<f64> {
    match estimate {
        Estimate::InteriorLaplacian => laplacian_ratio(&member.interior_field(dom, wp, h)?, wp, h),
        Estimate::InteriorBilaplacian => interior_ratio(&member.interior_field(dom, wp, h)?, &Perturbation::zero(), wp, h),
        Estimate::InteriorPerturbed => interior_ratio(&member.interior_field(dom, wp, h)?, pert, wp, h),
        Estimate::BoundaryLaplacian => Ok(boundary_laplacian_sides(&member.navier_zero(dom, wp, h)?, wp, h)?.ratio()),
        Estimate::BoundaryPerturbed => Ok(boundary_ratio(&member.navier_zero(dom, wp, h)?, pert, wp, h)?.ratio()),
    }
}

/// Per-h ratio statistics of one estimate. `h_list` is used in the given
/// order; the verdict compares against its largest entry.
pub fn sweep(
    dom: &Arc<DiscretizedDomain>,
    wp: &WeightPair,
    pert: &Perturbation,
    estimate: Estimate,
    h_list: &[f64],
    size: usize,
    options: &EnsembleOptions,
) -> Result<CarlemanReport> {
    if h_list.len() < 2 || size == 0 {
        return Err(Error::InsufficientPoints(format!("sweep over {} h values with {size} members", h_list.len())));
    }
    let members: Vec<Member> = (0..size).map(|j| Member::generate(options, j, dom, !estimate.is_boundary())).collect();
    let mut minima = Vec::with_capacity(h_list.len());
    let mut medians = Vec::with_capacity(h_list.len());
    let mut argmin = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let mut ratios: Vec<f64> = members
            .par_iter()
            .map(|m| member_ratio(estimate, m, dom, pert, wp, h))
            .collect::<Result<Vec<f64>>>()?;
        if ratios.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("{} ratio at h = {h}", estimate.name())));
        }
        argmin.push((0..ratios.len()).min_by(|&a, &b| ratios[a].total_cmp(&ratios[b])).unwrap());
        ratios.sort_by(f64::total_cmp);
        minima.push(ratios[0]);
        medians.push(ratios[ratios.len() / 2]);
    }
    let largest = (0..h_list.len()).max_by(|&a, &b| h_list[a].total_cmp(&h_list[b])).unwrap();
    let lo = minima.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = minima.iter().cloned().fold(0.0, f64::max);
    Ok(CarlemanReport {
        estimate,
        h_list: h_list.to_vec(),
        pass: lo >= 0.5 * minima[largest],
        spread: hi / lo,
        minima,
        argmin,
        medians,
        ensemble_size: size,
        ensemble: options.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Viewpoint};

    fn setup(n: usize) -> (Arc<DiscretizedDomain>, WeightPair) {
        let shape = Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 };
        let dom = Arc::new(DiscretizedDomain::new(&DomainSpec { shape: shape.clone(), grid_n: n }).unwrap());
        (dom, WeightPair::new(Viewpoint::standard(&shape).unwrap(), 2.0))
    }

    #[test]
    fn bump_ratio_is_finite_and_positive() {
        let (dom, wp) = setup(33);
        let m = Member::generate(&EnsembleOptions::default(), 0, &dom, true);
        let u = m.interior_field(&dom, &wp, 0.4).unwrap();
        let r = interior_ratio(&u, &Perturbation::zero(), &wp, 0.4).unwrap();
        assert!(r.is_finite() && r > 0.0);
        let r = laplacian_ratio(&u, &wp, 0.4).unwrap();
        assert!(r.is_finite() && r > 0.0);
    }

    #[test]
    fn zero_field_is_rejected() {
        let (dom, wp) = setup(21);
        let u = ComplexField::from_fn(&dom, GHOST_LAYERS, |_| C64::new(0.0, 0.0));
        assert!(matches!(interior_ratio(&u, &Perturbation::zero(), &wp, 0.4), Err(Error::ZeroField)));
    }

    #[test]
    fn boundary_members_have_zero_navier_data() {
        let (dom, wp) = setup(21);
        for j in 0..4 {
            let m = Member::generate(&EnsembleOptions::default(), j, &dom, false);
            let nz = m.navier_zero(&dom, &wp, 0.3).unwrap();
            let s = boundary_ratio(&nz, &Perturbation::zero(), &wp, 0.3).unwrap();
            assert!(s.lhs > 0.0 && s.rhs > 0.0);
        }
    }

    #[test]
    fn flux_sets_partition_the_boundary() {
        let (dom, wp) = setup(21);
        let ones = vec![C64::new(1.0, 0.0); dom.facets.len()];
        let (m, p) = split_flux_norms(&dom, &wp, 1e6, &ones).unwrap();
        let all: f64 = dom.facets.iter().map(|f| dot(wp.eval(f.pos).unwrap().grad_phi, f.normal).abs() * f.weight).sum();
        // e^{−φ/h} → 1 for huge h
        assert!((m * m + p * p - all).abs() < 1e-4 * all);
    }

    #[test]
    fn members_are_prefix_stable() {
        let (dom, _) = setup(21);
        let opts = EnsembleOptions { seed: 7, ..Default::default() };
        let a = Member::generate(&opts, 3, &dom, true);
        let b = Member::generate(&opts, 3, &dom, true);
        assert_eq!(a.waves, b.waves);
        assert_eq!(a.bump, b.bump);
        let c = Member::generate(&opts, 4, &dom, true);
        assert_ne!(a.waves, c.waves);
    }

    #[test]
    fn larger_ensemble_never_raises_minima() {
        let (dom, wp) = setup(33);
        let opts = EnsembleOptions::default();
        let hs = [0.5, 0.4];
        let small = sweep(&dom, &wp, &Perturbation::zero(), Estimate::InteriorLaplacian, &hs, 3, &opts).unwrap();
        let big = sweep(&dom, &wp, &Perturbation::zero(), Estimate::InteriorLaplacian, &hs, 6, &opts).unwrap();
        for (a, b) in small.minima.iter().zip(&big.minima) {
            assert!(b <= a);
        }
        assert_eq!(small.minima.len(), 2);
    }
}
