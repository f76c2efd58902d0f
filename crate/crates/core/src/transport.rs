//! Transport operator, plane-slice ∂_z̄ solvers and the amplitudes of the
//! exponential solutions.
//!
//! Chart: z = x1 + i r about the singular axis, θ the angle in the plane
//! orthogonal to it, s = z − z̄ = 2ir. In these coordinates
//! `T₊ = (2/z)(∂_z̄ − 1/(2s))` and `T₋ = −(2/z̄)(∂_z + 1/(2s))`, so
//! `T₊(s^{-1/2} b) = (2/z) s^{-1/2} ∂_z̄ b` and likewise for `T₋` with ∂_z.

use crate::discretization::ComplexField;
use crate::expr::VectorExpr;
use crate::geometry::{Cylindrical, DiscretizedDomain, Frame, GHOST_LAYERS};
use crate::quadrature::{lagrange_equispaced, smooth_step, Chebyshev};
use crate::vec3::dot;
use crate::weights::{Sign, WeightPair};
use crate::{Error, Result, Vec3, C64};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// s^{-1/2} on the principal branch, s = 2ir.
pub fn inv_sqrt_s(r: f64) -> C64 {
    C64::from_polar((2.0 * r).powf(-0.5), -0.25 * PI)
}

pub fn chart_z(c: &Cylindrical) -> C64 {
    C64::new(c.x1, c.r)
}

/// `T f = ∇Φ·∇f + ½ΔΦ f` with analytic weights and centred-stencil
/// gradients. Nodes on the singular axis are left invalid.
pub fn t_apply(f: &ComplexField, wp: &WeightPair, sign: Sign) -> Result<ComplexField> {
    let g = f.gradient()?;
    let grid = f.dom.grid();
    let mut out = ComplexField::zeros(&f.dom);
    let vals: Vec<Option<C64>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if !(g[0].valid[idx] && g[1].valid[idx] && g[2].valid[idx] && f.valid[idx]) {
                return None;
            }
            let p = grid.point(idx);
            let grad = wp.complex_gradient(p, sign).ok()?;
            let lap = wp.complex_laplacian(p, sign).ok()?;
            let mut t = 0.5 * lap * f.values[idx];
            for k in 0..3 {
                t += grad[k] * g[k].values[idx];
            }
            Some(t)
        })
        .collect();
    for (idx, v) in vals.into_iter().enumerate() {
        if let Some(v) = v {
            out.values[idx] = v;
            out.valid[idx] = true;
        }
    }
    Ok(out)
}

/// Chart form of T at a point, with centred differences of step `step`
/// along e1 and e_r for the ∂_z̄ (σ = +) or ∂_z (σ = −) derivative.
pub fn t_cylindrical<F>(f: &F, frame: &Frame, sign: Sign, p: Vec3, step: f64) -> C64
where
    F: Fn(Vec3) -> C64 + ?Sized,
{
    let c = frame.chart(p);
    let z = chart_z(&c);
    let s = C64::new(0.0, 2.0 * c.r);
    let er = frame.radial_unit(c.theta);
    let shifted = |d: Vec3, t: f64| f([p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]]);
    let d1 = (shifted(frame.e[0], step) - shifted(frame.e[0], -step)) / (2.0 * step);
    let dr = (shifted(er, step) - shifted(er, -step)) / (2.0 * step);
    let fv = f(p);
    match sign {
        Sign::Plus => (2.0 / z) * (0.5 * (d1 + I * dr) - fv / (2.0 * s)),
        Sign::Minus => -(2.0 / z.conj()) * (0.5 * (d1 - I * dr) + fv / (2.0 * s)),
    }
}

/// Uniform node grid on a rectangle of the (x1, r) half-plane.
#[derive(Clone, Debug, Serialize)]
pub struct SliceGrid {
    pub x1_lo: f64,
    pub r_lo: f64,
    pub step: f64,
    pub nx: usize,
    pub nr: usize,
}

impl SliceGrid {
    pub fn len(&self) -> usize {
        self.nx * self.nr
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nr + j
    }

    pub fn z(&self, i: usize, j: usize) -> C64 {
        C64::new(self.x1_lo + i as f64 * self.step, self.r_lo + j as f64 * self.step)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nx).flat_map(move |i| (0..self.nr).map(move |j| (i, j)))
    }

    /// Centred ∂_z̄ = ½(∂x1 + i∂r); zero on the outermost ring.
    pub fn dbar(&self, v: &[C64]) -> Vec<C64> {
        self.wirtinger(v, 1.0)
    }

    /// Centred ∂_z = ½(∂x1 − i∂r); zero on the outermost ring.
    pub fn dz(&self, v: &[C64]) -> Vec<C64> {
        self.wirtinger(v, -1.0)
    }

    fn wirtinger(&self, v: &[C64], sr: f64) -> Vec<C64> {
        let mut out = vec![ZERO; v.len()];
        let h2 = 2.0 * self.step;
        for i in 1..self.nx.saturating_sub(1) {
            for j in 1..self.nr.saturating_sub(1) {
                let dx = (v[self.index(i + 1, j)] - v[self.index(i - 1, j)]) / h2;
                let dr = (v[self.index(i, j + 1)] - v[self.index(i, j - 1)]) / h2;
                out[self.index(i, j)] = 0.5 * (dx + sr * I * dr);
            }
        }
        out
    }

    /// Sixth-order Lagrange interpolation at (x1, r).
    pub fn interpolate(&self, v: &[C64], x1: f64, r: f64) -> C64 {
        let (i0, wx) = stencil(self.nx, (x1 - self.x1_lo) / self.step);
        let (j0, wr) = stencil(self.nr, (r - self.r_lo) / self.step);
        let mut acc = ZERO;
        for (a, wa) in wx.iter().enumerate() {
            let row = (i0 + a) * self.nr + j0;
            let mut inner = ZERO;
            for (b, wb) in wr.iter().enumerate() {
                inner += v[row + b] * *wb;
            }
            acc += inner * *wa;
        }
        acc
    }
}

fn stencil(n: usize, t: f64) -> (usize, [f64; 6]) {
    let i0 = (t.floor() as isize - 2).clamp(0, n as isize - 6) as usize;
    let mut w = [0.0; 6];
    lagrange_equispaced(6, t - i0 as f64, &mut w);
    (i0, w)
}

/// Primitive of 1/w over rectangles: ∂x∂y P = 1/(x + iy).
fn cell_primitive(x: f64, y: f64) -> C64 {
    let l = (x * x + y * y).ln();
    C64::new(0.5 * y * l + x * (y / x).atan(), -(0.5 * x * l + y * (x / y).atan()))
}

/// (1/π)∫ dA/w over the cell of half-width `half` centred at (cx, cy).
pub fn cauchy_cell_integral(cx: f64, cy: f64, half: f64) -> C64 {
    if cx == 0.0 && cy == 0.0 {
        // odd integrand over a symmetric cell
        return ZERO;
    }
    let (x1, x2, y1, y2) = (cx - half, cx + half, cy - half, cy + half);
    (cell_primitive(x2, y2) - cell_primitive(x1, y2) - cell_primitive(x2, y1) + cell_primitive(x1, y1)) / PI
}

/// Cauchy transform C[F](z) = (1/π)∫ F(ζ)/(z − ζ) dA(ζ) of a grid function
/// that is constant on the cells around the nodes, by zero-padded FFT
/// convolution with exact cell integrals of the kernel.
pub struct CauchyTransform {
    grid: SliceGrid,
    mx: usize,
    mr: usize,
    kernel_hat: Vec<C64>,
    fwd: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
    inv: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
}

impl CauchyTransform {
    pub fn new(grid: &SliceGrid) -> Self {
        let mx = (2 * grid.nx - 1).next_power_of_two();
        let mr = (2 * grid.nr - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = (planner.plan_fft_forward(mx), planner.plan_fft_forward(mr));
        let inv = (planner.plan_fft_inverse(mx), planner.plan_fft_inverse(mr));
        let mut k = vec![ZERO; mx * mr];
        let h = grid.step;
        for a in 0..(2 * grid.nx - 1) {
            for b in 0..(2 * grid.nr - 1) {
                let mxo = a as f64 - (grid.nx - 1) as f64;
                let mro = b as f64 - (grid.nr - 1) as f64;
                k[a * mr + b] = cauchy_cell_integral(mxo * h, mro * h, 0.5 * h);
            }
        }
        let mut t = CauchyTransform { grid: grid.clone(), mx, mr, kernel_hat: Vec::new(), fwd, inv };
        t.fft2(&mut k, true);
        t.kernel_hat = k;
        t
    }

    fn fft2(&self, data: &mut [C64], forward: bool) {
        let (fx, fr) = if forward { &self.fwd } else { &self.inv };
        fr.process(data);
        let mut tr = vec![ZERO; data.len()];
        for a in 0..self.mx {
            for b in 0..self.mr {
                tr[b * self.mx + a] = data[a * self.mr + b];
            }
        }
        fx.process(&mut tr);
        for a in 0..self.mx {
            for b in 0..self.mr {
                data[a * self.mr + b] = tr[b * self.mx + a];
            }
        }
    }

    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        let g = &self.grid;
        let mut buf = vec![ZERO; self.mx * self.mr];
        for i in 0..g.nx {
            buf[i * self.mr..i * self.mr + g.nr].copy_from_slice(&f[i * g.nr..(i + 1) * g.nr]);
        }
        self.fft2(&mut buf, true);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft2(&mut buf, false);
        let norm = 1.0 / (self.mx * self.mr) as f64;
        let mut out = vec![ZERO; g.len()];
        for i in 0..g.nx {
            for j in 0..g.nr {
                out[g.index(i, j)] = buf[(i + g.nx - 1) * self.mr + j + g.nr - 1] * norm;
            }
        }
        out
    }
}

/// Slice grid with a smooth cutoff equal to one on an inner rectangle, and
/// the matching Cauchy transform.
pub struct PlaneSolver {
    pub grid: SliceGrid,
    /// inner rectangle [x1_lo, x1_hi] × [r_lo, r_hi] where the cutoff is one
    pub inner: [f64; 4],
    pub chi: Vec<f64>,
    cauchy: CauchyTransform,
}

impl PlaneSolver {
    /// `cutoff_width` is the length of the transition of χ from one to zero.
    pub fn new(inner: [f64; 4], step: f64, cutoff_width: f64) -> Self {
        // keep the slice grid off the axis on coarse grids
        let w = cutoff_width.min(0.5 * inner[2]);
        let pad = w + 2.0 * step;
        let x1_lo = inner[0] - pad;
        let r_lo = inner[2] - pad;
        let nx = ((inner[1] + pad - x1_lo) / step).ceil() as usize + 1;
        let nr = ((inner[3] + pad - r_lo) / step).ceil() as usize + 1;
        let grid = SliceGrid { x1_lo, r_lo, step, nx, nr };
        let ramp = |t: f64, lo: f64, hi: f64| smooth_step((t - (lo - w)) / w) * smooth_step((hi + w - t) / w);
        let chi = grid
            .nodes()
            .map(|(i, j)| {
                let z = grid.z(i, j);
                ramp(z.re, inner[0], inner[1]) * ramp(z.im, inner[2], inner[3])
            })
            .collect();
        let cauchy = CauchyTransform::new(&grid);
        PlaneSolver { grid, inner, chi, cauchy }
    }

    /// v = C[χ·rhs], so ∂_z̄ v = rhs wherever χ = 1.
    pub fn dbar_solve(&self, rhs: &[C64]) -> Vec<C64> {
        let f: Vec<C64> = rhs.iter().zip(&self.chi).map(|(v, c)| v * *c).collect();
        self.cauchy.apply(&f)
    }

    /// Solution of ∂_z v = rhs where χ = 1, by conjugation.
    pub fn dz_solve(&self, rhs: &[C64]) -> Vec<C64> {
        let c: Vec<C64> = rhs.iter().map(|v| v.conj()).collect();
        self.dbar_solve(&c).into_iter().map(|v| v.conj()).collect()
    }

    pub fn in_inner(&self, z: C64) -> bool {
        z.re >= self.inner[0] && z.re <= self.inner[1] && z.im >= self.inner[2] && z.im <= self.inner[3]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceOptions {
    /// number of Chebyshev nodes in θ
    pub slices: usize,
    /// slice spacing relative to the 3D grid spacing
    pub step_factor: f64,
    /// cutoff transition width relative to the shorter side of the covered box
    pub cutoff_fraction: f64,
}

impl Default for SliceOptions {
    fn default() -> Self {
        SliceOptions { slices: 32, step_factor: 0.5, cutoff_fraction: 0.2 }
    }
}

/// Everything needed to solve on the planes P_θ covering a domain.
pub struct SliceSetup {
    pub dom: Arc<DiscretizedDomain>,
    pub wp: WeightPair,
    pub plane: PlaneSolver,
    pub theta: Chebyshev,
    pub options: SliceOptions,
}

/// Values of one quantity on every slice.
#[derive(Clone, Debug)]
pub struct SliceStack {
    pub values: Vec<Vec<C64>>,
}

impl SliceSetup {
    pub fn new(dom: &Arc<DiscretizedDomain>, wp: &WeightPair, options: SliceOptions) -> Result<Self> {
        let frame = wp.frame();
        let grid = dom.grid();
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        let mut tb = [f64::INFINITY, f64::NEG_INFINITY];
        let mut visit = |p: Vec3| {
            let c = frame.chart(p);
            b = [b[0].min(c.x1), b[1].max(c.x1), b[2].min(c.r), b[3].max(c.r)];
            tb = [tb[0].min(c.theta), tb[1].max(c.theta)];
        };
        for (idx, &cl) in dom.class.iter().enumerate() {
            if cl <= GHOST_LAYERS {
                visit(grid.point(idx));
            }
        }
        for f in &dom.facets {
            visit(f.pos);
        }
        let step = options.step_factor * dom.dx();
        let margin = 4.0 * step;
        let inner = [b[0] - margin, b[1] + margin, b[2] - margin, b[3] + margin];
        if inner[2] <= 4.0 * step {
            return Err(Error::OnAxis);
        }
        let width = options.cutoff_fraction * (inner[1] - inner[0]).min(inner[3] - inner[2]);
        let plane = PlaneSolver::new(inner, step, width);
        let pad = 1e-3 * (tb[1] - tb[0]).max(1e-3);
        let theta = Chebyshev::new(options.slices, tb[0] - pad, tb[1] + pad);
        Ok(SliceSetup { dom: dom.clone(), wp: wp.clone(), plane, theta, options })
    }

    pub fn frame(&self) -> &Frame {
        self.wp.frame()
    }

    pub fn theta_nodes(&self) -> &[f64] {
        &self.theta.nodes
    }

    /// Evaluate `f(z, θ, world point)` on every slice.
    pub fn sample<F>(&self, f: F) -> SliceStack
    where
        F: Fn(C64, f64, Vec3) -> C64 + Sync,
    {
        let g = &self.plane.grid;
        let frame = self.frame();
        let values = self
            .theta
            .nodes
            .par_iter()
            .map(|&theta| {
                g.nodes()
                    .map(|(i, j)| {
                        let z = g.z(i, j);
                        let p = frame.inverse_chart(Cylindrical { x1: z.re, r: z.im, theta });
                        f(z, theta, p)
                    })
                    .collect()
            })
            .collect();
        SliceStack { values }
    }

    pub fn dbar_solve(&self, rhs: &SliceStack) -> SliceStack {
        SliceStack { values: rhs.values.par_iter().map(|v| self.plane.dbar_solve(v)).collect() }
    }

    pub fn dz_solve(&self, rhs: &SliceStack) -> SliceStack {
        SliceStack { values: rhs.values.par_iter().map(|v| self.plane.dz_solve(v)).collect() }
    }

    pub fn eval(&self, stack: &SliceStack, c: &Cylindrical) -> C64 {
        let w = self.theta.coefficients(c.theta);
        let g = &self.plane.grid;
        let mut acc = ZERO;
        for (wj, v) in w.iter().zip(&stack.values) {
            if *wj != 0.0 {
                acc += g.interpolate(v, c.x1, c.r) * *wj;
            }
        }
        acc
    }

    /// Transfer a stack to the 3D nodes of the domain (through all ghost layers).
    pub fn to_field(&self, stack: &SliceStack) -> ComplexField {
        let frame = self.frame();
        ComplexField::from_fn(&self.dom, GHOST_LAYERS, |p| self.eval(stack, &frame.chart(p)))
    }

    /// Mask of Ω_θ on the slice grid.
    pub fn section_mask(&self, theta: f64) -> Vec<bool> {
        let g = &self.plane.grid;
        let frame = self.frame();
        let shape = self.dom.shape();
        g.nodes()
            .map(|(i, j)| {
                let z = g.z(i, j);
                shape.contains(frame.inverse_chart(Cylindrical { x1: z.re, r: z.im, theta }))
            })
            .collect()
    }
}

/// One term c·ζ^k e^{imθ} of a generator, with ζ = z for σ = + and z̄ for σ = −.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerm {
    pub coef: C64,
    pub z_degree: i32,
    pub theta_mode: i32,
}

/// Generator G(z, θ), holomorphic (σ = +) or antiholomorphic (σ = −) in z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub terms: Vec<GeneratorTerm>,
}

impl Generator {
    pub fn one() -> Self {
        Self::monomial(0, 0)
    }

    pub fn monomial(z_degree: i32, theta_mode: i32) -> Self {
        Generator { terms: vec![GeneratorTerm { coef: C64::new(1.0, 0.0), z_degree, theta_mode }] }
    }

    pub fn add(&self, other: &Generator) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Generator { terms }
    }

    pub fn scale(&self, c: C64) -> Self {
        Generator {
            terms: self.terms.iter().map(|t| GeneratorTerm { coef: t.coef * c, ..t.clone() }).collect(),
        }
    }

    pub fn label(&self) -> String {
        self.terms.iter().map(|t| format!("z{}m{}", t.z_degree, t.theta_mode)).collect::<Vec<_>>().join("+")
    }

    pub fn eval(&self, z: C64, theta: f64, sign: Sign) -> C64 {
        self.eval_weighted(z, theta, sign, |_| 1.0)
    }

    fn eval_weighted(&self, z: C64, theta: f64, sign: Sign, w: impl Fn(i32) -> f64) -> C64 {
        let zeta = match sign {
            Sign::Plus => z,
            Sign::Minus => z.conj(),
        };
        self.terms
            .iter()
            .map(|t| t.coef * w(t.theta_mode) * zeta.powi(t.z_degree) * C64::from_polar(1.0, t.theta_mode as f64 * theta))
            .sum()
    }

    pub fn eval_at(&self, frame: &Frame, p: Vec3, sign: Sign) -> C64 {
        let c = frame.chart(p);
        self.eval(chart_z(&c), c.theta, sign)
    }

    /// Errors when the generator vanishes at one of the points.
    pub fn check_nonvanishing(&self, frame: &Frame, pts: impl Iterator<Item = Vec3>, sign: Sign) -> Result<()> {
        let vals: Vec<f64> = pts.map(|p| self.eval_at(frame, p, sign).norm()).collect();
        let max = vals.iter().cloned().fold(0.0, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-12 * max) {
            return Err(Error::Invalid(format!("generator {} vanishes in the domain", self.label())));
        }
        Ok(())
    }
}

/// {z^k e^{imθ}: 0 ≤ k ≤ max_z_degree, |m| ≤ max_theta_mode}.
pub fn holomorphic_family(max_z_degree: i32, max_theta_mode: i32) -> Vec<Generator> {
    let mut out = Vec::new();
    for k in 0..=max_z_degree {
        for m in -max_theta_mode..=max_theta_mode {
            out.push(Generator::monomial(k, m));
        }
    }
    out
}

/// Closed-form first amplitude s^{-1/2} G.
pub fn a0_exact(frame: &Frame, generator: &Generator, sign: Sign, p: Vec3) -> C64 {
    let c = frame.chart(p);
    inv_sqrt_s(c.r) * generator.eval(chart_z(&c), c.theta, sign)
}

/// Closed-form part of the second amplitude: s^{-1/2}·(−ζ/4)·Σ(4m²−1)G_m/s
/// solves T a = −½Δa₀.
pub fn a1_closed(frame: &Frame, generator: &Generator, sign: Sign, p: Vec3) -> C64 {
    let c = frame.chart(p);
    let z = chart_z(&c);
    let zeta = if sign == Sign::Plus { z } else { z.conj() };
    let s = C64::new(0.0, 2.0 * c.r);
    let g = generator.eval_weighted(z, c.theta, sign, |m| (4 * m * m - 1) as f64);
    inv_sqrt_s(c.r) * (-0.25 * zeta * g / s)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeOrder {
    Leading,
    First,
}

/// Amplitude field on the domain and its ghost layers.
#[derive(Clone, Debug)]
pub struct Amplitude {
    pub order: AmplitudeOrder,
    pub sign: Sign,
    pub generator: Generator,
    pub field: ComplexField,
}

pub fn build_a0(setup: &SliceSetup, generator: &Generator, sign: Sign) -> Amplitude {
    let frame = setup.frame();
    let field = ComplexField::from_fn(&setup.dom, GHOST_LAYERS, |p| a0_exact(frame, generator, sign, p));
    Amplitude { order: AmplitudeOrder::Leading, sign, generator: generator.clone(), field }
}

/// Right-hand side F of the nested plane problem for the coefficient part
/// of a1: ∂_z̄² b = F (σ = +) or ∂_z² b = F (σ = −).
fn a1_source(setup: &SliceSetup, generator: &Generator, coef: &VectorExpr, sign: Sign) -> SliceStack {
    let frame = setup.frame().clone();
    setup.sample(|z, theta, p| {
        let a = coef.eval(p);
        let a1: C64 = (0..3).map(|k| a[k] * frame.e[0][k]).sum();
        let er = frame.radial_unit(theta);
        let ar: C64 = (0..3).map(|k| a[k] * er[k]).sum();
        let g = generator.eval(z, theta, sign);
        match sign {
            Sign::Plus => I * z / 16.0 * (a1 + I * ar) * g,
            Sign::Minus => -I * z.conj() / 16.0 * (a1 - I * ar) * g,
        }
    })
}

/// Plane solution b of the coefficient part, or None when A ≡ 0.
pub fn a1_plane_part(setup: &SliceSetup, generator: &Generator, coef: &VectorExpr, sign: Sign) -> Option<(SliceStack, SliceStack)> {
    if coef.is_zero() {
        return None;
    }
    let f = a1_source(setup, generator, coef, sign);
    let b = match sign {
        Sign::Plus => setup.dbar_solve(&setup.dbar_solve(&f)),
        Sign::Minus => setup.dz_solve(&setup.dz_solve(&f)),
    };
    Some((f, b))
}

/// Second amplitude: T²a₁ = −½(ΔT + TΔ)a₀ − ¼A·(Dφ + iDψ)a₀ where `coef`
/// is the first-order coefficient of the operator this branch solves.
pub fn build_a1(setup: &SliceSetup, a0: &Amplitude, coef: &VectorExpr) -> Amplitude {
    let frame = setup.frame().clone();
    let sign = a0.sign;
    let gen = &a0.generator;
    let plane = a1_plane_part(setup, gen, coef, sign).map(|(_, b)| b);
    let field = ComplexField::from_fn(&setup.dom, GHOST_LAYERS, |p| {
        let c = frame.chart(p);
        let mut v = a1_closed(&frame, gen, sign, p);
        if let Some(b) = &plane {
            v += inv_sqrt_s(c.r) * setup.eval(b, &c);
        }
        v
    });
    Amplitude { order: AmplitudeOrder::First, sign, generator: gen.clone(), field }
}

/// Per-slice relative L² residual of the nested plane problem for a1 on Ω_θ.
pub fn a1_slice_residual(setup: &SliceSetup, generator: &Generator, coef: &VectorExpr, sign: Sign) -> Vec<Option<f64>> {
    let Some((f, b)) = a1_plane_part(setup, generator, coef, sign) else {
        return vec![Some(0.0); setup.options.slices];
    };
    let g = &setup.plane.grid;
    setup
        .theta
        .nodes
        .iter()
        .enumerate()
        .map(|(j, &theta)| {
            let d = |v: &[C64]| if sign == Sign::Plus { g.dbar(v) } else { g.dz(v) };
            let dd = d(&d(&b.values[j]));
            let mask = setup.section_mask(theta);
            relative_on(&mask, &dd, &f.values[j])
        })
        .collect()
}

fn ratio_on(mask: &[bool], a: &[C64], b: &[C64]) -> f64 {
    let n: f64 = (0..mask.len()).filter(|&k| mask[k]).map(|k| a[k].norm_sqr()).sum();
    let d: f64 = (0..mask.len()).filter(|&k| mask[k]).map(|k| b[k].norm_sqr()).sum();
    (n / d.max(f64::MIN_POSITIVE)).sqrt()
}

fn relative_on(mask: &[bool], a: &[C64], b: &[C64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut any = false;
    for k in 0..mask.len() {
        if mask[k] {
            any = true;
            num += (a[k] - b[k]).norm_sqr();
            den += b[k].norm_sqr();
        }
    }
    any.then(|| (num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Exponent pair with T e^{Φ₂} = 0 and T e^{Φ̄₁} = 0 (σ = +); the σ = −
/// pair is the complex conjugate.
pub struct PhiPair {
    pub sign: Sign,
    pub phi1: ComplexField,
    pub phi2: ComplexField,
    /// Φ₂ on the reference slice (it does not depend on θ)
    pub plane_phi2: Vec<C64>,
}

pub fn build_phi_pair(setup: &SliceSetup, sign: Sign) -> PhiPair {
    let g = &setup.plane.grid;
    let rhs: Vec<C64> = g.nodes().map(|(i, j)| 1.0 / (2.0 * C64::new(0.0, 2.0 * g.z(i, j).im))).collect();
    let plane_phi2 = setup.plane.dbar_solve(&rhs);
    let frame = setup.frame();
    let phi = ComplexField::from_fn(&setup.dom, GHOST_LAYERS, |p| {
        let c = frame.chart(p);
        g.interpolate(&plane_phi2, c.x1, c.r)
    });
    let (phi2, phi1) = match sign {
        Sign::Plus => (phi.clone(), phi.map(|v| v.conj())),
        Sign::Minus => (phi.map(|v| v.conj()), phi),
    };
    PhiPair { sign, phi1, phi2, plane_phi2 }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiPairCheck {
    pub theta: f64,
    /// relative L² residual of ∂_z̄(Φ₂ + Φ̄₁) − 1/s over Ω_θ
    pub identity_residual: f64,
    /// relative L² size of ∂_z̄[e^{Φ₂+Φ̄₁} s] over Ω_θ
    pub closed_residual: f64,
    pub min_modulus: f64,
}

/// Slice checks of the σ = + pair on each slice with a nonempty section.
pub fn check_phi_pair(setup: &SliceSetup, pair: &PhiPair, thetas: &[f64]) -> Vec<PhiPairCheck> {
    let g = &setup.plane.grid;
    let sum: Vec<C64> = pair.plane_phi2.iter().map(|v| 2.0 * v).collect();
    let target: Vec<C64> = g.nodes().map(|(i, j)| 1.0 / C64::new(0.0, 2.0 * g.z(i, j).im)).collect();
    let prod: Vec<C64> = g.nodes().zip(&sum).map(|((i, j), v)| v.exp() * C64::new(0.0, 2.0 * g.z(i, j).im)).collect();
    let d_sum = g.dbar(&sum);
    let d_prod = g.dbar(&prod);
    thetas
        .iter()
        .filter_map(|&theta| {
            let mask = setup.section_mask(theta);
            let identity_residual = relative_on(&mask, &d_sum, &target)?;
            let closed_residual = ratio_on(&mask, &d_prod, &prod);
            let min_modulus = (0..mask.len()).filter(|&k| mask[k]).map(|k| prod[k].norm()).fold(f64::INFINITY, f64::min);
            Some(PhiPairCheck { theta, identity_residual, closed_residual, min_modulus })
        })
        .collect()
}

/// Relative residual of (∇φ + i∇ψ)·∇g on the inside nodes.
pub fn directional_residual(g: &ComplexField, wp: &WeightPair, sign: Sign) -> Result<f64> {
    let grad = g.gradient()?;
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for &idx in &g.dom.mask.nodes {
        let p = g.dom.grid().point(idx);
        let w = wp.complex_gradient(p, sign)?;
        let d: C64 = (0..3).map(|k| w[k] * grad[k].values[idx]).sum();
        let scale = dot(
            [w[0].norm(), w[1].norm(), w[2].norm()],
            [grad[0].values[idx].norm(), grad[1].values[idx].norm(), grad[2].values[idx].norm()],
        );
        num = num.max(d.norm());
        den = den.max(scale).max(g.values[idx].norm() * 1e-300);
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// max |T f| / max |f| over the inside nodes.
pub fn annihilation_residual(f: &ComplexField, wp: &WeightPair, sign: Sign) -> Result<f64> {
    let t = t_apply(f, wp, sign)?;
    let inside = |x: &ComplexField| x.dom.mask.nodes.iter().map(|&i| x.values[i].norm()).fold(0.0, f64::max);
    Ok(inside(&t) / inside(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Shape, Viewpoint};

    fn setup(n: usize) -> SliceSetup {
        let shape = Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 };
        let dom = Arc::new(DiscretizedDomain::new(&DomainSpec { shape: shape.clone(), grid_n: n }).unwrap());
        let wp = WeightPair::new(Viewpoint::standard(&shape).unwrap(), 2.0);
        SliceSetup::new(&dom, &wp, SliceOptions { slices: 12, ..Default::default() }).unwrap()
    }

    #[test]
    fn cell_integrals_match_far_field() {
        let h = 0.01;
        let k = cauchy_cell_integral(0.7, -0.4, 0.5 * h);
        let w = C64::new(0.7, -0.4);
        assert!((k - h * h / (PI * w)).norm() < 1e-7 * k.norm());
    }

    #[test]
    fn dbar_solve_inverts_on_inner_box() {
        let mut errs = Vec::new();
        for step in [0.04, 0.02] {
            let p = PlaneSolver::new([-1.0, 1.0, 3.0, 5.0], step, 0.4);
            let g = &p.grid;
            let rhs: Vec<C64> = g.nodes().map(|(i, j)| g.z(i, j)).collect();
            let v = p.dbar_solve(&rhs);
            let d = g.dbar(&v);
            let mut err: f64 = 0.0;
            for (i, j) in g.nodes() {
                if p.in_inner(g.z(i, j)) {
                    err = err.max((d[g.index(i, j)] - g.z(i, j)).norm());
                }
            }
            errs.push(err);
        }
        assert!(errs[1] < 2e-3, "{errs:?}");
        assert!((errs[0] / errs[1]).log2() > 1.0, "{errs:?}");
        let p = PlaneSolver::new([-1.0, 1.0, 3.0, 5.0], 0.05, 0.4);
        assert!(p.dbar_solve(&vec![ZERO; p.grid.len()]).iter().all(|v| *v == ZERO));
    }

    #[test]
    fn leading_amplitude_is_annihilated() {
        let s = setup(33);
        for (gen, sign) in [(Generator::one(), Sign::Plus), (Generator::monomial(2, 1), Sign::Minus)] {
            let a0 = build_a0(&s, &gen, sign);
            let r = annihilation_residual(&a0.field, &s.wp, sign).unwrap();
            assert!(r < 10.0 * s.dom.dx().powi(2), "{r}");
        }
    }

    #[test]
    fn constant_field_gives_half_laplacian() {
        let s = setup(17);
        let one = ComplexField::from_fn(&s.dom, GHOST_LAYERS, |_| C64::new(1.0, 0.0));
        let t = t_apply(&one, &s.wp, Sign::Plus).unwrap();
        for &idx in &s.dom.mask.nodes {
            let c = s.frame().chart(s.dom.grid().point(idx));
            let z = chart_z(&c);
            let expect = -1.0 / (z * C64::new(0.0, 2.0 * c.r));
            assert!((t.values[idx] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn closed_part_solves_first_order_equation() {
        let s = setup(33);
        let frame = s.frame().clone();
        for sign in [Sign::Plus, Sign::Minus] {
            let gen = Generator::monomial(1, 2).add(&Generator::one());
            let a0 = build_a0(&s, &gen, sign);
            let b = ComplexField::from_fn(&s.dom, GHOST_LAYERS, |p| a1_closed(&frame, &gen, sign, p));
            let lhs = t_apply(&b, &s.wp, sign).unwrap();
            let rhs = a0.field.laplacian().unwrap().scale(C64::new(-0.5, 0.0));
            let err = lhs.sub(&rhs).restrict(0).max_abs();
            assert!(err < 1e-3 * rhs.restrict(0).max_abs(), "{err}");
        }
    }

    #[test]
    fn family_counts() {
        assert_eq!(holomorphic_family(3, 4).len(), 4 * 9);
    }
}
