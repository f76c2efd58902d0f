//! Complex grid fields on a discretised domain: centred stencils, ghost
//! extension, boundary traces, quadrature and semiclassical norms.

use crate::geometry::{axis_unit, DiscretizedDomain, Facet, GHOST_LAYERS, NONE};
use crate::quadrature::lagrange_equispaced;
use crate::vec3::{scale, sub};
use crate::{Error, Result, Vec3, C64};
use rayon::prelude::*;
use std::sync::Arc;

/// Highest derivative order supported by the stencils.
pub const MAX_ORDER: usize = 4;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Centred second-order stencil for the m-th derivative (times dx^m).
fn stencil(order: usize) -> &'static [f64] {
    match order {
        0 => &[1.0],
        1 => &[-0.5, 0.0, 0.5],
        2 => &[1.0, -2.0, 1.0],
        3 => &[-0.5, 1.0, 0.0, -1.0, 0.5],
        4 => &[1.0, -4.0, 6.0, -4.0, 1.0],
        _ => unreachable!(),
    }
}

/// Multi-indices α with |α| ≤ s.
pub fn multi_indices(s: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 0..=s {
        for a in (0..=total).rev() {
            for b in (0..=(total - a)).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ComplexField {
    pub dom: Arc<DiscretizedDomain>,
    pub values: Vec<C64>,
    pub valid: Vec<bool>,
}

impl ComplexField {
    pub fn zeros(dom: &Arc<DiscretizedDomain>) -> Self {
        let n = dom.grid().len();
        ComplexField { dom: dom.clone(), values: vec![C64::new(0.0, 0.0); n], valid: vec![false; n] }
    }

    /// Sample a closed-form function on nodes up to ghost layer `layers`.
    pub fn from_fn<F>(dom: &Arc<DiscretizedDomain>, layers: u8, f: F) -> Self
    where
        F: Fn(Vec3) -> C64 + Sync,
    {
        Self::try_from_fn(dom, layers, |p| Ok(f(p))).expect("infallible")
    }

    pub fn try_from_fn<F>(dom: &Arc<DiscretizedDomain>, layers: u8, f: F) -> Result<Self>
    where
        F: Fn(Vec3) -> Result<C64> + Sync,
    {
        let grid = dom.grid();
        let class = &dom.class;
        let pairs: Result<Vec<(C64, bool)>> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if class[idx] <= layers {
                    Ok((f(grid.point(idx))?, true))
                } else {
                    Ok((C64::new(0.0, 0.0), false))
                }
            })
            .collect();
        let (values, valid) = pairs?.into_iter().unzip();
        Ok(ComplexField { dom: dom.clone(), values, valid })
    }

    /// Field from values at the inside nodes (unknown ordering).
    pub fn from_unknowns(dom: &Arc<DiscretizedDomain>, vals: &[C64]) -> Self {
        let mut f = Self::zeros(dom);
        for (u, &node) in dom.mask.nodes.iter().enumerate() {
            f.values[node] = vals[u];
            f.valid[node] = true;
        }
        f
    }

    pub fn unknowns(&self) -> Vec<C64> {
        self.dom.mask.nodes.iter().map(|&n| self.values[n]).collect()
    }

    pub fn map<F: Fn(C64) -> C64 + Sync>(&self, f: F) -> Self {
        let values = self.values.par_iter().zip(&self.valid).map(|(v, &ok)| if ok { f(*v) } else { *v }).collect();
        ComplexField { dom: self.dom.clone(), values, valid: self.valid.clone() }
    }

    /// Pointwise map with the node position available.
    pub fn map_with_point<F: Fn(Vec3, C64) -> C64 + Sync>(&self, f: F) -> Self {
        let grid = self.dom.grid();
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|i| if self.valid[i] { f(grid.point(i), self.values[i]) } else { self.values[i] })
            .collect();
        ComplexField { dom: self.dom.clone(), values, valid: self.valid.clone() }
    }

    pub fn zip_with<F: Fn(C64, C64) -> C64 + Sync>(&self, other: &ComplexField, f: F) -> Self {
        let n = self.values.len();
        let mut values = vec![C64::new(0.0, 0.0); n];
        let mut valid = vec![false; n];
        values.par_iter_mut().zip(valid.par_iter_mut()).enumerate().for_each(|(i, (v, ok))| {
            if self.valid[i] && other.valid[i] {
                *v = f(self.values[i], other.values[i]);
                *ok = true;
            }
        });
        ComplexField { dom: self.dom.clone(), values, valid }
    }

    pub fn add(&self, o: &ComplexField) -> Self {
        self.zip_with(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &ComplexField) -> Self {
        self.zip_with(o, |a, b| a - b)
    }

    pub fn mul(&self, o: &ComplexField) -> Self {
        self.zip_with(o, |a, b| a * b)
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|v| v * s)
    }

    /// Keep only nodes up to ghost layer `layers`.
    pub fn restrict(&self, layers: u8) -> Self {
        let mut f = self.clone();
        for (i, ok) in f.valid.iter_mut().enumerate() {
            if self.dom.class[i] > layers {
                *ok = false;
            }
        }
        f
    }

    /// Deepest ghost layer on which the field is fully valid, or None if
    /// some inside node is invalid.
    pub fn valid_layers(&self) -> Option<u8> {
        let mut worst = GHOST_LAYERS + 1;
        for (i, &c) in self.dom.class.iter().enumerate() {
            if c <= GHOST_LAYERS && !self.valid[i] {
                worst = worst.min(c);
            }
        }
        if worst == 0 {
            None
        } else {
            Some(worst - 1)
        }
    }

    /// Derivative ∂^m along one axis.
    pub fn partial(&self, axis: usize, order: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let grid = self.dom.grid();
        let n = grid.n;
        let st = stencil(order);
        let half = (st.len() / 2) as isize;
        let stride = [n * n, n, 1][axis] as isize;
        let inv = 1.0 / grid.dx.powi(order as i32);
        let len = self.values.len();
        let mut values = vec![C64::new(0.0, 0.0); len];
        let mut valid = vec![false; len];
        values.par_iter_mut().zip(valid.par_iter_mut()).enumerate().for_each(|(idx, (v, ok))| {
            if !self.valid[idx] {
                return;
            }
            let c = grid.ijk(idx)[axis] as isize;
            if c - half < 0 || c + half >= n as isize {
                return;
            }
            let mut acc = C64::new(0.0, 0.0);
            for (m, &w) in st.iter().enumerate() {
                let q = (idx as isize + (m as isize - half) * stride) as usize;
                if !self.valid[q] {
                    return;
                }
                if w != 0.0 {
                    acc += self.values[q] * w;
                }
            }
            *v = acc * inv;
            *ok = true;
        });
        Ok(ComplexField { dom: self.dom.clone(), values, valid })
    }

    /// ∂^α by successive centred stencils.
    pub fn derivative(&self, alpha: [usize; 3]) -> Result<Self> {
        let total: usize = alpha.iter().sum();
        if total > MAX_ORDER {
            return Err(Error::UnsupportedOrder(total));
        }
        let mut f = self.partial(0, alpha[0])?;
        f = f.partial(1, alpha[1])?;
        f.partial(2, alpha[2])
    }

    /// D^α = (−i)^{|α|} ∂^α.
    pub fn apply_derivative(&self, alpha: [usize; 3]) -> Result<Self> {
        let total: usize = alpha.iter().sum();
        let f = self.derivative(alpha)?;
        Ok(f.scale((-I).powi(total as i32)))
    }

    pub fn gradient(&self) -> Result<[ComplexField; 3]> {
        Ok([self.partial(0, 1)?, self.partial(1, 1)?, self.partial(2, 1)?])
    }

    pub fn laplacian(&self) -> Result<Self> {
        let a = self.partial(0, 2)?;
        let b = self.partial(1, 2)?;
        let c = self.partial(2, 2)?;
        Ok(a.add(&b).add(&c))
    }

    /// Fill ghost layers 1..=layers by polynomial extrapolation along grid
    /// lines. When `dirichlet` is given, the first layer fit also uses the
    /// boundary value at the grid-line crossing.
    pub fn extend(&mut self, layers: u8, dirichlet: Option<&(dyn Fn(Vec3) -> C64 + Sync)>) {
        let dom = self.dom.clone();
        let grid = dom.grid();
        let n = grid.n as isize;
        let mut diag_dirs = Vec::new();
        for a in -1..=1isize {
            for b in -1..=1isize {
                for c in -1..=1isize {
                    let nz = (a != 0) as u8 + (b != 0) as u8 + (c != 0) as u8;
                    if nz >= 2 {
                        diag_dirs.push([a, b, c]);
                    }
                }
            }
        }
        for layer in 1..=layers.min(GHOST_LAYERS) {
            let targets: Vec<usize> = (0..grid.len())
                .filter(|&i| dom.class[i] == layer && !self.valid[i])
                .collect();
            let updates: Vec<(usize, Option<C64>)> = targets
                .par_iter()
                .map(|&idx| {
                    let ijk = grid.ijk(idx);
                    let at = |off: [isize; 3], m: isize| -> Option<usize> {
                        let a = ijk[0] as isize - off[0] * m;
                        let b = ijk[1] as isize - off[1] * m;
                        let c = ijk[2] as isize - off[2] * m;
                        if a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n {
                            return None;
                        }
                        Some(grid.index(a as usize, b as usize, c as usize))
                    };
                    let mut sum = C64::new(0.0, 0.0);
                    let mut count = 0usize;
                    for d in 0..6 {
                        let e = axis_unit(d);
                        let off = [e[0] as isize, e[1] as isize, e[2] as isize];
                        let (Some(n1), Some(n2), Some(n3)) = (at(off, 1), at(off, 2), at(off, 3)) else {
                            continue;
                        };
                        if !(self.valid[n1] && self.valid[n2] && self.valid[n3]) {
                            continue;
                        }
                        let (f1, f2, f3) = (self.values[n1], self.values[n2], self.values[n3]);
                        let mut est = f1 * 3.0 - f2 * 3.0 + f3;
                        if let Some(g) = dirichlet {
                            let u = dom.mask.unknown_of[n1];
                            if u != NONE {
                                let cidx = dom.mask.arm_crossing[u as usize][d];
                                if cidx != NONE {
                                    let cr = &dom.mask.crossings[cidx as usize];
                                    let fb = g(cr.point);
                                    est = fit_with_boundary(f3, f2, f1, cr.frac, fb);
                                }
                            }
                        }
                        sum += est;
                        count += 1;
                    }
                    if count == 0 {
                        for off in &diag_dirs {
                            let (Some(n1), Some(n2), Some(n3)) = (at(*off, 1), at(*off, 2), at(*off, 3)) else {
                                continue;
                            };
                            if self.valid[n1] && self.valid[n2] && self.valid[n3] {
                                sum += self.values[n1] * 3.0 - self.values[n2] * 3.0 + self.values[n3];
                                count += 1;
                            }
                        }
                    }
                    (idx, if count > 0 { Some(sum / count as f64) } else { None })
                })
                .collect();
            for (idx, v) in updates {
                if let Some(v) = v {
                    self.values[idx] = v;
                    self.valid[idx] = true;
                }
            }
        }
    }

    /// Tricubic Lagrange interpolation at an arbitrary point.
    pub fn interpolate(&self, p: Vec3) -> Result<C64> {
        let grid = self.dom.grid();
        let n = grid.n as isize;
        let mut base = [0isize; 3];
        let mut t = [0.0; 3];
        for k in 0..3 {
            let s = (p[k] - grid.lo[k]) / grid.dx;
            base[k] = s.floor() as isize - 1;
            t[k] = s - base[k] as f64;
        }
        // try the centred stencil first, then shifted ones
        const SHIFTS: [isize; 3] = [0, -1, 1];
        for &sa in &SHIFTS {
            for &sb in &SHIFTS {
                for &sc in &SHIFTS {
                    let b = [base[0] + sa, base[1] + sb, base[2] + sc];
                    if b.iter().any(|&v| v < 0 || v + 3 >= n) {
                        continue;
                    }
                    let mut ok = true;
                    'outer: for a in 0..4 {
                        for bb in 0..4 {
                            for c in 0..4 {
                                let q = grid.index((b[0] + a) as usize, (b[1] + bb) as usize, (b[2] + c) as usize);
                                if !self.valid[q] {
                                    ok = false;
                                    break 'outer;
                                }
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let mut w = [[0.0; 4]; 3];
                    let tt = [t[0] - sa as f64, t[1] - sb as f64, t[2] - sc as f64];
                    for k in 0..3 {
                        lagrange_equispaced(4, tt[k], &mut w[k]);
                    }
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..4 {
                        for bb in 0..4 {
                            let wab = w[0][a] * w[1][bb];
                            for c in 0..4 {
                                let q = grid.index((b[0] + a as isize) as usize, (b[1] + bb as isize) as usize, (b[2] + c as isize) as usize);
                                acc += self.values[q] * (wab * w[2][c]);
                            }
                        }
                    }
                    return Ok(acc);
                }
            }
        }
        Err(Error::StencilOutOfDomain(grid.index(
            base[0].clamp(0, n - 1) as usize,
            base[1].clamp(0, n - 1) as usize,
            base[2].clamp(0, n - 1) as usize,
        )))
    }

    /// Outward normal derivative at a boundary point by a one-sided
    /// four-point difference along the inward normal.
    pub fn normal_derivative(&self, pos: Vec3, normal: Vec3, boundary_value: Option<C64>) -> Result<C64> {
        let s = self.dom.dx();
        let f0 = match boundary_value {
            Some(v) => v,
            None => self.interpolate(pos)?,
        };
        let f1 = self.interpolate(sub(pos, scale(normal, s)))?;
        let f2 = self.interpolate(sub(pos, scale(normal, 2.0 * s)))?;
        let f3 = self.interpolate(sub(pos, scale(normal, 3.0 * s)))?;
        let inward = (f0 * -11.0 + f1 * 18.0 - f2 * 9.0 + f3 * 2.0) / (6.0 * s);
        Ok(-inward)
    }

    pub fn trace(&self, facet: &Facet) -> Result<C64> {
        self.interpolate(facet.pos)
    }

    pub fn trace_normal(&self, facet: &Facet, boundary_value: Option<C64>) -> Result<C64> {
        self.normal_derivative(facet.pos, facet.normal, boundary_value)
    }

    /// ∫_Ω f by the cut-cell node rule.
    pub fn integrate(&self) -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for (i, &w) in self.dom.weights.iter().enumerate() {
            if w > 0.0 {
                if !self.valid[i] {
                    return Err(Error::FieldIncomplete(i));
                }
                acc += self.values[i] * w;
            }
        }
        Ok(acc)
    }

    /// ∫_Ω f ḡ.
    pub fn inner(&self, other: &ComplexField) -> Result<C64> {
        self.zip_with(other, |a, b| a * b.conj()).integrate()
    }

    pub fn l2_norm_sq(&self) -> Result<f64> {
        let mut acc = 0.0;
        for (i, &w) in self.dom.weights.iter().enumerate() {
            if w > 0.0 {
                if !self.valid[i] {
                    return Err(Error::FieldIncomplete(i));
                }
                acc += self.values[i].norm_sqr() * w;
            }
        }
        Ok(acc)
    }

    pub fn l2_norm(&self) -> Result<f64> {
        Ok(self.l2_norm_sq()?.sqrt())
    }

    /// L² norm over inside nodes whose distance to the boundary is at least
    /// `depth` cells (stencil-clean interior).
    pub fn l2_norm_deep(&self, depth: usize) -> f64 {
        let deep = deep_mask(&self.dom, depth);
        let mut acc = 0.0;
        for (i, &d) in deep.iter().enumerate() {
            if d && self.valid[i] {
                acc += self.values[i].norm_sqr() * self.dom.weights[i];
            }
        }
        acc.sqrt()
    }

    /// ‖f‖²_{H^s_scl} = Σ_{|α|≤s} h^{2|α|} ‖∂^α f‖².
    pub fn scl_norm(&self, s: usize, h: f64) -> Result<f64> {
        if s > MAX_ORDER {
            return Err(Error::UnsupportedOrder(s));
        }
        let mut acc = 0.0;
        for alpha in multi_indices(s) {
            let k: usize = alpha.iter().sum();
            let d = self.derivative(alpha)?;
            acc += h.powi(2 * k as i32) * d.l2_norm_sq()?;
        }
        Ok(acc.sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(v, _)| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_inside(&self) -> f64 {
        self.dom.mask.nodes.iter().map(|&n| self.values[n].norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().zip(&self.valid).all(|(v, &ok)| !ok || (v.re.is_finite() && v.im.is_finite()))
    }
}

/// Inside nodes whose Chebyshev neighbourhood of radius `depth` is inside.
pub fn deep_mask(dom: &DiscretizedDomain, depth: usize) -> Vec<bool> {
    let grid = dom.grid();
    let n = grid.n;
    let d = depth as isize;
    (0..grid.len())
        .map(|idx| {
            if dom.class[idx] != 0 {
                return false;
            }
            let [i, j, k] = grid.ijk(idx);
            for a in -d..=d {
                for b in -d..=d {
                    for c in -d..=d {
                        let (x, y, z) = (i as isize + a, j as isize + b, k as isize + c);
                        if x < 0 || y < 0 || z < 0 || x >= n as isize || y >= n as isize || z >= n as isize {
                            return false;
                        }
                        if dom.class[grid.index(x as usize, y as usize, z as usize)] != 0 {
                            return false;
                        }
                    }
                }
            }
            true
        })
        .collect()
}

/// Least-squares quadratic through (−2, f3), (−1, f2), (0, f1), (θ, fb),
/// evaluated at 1.
fn fit_with_boundary(f3: C64, f2: C64, f1: C64, theta: f64, fb: C64) -> C64 {
    let ts = [-2.0, -1.0, 0.0, theta];
    let fs = [f3, f2, f1, fb];
    // normal equations for c0 + c1 t + c2 t²
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [C64::new(0.0, 0.0); 3];
    for (t, f) in ts.iter().zip(&fs) {
        let b = [1.0, *t, t * t];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += b[r] * b[c];
            }
            rhs[r] += f * b[r];
        }
    }
    let c = solve3(m, rhs);
    c[0] + c[1] + c[2]
}

fn solve3(m: [[f64; 3]; 3], b: [C64; 3]) -> [C64; 3] {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut out = [C64::new(0.0, 0.0); 3];
    for col in 0..3 {
        let mut re = m;
        let mut im = m;
        for r in 0..3 {
            re[r][col] = b[r].re;
            im[r][col] = b[r].im;
        }
        out[col] = C64::new(det(re) / d, det(im) / d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Shape};

    fn domain(n: usize) -> Arc<DiscretizedDomain> {
        Arc::new(
            DiscretizedDomain::new(&DomainSpec { shape: Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 }, grid_n: n })
                .unwrap(),
        )
    }

    #[test]
    fn multi_index_count() {
        assert_eq!(multi_indices(4).len(), 35);
        assert_eq!(multi_indices(1).len(), 4);
    }

    #[test]
    fn stencils_exact_on_quartics() {
        let d = domain(17);
        let f = ComplexField::from_fn(&d, 3, |p| C64::new(p[0].powi(4) + p[1] * p[2] * p[2], p[0] * p[1]));
        let lap = f.laplacian().unwrap();
        let d4 = f.derivative([4, 0, 0]).unwrap();
        let mixed = f.derivative([1, 1, 0]).unwrap();
        for &node in &d.mask.nodes {
            let p = d.grid().point(node);
            // the three-point stencil on x⁴ picks up 2dx²
            let expect = 12.0 * p[0] * p[0] + 2.0 * d.dx() * d.dx() + 2.0 * p[1];
            assert!((lap.values[node].re - expect).abs() < 1e-8);
            assert!((d4.values[node].re - 24.0).abs() < 1e-7);
            assert!((mixed.values[node].im - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_derivative_of_plane_wave() {
        let d = domain(33);
        let h = 0.5;
        let f = ComplexField::from_fn(&d, 3, |p| (I * p[0] / h).exp());
        let df = f.apply_derivative([1, 0, 0]).unwrap();
        for &node in &d.mask.nodes {
            let expect = f.values[node] / h;
            assert!((df.values[node] - expect).norm() < 0.02);
        }
    }

    #[test]
    fn ball_quadrature_and_scl_norm_example() {
        let d = domain(33);
        let one = ComplexField::from_fn(&d, 3, |_| C64::new(1.0, 0.0));
        let vol = one.integrate().unwrap().re;
        assert!((vol - 4.0 * std::f64::consts::PI / 3.0).abs() < 0.02 * vol);
        let h = 0.5;
        let f = ComplexField::from_fn(&d, 3, |p| (I * p[0] / h).exp());
        let n1 = f.scl_norm(1, h).unwrap();
        let n0 = f.l2_norm().unwrap();
        assert!((n1 / n0 - 2f64.sqrt()).abs() < 0.02);
    }

    #[test]
    fn scl_norm_monotone_in_order() {
        let d = domain(17);
        let f = ComplexField::from_fn(&d, 3, |p| C64::new((p[0] * 2.0).sin(), p[1] * p[2]));
        let mut prev = 0.0;
        for s in 0..=4 {
            let v = f.scl_norm(s, 0.7).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn fourth_derivative_needs_ghost_layers() {
        let d = domain(17);
        let inside = ComplexField::from_fn(&d, 0, |p| C64::new(p[0], 0.0));
        assert!(matches!(inside.scl_norm(4, 0.5), Err(Error::FieldIncomplete(_))));
        assert!(matches!(inside.derivative([5, 0, 0]), Err(Error::UnsupportedOrder(5))));
    }

    #[test]
    fn extension_reproduces_quadratics() {
        let d = domain(17);
        let q = |p: Vec3| C64::new(p[0] * p[0] - 2.0 * p[1] * p[2] + p[2], 0.5 * p[1]);
        let mut f = ComplexField::from_fn(&d, 0, q);
        f.extend(3, Some(&q));
        assert_eq!(f.valid_layers(), Some(3));
        for i in 0..d.grid().len() {
            if d.class[i] <= 3 {
                let p = d.grid().point(i);
                assert!((f.values[i] - q(p)).norm() < 1e-9, "class {}", d.class[i]);
            }
        }
        let mut g = ComplexField::from_fn(&d, 0, q);
        g.extend(3, None);
        for i in 0..d.grid().len() {
            if d.class[i] <= 3 {
                assert!((g.values[i] - q(d.grid().point(i))).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn traces_of_polynomials() {
        let d = domain(17);
        let q = |p: Vec3| C64::new(p[0] * p[1] + (p[2] - 4.0).powi(3), 0.0);
        let f = ComplexField::from_fn(&d, 3, q);
        for facet in d.facets.iter().step_by(7) {
            let p = facet.pos;
            let v = f.trace(facet).unwrap();
            assert!((v - q(p)).norm() < 1e-10);
            let g = [p[1], p[0], 3.0 * (p[2] - 4.0).powi(2)];
            let expect = g[0] * facet.normal[0] + g[1] * facet.normal[1] + g[2] * facet.normal[2];
            let dn = f.trace_normal(facet, None).unwrap();
            assert!((dn.re - expect).abs() < 1e-9, "{} vs {}", dn.re, expect);
        }
    }
}
