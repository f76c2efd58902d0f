//! Sparse matrices, Shortley-Weller stencils on masked grids, a geometric
//! multigrid V-cycle for the cut-cell Laplacian and restarted GMRES.

use crate::geometry::{Grid, MaskedGrid, Shape, NONE};
use crate::{Error, Result, C64};
use rayon::prelude::*;

pub trait Coef: Copy + Send + Sync {
    fn times(self, x: C64) -> C64;
}

impl Coef for f64 {
    #[inline]
    fn times(self, x: C64) -> C64 {
        x * self
    }
}

impl Coef for C64 {
    #[inline]
    fn times(self, x: C64) -> C64 {
        x * self
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct Csr<T> {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub vals: Vec<T>,
}

impl<T: Coef> Csr<T> {
    pub fn new(n_cols: usize) -> Self {
        Csr { n_cols, indptr: vec![0], indices: Vec::new(), vals: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn push(&mut self, col: usize, v: T) {
        self.indices.push(col as u32);
        self.vals.push(v);
    }

    pub fn end_row(&mut self) {
        self.indptr.push(self.indices.len());
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k] as usize, self.vals[k]))
    }

    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.vals[k].times(x[self.indices[k] as usize]);
            }
            *out = acc;
        });
    }

    pub fn matvec_add(&self, x: &[C64], y: &mut [C64]) {
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.vals[k].times(x[self.indices[k] as usize]);
            }
            *out += acc;
        });
    }
}

/// Boundary contribution: `coef * g(crossing point)` enters row `row`.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryTerm<T> {
    pub row: u32,
    pub crossing: u32,
    pub coef: T,
}

/// Arm-dependent coefficients of the nonuniform three-point stencils along
/// one axis: (plus, minus, centre) for arms a (plus) and b (minus).
#[inline]
pub fn second_derivative_coefs(a: f64, b: f64, dx: f64) -> (f64, f64, f64) {
    let s = 2.0 / (dx * dx);
    (s / (a * (a + b)), s / (b * (a + b)), -s / (a * b))
}

#[inline]
pub fn first_derivative_coefs(a: f64, b: f64, dx: f64) -> (f64, f64, f64) {
    (b / (a * (a + b) * dx), -a / (b * (a + b) * dx), (a - b) / (a * b * dx))
}

/// Shortley-Weller Laplacian on the inside nodes with the boundary values
/// moved to separate terms.
pub fn sw_laplacian(mask: &MaskedGrid) -> (Csr<f64>, Vec<BoundaryTerm<f64>>) {
    let grid = &mask.grid;
    let mut m = Csr::new(mask.num_unknowns());
    let mut bt = Vec::new();
    for (u, &node) in mask.nodes.iter().enumerate() {
        let arms = mask.arms[u];
        let mut diag = 0.0;
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(7);
        for axis in 0..3 {
            let (dp, dm) = (2 * axis, 2 * axis + 1);
            let (cp, cm, c0) = second_derivative_coefs(arms[dp], arms[dm], grid.dx);
            diag += c0;
            for (d, c) in [(dp, cp), (dm, cm)] {
                let cr = mask.arm_crossing[u][d];
                if cr == NONE {
                    let nb = grid.neighbor(node, d).expect("inside node on box face");
                    entries.push((mask.unknown_of[nb] as usize, c));
                } else {
                    bt.push(BoundaryTerm { row: u as u32, crossing: cr, coef: c });
                }
            }
        }
        entries.push((u, diag));
        entries.sort_by_key(|e| e.0);
        for (c, v) in entries {
            m.push(c, v);
        }
        m.end_row();
    }
    (m, bt)
}

struct Level {
    a: Csr<f64>,
    diag: Vec<f64>,
    /// prolongation from the next coarser level (rows: this level's unknowns)
    prolong: Option<Csr<f64>>,
    /// transpose of `prolong` divided by 8
    restrict: Option<Csr<f64>>,
}

/// Geometric multigrid for the cut-cell Laplacian, built by
/// rediscretising the same shape on nested grids.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse_lu: DenseLu,
    pub smoothing_steps: usize,
}

impl Multigrid {
    pub fn new(shape: &Shape, fine: &MaskedGrid) -> Multigrid {
        let mut masks = vec![fine.clone()];
        loop {
            let last = masks.last().unwrap();
            let n = last.grid.n;
            if last.num_unknowns() <= 800 || (n - 1) % 2 != 0 || n < 7 {
                break;
            }
            let g = Grid { n: (n - 1) / 2 + 1, lo: last.grid.lo, dx: 2.0 * last.grid.dx };
            let coarse = MaskedGrid::new(shape, g);
            if coarse.num_unknowns() == 0 {
                break;
            }
            masks.push(coarse);
        }
        let mut levels: Vec<Level> = Vec::new();
        for (l, m) in masks.iter().enumerate() {
            let (a, _) = sw_laplacian(m);
            let diag = (0..a.n_rows()).map(|r| a.row(r).find(|(c, _)| *c == r).unwrap().1).collect();
            let (prolong, restrict) = if l + 1 < masks.len() {
                let p = prolongation(m, &masks[l + 1]);
                let r = transpose_scaled(&p, masks[l + 1].num_unknowns(), 0.125);
                (Some(p), Some(r))
            } else {
                (None, None)
            };
            levels.push(Level { a, diag, prolong, restrict });
        }
        let coarse_lu = DenseLu::new(&levels.last().unwrap().a);
        Multigrid { levels, coarse_lu, smoothing_steps: 2 }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn matrix(&self) -> &Csr<f64> {
        &self.levels[0].a
    }

    /// One V-cycle for A x = b starting from x = 0.
    pub fn vcycle(&self, b: &[C64]) -> Vec<C64> {
        self.cycle(0, b)
    }

    fn cycle(&self, l: usize, b: &[C64]) -> Vec<C64> {
        if l + 1 == self.levels.len() {
            return self.coarse_lu.solve(b);
        }
        let lev = &self.levels[l];
        let n = b.len();
        let mut x = vec![C64::new(0.0, 0.0); n];
        for _ in 0..self.smoothing_steps {
            gauss_seidel(&lev.a, &lev.diag, b, &mut x, true);
        }
        let mut r = vec![C64::new(0.0, 0.0); n];
        lev.a.matvec(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let restrict = lev.restrict.as_ref().unwrap();
        let mut rc = vec![C64::new(0.0, 0.0); restrict.n_rows()];
        restrict.matvec(&r, &mut rc);
        let ec = self.cycle(l + 1, &rc);
        let mut e = vec![C64::new(0.0, 0.0); n];
        lev.prolong.as_ref().unwrap().matvec(&ec, &mut e);
        for i in 0..n {
            x[i] += e[i];
        }
        for _ in 0..self.smoothing_steps {
            gauss_seidel(&lev.a, &lev.diag, b, &mut x, false);
        }
        x
    }
}

fn gauss_seidel(a: &Csr<f64>, diag: &[f64], b: &[C64], x: &mut [C64], forward: bool) {
    let n = b.len();
    let mut sweep = |r: usize| {
        let mut acc = b[r];
        for k in a.indptr[r]..a.indptr[r + 1] {
            let c = a.indices[k] as usize;
            if c != r {
                acc -= x[c] * a.vals[k];
            }
        }
        x[r] = acc / diag[r];
    };
    if forward {
        (0..n).for_each(&mut sweep);
    } else {
        (0..n).rev().for_each(&mut sweep);
    }
}

fn prolongation(fine: &MaskedGrid, coarse: &MaskedGrid) -> Csr<f64> {
    let fg = &fine.grid;
    let cg = &coarse.grid;
    let mut p = Csr::new(coarse.num_unknowns());
    for &node in &fine.nodes {
        let ijk = fg.ijk(node);
        let axis_parts: Vec<Vec<(usize, f64)>> = ijk
            .iter()
            .map(|&i| if i % 2 == 0 { vec![(i / 2, 1.0)] } else { vec![(i / 2, 0.5), (i / 2 + 1, 0.5)] })
            .collect();
        let mut entries = Vec::new();
        for &(a, wa) in &axis_parts[0] {
            for &(b, wb) in &axis_parts[1] {
                for &(c, wc) in &axis_parts[2] {
                    if a >= cg.n || b >= cg.n || c >= cg.n {
                        continue;
                    }
                    let u = coarse.unknown_of[cg.index(a, b, c)];
                    if u != NONE {
                        entries.push((u as usize, wa * wb * wc));
                    }
                }
            }
        }
        entries.sort_by_key(|e| e.0);
        for (c, v) in entries {
            p.push(c, v);
        }
        p.end_row();
    }
    p
}

fn transpose_scaled(p: &Csr<f64>, n_rows_t: usize, s: f64) -> Csr<f64> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows_t];
    for r in 0..p.n_rows() {
        for (c, v) in p.row(r) {
            rows[c].push((r, v * s));
        }
    }
    let mut t = Csr::new(p.n_rows());
    for row in rows {
        for (c, v) in row {
            t.push(c, v);
        }
        t.end_row();
    }
    t
}

/// Dense LU with partial pivoting for the coarsest level.
struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    fn new(a: &Csr<f64>) -> DenseLu {
        let n = a.n_rows();
        let mut lu = vec![0.0; n * n];
        for r in 0..n {
            for (c, v) in a.row(r) {
                lu[r * n + c] = v;
            }
        }
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            for r in k + 1..n {
                if lu[r * n + k].abs() > lu[p * n + k].abs() {
                    p = r;
                }
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
            }
            let d = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / d;
                lu[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[r * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        DenseLu { n, lu, piv }
    }

    fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x: Vec<C64> = self.piv.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let f = self.lu[r * n + c];
                x[r] = x[r] - x[c] * f;
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                x[r] = x[r] - x[c] * self.lu[r * n + c];
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Right-preconditioned restarted GMRES for `apply(x) = b`.
pub fn gmres<A, M>(apply: A, precond: M, b: &[C64], tol: f64, restart: usize, max_iter: usize) -> Result<(Vec<C64>, SolveStats)>
where
    A: Fn(&[C64]) -> Vec<C64>,
    M: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut total = 0;
    let mut rel = 1.0;
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("GMRES residual".into()));
        }
        if rel <= tol {
            break;
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut zs: Vec<Vec<C64>> = Vec::new();
        let mut hcols: Vec<Vec<C64>> = Vec::new();
        let mut cs: Vec<C64> = Vec::new();
        let mut sn: Vec<C64> = Vec::new();
        let mut g = vec![C64::new(beta, 0.0)];
        let mut k = 0;
        while k < restart && total < max_iter {
            let z = precond(&v[k]);
            let mut w = apply(&z);
            zs.push(z);
            let mut h = vec![C64::new(0.0, 0.0); k + 2];
            for (j, vj) in v.iter().enumerate() {
                let hij = dotc(vj, &w);
                h[j] = hij;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            // one reorthogonalisation pass
            for (j, vj) in v.iter().enumerate() {
                let c = dotc(vj, &w);
                h[j] += c;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= c * vi);
            }
            let hn = norm(&w);
            h[k + 1] = C64::new(hn, 0.0);
            for j in 0..k {
                let t = cs[j].conj() * h[j] + sn[j].conj() * h[j + 1];
                h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1];
                h[j] = t;
            }
            let (c, s) = givens(h[k], h[k + 1]);
            h[k] = c.conj() * h[k] + s.conj() * h[k + 1];
            h[k + 1] = C64::new(0.0, 0.0);
            cs.push(c);
            sn.push(s);
            let gk = g[k];
            g.push(-s * gk);
            g[k] = c.conj() * gk;
            hcols.push(h);
            k += 1;
            total += 1;
            rel = g[k].norm() / bnorm;
            if hn == 0.0 || rel <= tol {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        // back substitution
        let mut y = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= hcols[j][i] * y[j];
            }
            y[i] = acc / hcols[i][i];
        }
        for (j, z) in zs.iter().enumerate() {
            x.iter_mut().zip(z).for_each(|(xi, zi)| *xi += y[j] * zi);
        }
        if rel <= tol {
            let ax = apply(&x);
            let r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            rel = norm(&r) / bnorm;
            if rel <= tol * 10.0 {
                return Ok((x, SolveStats { iterations: total, relative_residual: rel }));
            }
        }
    }
    if rel <= tol {
        return Ok((x, SolveStats { iterations: total, relative_residual: rel }));
    }
    Err(Error::NearSingular(format!("GMRES stalled at relative residual {rel:.3e} after {total} iterations")))
}

/// Rotation [[c̄, s̄], [−s, c]] with real c that zeroes the second entry.
fn givens(a: C64, b: C64) -> (C64, C64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    }
    if an == 0.0 {
        return (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    }
    let r = (an * an + bn * bn).sqrt();
    let c = an / r;
    (C64::new(c, 0.0), b / a * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;

    fn ball() -> Shape {
        Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 }
    }

    #[test]
    fn sw_laplacian_exact_on_quadratics() {
        let s = ball();
        let m = MaskedGrid::new(&s, Grid::enclosing(&s, 17).unwrap());
        let (a, bt) = sw_laplacian(&m);
        let f = |p: [f64; 3]| C64::new(p[0] * p[0] + 2.0 * p[1] * p[1] - p[2] * p[0], p[2]);
        let x: Vec<C64> = m.nodes.iter().map(|&n| f(m.grid.point(n))).collect();
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        a.matvec(&x, &mut y);
        for t in &bt {
            y[t.row as usize] += f(m.crossings[t.crossing as usize].point) * t.coef;
        }
        for v in &y {
            assert!((v - C64::new(6.0, 0.0)).norm() < 1e-7, "{v}");
        }
    }

    #[test]
    fn multigrid_preconditioned_gmres_converges() {
        let s = ball();
        let m = MaskedGrid::new(&s, Grid::enclosing(&s, 33).unwrap());
        let mg = Multigrid::new(&s, &m);
        assert!(mg.num_levels() >= 2);
        let a = mg.matrix().clone();
        let b: Vec<C64> = (0..m.num_unknowns()).map(|i| C64::new((i as f64 * 0.37).sin(), 1.0)).collect();
        let apply = |x: &[C64]| {
            let mut y = vec![C64::new(0.0, 0.0); x.len()];
            a.matvec(x, &mut y);
            y
        };
        let (x, stats) = gmres(apply, |r| mg.vcycle(r), &b, 1e-10, 50, 200).unwrap();
        assert!(stats.iterations < 40, "{} iterations", stats.iterations);
        let ax = apply(&x);
        let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        assert!(res / norm(&b) < 1e-9);
    }

    #[test]
    fn gmres_on_small_complex_system() {
        let n = 30;
        let mut m = Csr::<C64>::new(n);
        for r in 0..n {
            if r > 0 {
                m.push(r - 1, C64::new(-1.0, 0.3));
            }
            m.push(r, C64::new(4.0, 1.0));
            if r + 1 < n {
                m.push(r + 1, C64::new(-1.0, -0.2));
            }
            m.end_row();
        }
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let apply = |x: &[C64]| {
            let mut y = vec![C64::new(0.0, 0.0); n];
            m.matvec(x, &mut y);
            y
        };
        let (x, _) = gmres(apply, |r| r.to_vec(), &b, 1e-12, 10, 500).unwrap();
        let ax = apply(&x);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).norm() < 1e-9);
        }
    }
}
