//! Forward problem for `L = Δ² + A·D + q` with Navier data `u = f0`,
//! `Δu = f1` on the boundary.
//!
//! The fourth-order problem is split into two second-order ones with
//! unknowns `(u, w = Δu)` at the inside nodes. Boundary values enter through
//! Shortley-Weller stencils at the grid-line crossings.

use crate::discretization::ComplexField;
use crate::expr::{Expr, VectorExpr};
use crate::geometry::{DiscretizedDomain, GHOST_LAYERS, NONE};
use crate::linalg::{
    first_derivative_coefs, gmres, sw_laplacian, BoundaryTerm, Csr, Multigrid, SolveStats,
};
use crate::vec3::{normalize, sub};
use crate::{Error, Result, Vec3, C64};
use serde::Serialize;
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };

pub type BoundaryFn<'a> = &'a (dyn Fn(Vec3) -> C64 + Sync);

/// Lower-order coefficients (A, q).
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub a: VectorExpr,
    pub q: Expr,
}

impl Perturbation {
    pub fn new(a: VectorExpr, q: Expr) -> Self {
        Perturbation { a, q }
    }

    pub fn zero() -> Self {
        Perturbation { a: VectorExpr::zero(), q: Expr::zero() }
    }

    pub fn parse(a: [&str; 3], q: &str) -> Result<Self> {
        Ok(Perturbation { a: VectorExpr::parse(a)?, q: Expr::parse(q)? })
    }

    /// Coefficients of the formal adjoint: (Ā, −i∇·Ā + q̄).
    pub fn adjoint(&self) -> Perturbation {
        let a = self.a.conj();
        let q = Expr::add(Expr::mul(Expr::constant(-I), a.divergence()), self.q.conj());
        Perturbation { a, q }
    }

    pub fn eval_a(&self, p: Vec3) -> [C64; 3] {
        self.a.eval(p)
    }

    pub fn eval_q(&self, p: Vec3) -> C64 {
        self.q.eval(p)
    }

    /// Exact `L u` for a closed-form `u`.
    pub fn apply_exact(&self, u: &Expr) -> Expr {
        let lap = |e: &Expr| Expr::add(Expr::add(e.diff(0).diff(0), e.diff(1).diff(1)), e.diff(2).diff(2));
        let bilap = lap(&lap(u));
        let mut adu = Expr::zero();
        for k in 0..3 {
            adu = Expr::add(adu, Expr::mul(self.a.0[k].clone(), u.diff(k)));
        }
        let adu = Expr::mul(Expr::constant(-I), adu);
        Expr::add(Expr::add(bilap, adu), Expr::mul(self.q.clone(), u.clone()))
    }

    /// Checks that the coefficients are finite on the domain nodes.
    pub fn validate_on(&self, dom: &DiscretizedDomain) -> Result<()> {
        for (idx, &c) in dom.class.iter().enumerate() {
            if c <= GHOST_LAYERS {
                let p = dom.grid().point(idx);
                let a = self.eval_a(p);
                let q = self.eval_q(p);
                if a.iter().chain(std::iter::once(&q)).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(Error::NonFinite(format!("coefficient at {p:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Apply `L` to a grid field with centred stencils (valid where the field
/// has two more layers than requested).
pub fn apply_operator(f: &ComplexField, pert: &Perturbation) -> Result<ComplexField> {
    let bilap = f.laplacian()?.laplacian()?;
    let g = f.gradient()?;
    let out = bilap.map_with_point(|_, v| v);
    let mut out = out;
    for idx in 0..out.values.len() {
        if !out.valid[idx] {
            continue;
        }
        if !(g[0].valid[idx] && g[1].valid[idx] && g[2].valid[idx] && f.valid[idx]) {
            out.valid[idx] = false;
            continue;
        }
        let p = f.dom.grid().point(idx);
        let a = pert.eval_a(p);
        let mut adu = C64::new(0.0, 0.0);
        for k in 0..3 {
            adu += a[k] * g[k].values[idx];
        }
        out.values[idx] += -I * adu + pert.eval_q(p) * f.values[idx];
    }
    Ok(out)
}

/// Assembled split system for one perturbation on one domain.
pub struct NavierSystem {
    pub dom: Arc<DiscretizedDomain>,
    pub pert: Perturbation,
    lap: Csr<f64>,
    lap_bc: Vec<BoundaryTerm<f64>>,
    lower: Csr<C64>,
    lower_bc: Vec<BoundaryTerm<C64>>,
    mg: Multigrid,
    pub tol: f64,
    pub max_iter: usize,
}

/// Solution of the Navier problem with its second variable `w = Δu`.
#[derive(Clone, Debug)]
pub struct NavierSolution {
    pub u: ComplexField,
    pub w: ComplexField,
    pub stats: SolveStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssemblyInfo {
    pub unknowns: usize,
    pub crossings: usize,
    pub multigrid_levels: usize,
}

impl NavierSystem {
    pub fn assemble(dom: &Arc<DiscretizedDomain>, pert: &Perturbation) -> Result<NavierSystem> {
        pert.validate_on(dom)?;
        let mask = &dom.mask;
        let grid = &mask.grid;
        let (lap, lap_bc) = sw_laplacian(mask);
        let mut lower = Csr::new(mask.num_unknowns());
        let mut lower_bc = Vec::new();
        for (u, &node) in mask.nodes.iter().enumerate() {
            let p = grid.point(node);
            let a = pert.eval_a(p);
            let q = pert.eval_q(p);
            let arms = mask.arms[u];
            let mut diag = q;
            let mut entries: Vec<(usize, C64)> = Vec::with_capacity(7);
            for axis in 0..3 {
                let coef = -I * a[axis];
                if coef == C64::new(0.0, 0.0) {
                    continue;
                }
                let (dp, dm) = (2 * axis, 2 * axis + 1);
                let (cp, cm, c0) = first_derivative_coefs(arms[dp], arms[dm], grid.dx);
                diag += coef * c0;
                for (d, c) in [(dp, cp), (dm, cm)] {
                    let cr = mask.arm_crossing[u][d];
                    if cr == NONE {
                        let nb = grid.neighbor(node, d).unwrap();
                        entries.push((mask.unknown_of[nb] as usize, coef * c));
                    } else {
                        lower_bc.push(BoundaryTerm { row: u as u32, crossing: cr, coef: coef * c });
                    }
                }
            }
            entries.push((u, diag));
            entries.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in entries {
                if last == Some(c) {
                    *lower.vals.last_mut().unwrap() += v;
                } else {
                    lower.push(c, v);
                    last = Some(c);
                }
            }
            lower.end_row();
        }
        let mg = Multigrid::new(dom.shape(), mask);
        Ok(NavierSystem {
            dom: dom.clone(),
            pert: pert.clone(),
            lap,
            lap_bc,
            lower,
            lower_bc,
            mg,
            tol: 1e-10,
            max_iter: 600,
        })
    }

    pub fn info(&self) -> AssemblyInfo {
        AssemblyInfo {
            unknowns: self.dom.mask.num_unknowns(),
            crossings: self.dom.mask.crossings.len(),
            multigrid_levels: self.mg.num_levels(),
        }
    }

    fn n(&self) -> usize {
        self.dom.mask.num_unknowns()
    }

    /// Block operator [[Δ, −I], [A·D + q, Δ]] acting on (u, w).
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let n = self.n();
        let (u, w) = x.split_at(n);
        let mut y = vec![C64::new(0.0, 0.0); 2 * n];
        {
            let (y1, y2) = y.split_at_mut(n);
            self.lap.matvec(u, y1);
            for i in 0..n {
                y1[i] -= w[i];
            }
            self.lower.matvec(u, y2);
            self.lap.matvec_add(w, y2);
        }
        y
    }

    fn precondition(&self, r: &[C64]) -> Vec<C64> {
        let n = self.n();
        let (r1, r2) = r.split_at(n);
        let w = self.mg.vcycle(r2);
        let rhs: Vec<C64> = r1.iter().zip(&w).map(|(a, b)| a + b).collect();
        let u = self.mg.vcycle(&rhs);
        let mut out = u;
        out.extend_from_slice(&w);
        out
    }

    /// Right-hand side for Navier data (f0, f1) and a source at the inside nodes.
    pub fn rhs(&self, f0: BoundaryFn, f1: BoundaryFn, source: Option<&[C64]>) -> Vec<C64> {
        let n = self.n();
        let cr = &self.dom.mask.crossings;
        let g0: Vec<C64> = cr.iter().map(|c| f0(c.point)).collect();
        let g1: Vec<C64> = cr.iter().map(|c| f1(c.point)).collect();
        let mut b = vec![C64::new(0.0, 0.0); 2 * n];
        if let Some(s) = source {
            b[n..].copy_from_slice(s);
        }
        for t in &self.lap_bc {
            b[t.row as usize] -= g0[t.crossing as usize] * t.coef;
            b[n + t.row as usize] -= g1[t.crossing as usize] * t.coef;
        }
        for t in &self.lower_bc {
            b[n + t.row as usize] -= g0[t.crossing as usize] * t.coef;
        }
        b
    }

    pub fn solve(&self, f0: BoundaryFn, f1: BoundaryFn, source: Option<&[C64]>) -> Result<NavierSolution> {
        let b = self.rhs(f0, f1, source);
        if b.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("right-hand side".into()));
        }
        let (x, stats) = gmres(|x| self.apply(x), |r| self.precondition(r), &b, self.tol, 80, self.max_iter)?;
        let n = self.n();
        let mut u = ComplexField::from_unknowns(&self.dom, &x[..n]);
        let mut w = ComplexField::from_unknowns(&self.dom, &x[n..]);
        u.extend(GHOST_LAYERS, Some(f0));
        w.extend(GHOST_LAYERS, Some(f1));
        if !(u.is_finite() && w.is_finite()) {
            return Err(Error::NonFinite("solution".into()));
        }
        Ok(NavierSolution { u, w, stats })
    }

    /// Residual of the discrete block system relative to its right-hand side.
    pub fn residual(&self, sol: &NavierSolution, f0: BoundaryFn, f1: BoundaryFn, source: Option<&[C64]>) -> f64 {
        let b = self.rhs(f0, f1, source);
        let mut x = sol.u.unknowns();
        x.extend(sol.w.unknowns());
        let ax = self.apply(&x);
        let num: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        num / den.max(f64::MIN_POSITIVE)
    }
}

/// Low-degree boundary functions: restrictions of the monomials
/// ω1^a ω2^b ω3^c (c ≤ 1) of the direction from the centre.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BoundaryBasis {
    pub degree: usize,
    pub center: Vec3,
    pub exponents: Vec<[u32; 3]>,
}

impl BoundaryBasis {
    pub fn new(degree: usize, center: Vec3) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree as u32 {
            for c in 0..=1u32.min(total) {
                for a in (0..=(total - c)).rev() {
                    exponents.push([a, total - c - a, c]);
                }
            }
        }
        BoundaryBasis { degree, center, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, j: usize, p: Vec3) -> f64 {
        let d = normalize(sub(p, self.center));
        let e = self.exponents[j];
        d[0].powi(e[0] as i32) * d[1].powi(e[1] as i32) * d[2].powi(e[2] as i32)
    }
}

/// Sampled Dirichlet-to-Neumann map: column j holds the traces
/// (∂νu, ∂νΔu) at the facets for the j-th Navier datum. Data 0..m put the
/// basis function in the value slot, m..2m in the Laplacian slot.
#[derive(Clone, Debug, Serialize)]
pub struct DnMap {
    pub basis: BoundaryBasis,
    pub facet_count: usize,
    /// facets kept (all when unrestricted)
    pub facets: Vec<usize>,
    pub sqrt_weights: Vec<f64>,
    /// columns[j][row], rows 0..k are ∂νu, k..2k are ∂ν(Δu)
    pub columns: Vec<Vec<C64>>,
}

impl DnMap {
    pub fn restrict(&self, keep: &[bool]) -> DnMap {
        let sel: Vec<usize> = (0..self.facets.len()).filter(|&i| keep[self.facets[i]]).collect();
        let k = self.facets.len();
        let columns = self
            .columns
            .iter()
            .map(|col| sel.iter().map(|&i| col[i]).chain(sel.iter().map(|&i| col[k + i])).collect())
            .collect();
        DnMap {
            basis: self.basis.clone(),
            facet_count: self.facet_count,
            facets: sel.iter().map(|&i| self.facets[i]).collect(),
            sqrt_weights: sel.iter().map(|&i| self.sqrt_weights[i]).collect(),
            columns,
        }
    }

    /// Weighted block (0: ∂νu, 1: ∂νΔu) as columns.
    fn block(&self, b: usize) -> Vec<Vec<C64>> {
        let k = self.facets.len();
        self.columns
            .iter()
            .map(|c| (0..k).map(|i| c[b * k + i] * self.sqrt_weights[i]).collect())
            .collect()
    }
}

/// Largest singular value of a column-stored matrix by power iteration on
/// its Gram matrix.
pub fn spectral_norm(cols: &[Vec<C64>]) -> f64 {
    let n = cols.len();
    if n == 0 {
        return 0.0;
    }
    let mut gram = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a.conj() * b).sum();
        }
    }
    let mut v = vec![C64::new(1.0, 0.0); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut w = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                w[i] += gram[i * n + j] * v[j];
            }
        }
        let nw = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w.iter().map(|z| z / nw).collect();
        if (next - lambda).abs() <= 1e-13 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

pub fn dn_map(sys: &NavierSystem, basis: &BoundaryBasis) -> Result<DnMap> {
    let dom = &sys.dom;
    let m = basis.len();
    let k = dom.facets.len();
    let zero = |_: Vec3| C64::new(0.0, 0.0);
    let mut columns = Vec::with_capacity(2 * m);
    for slot in 0..2 {
        for j in 0..m {
            let g = |p: Vec3| C64::new(basis.eval(j, p), 0.0);
            let (f0, f1): (BoundaryFn, BoundaryFn) = if slot == 0 { (&g, &zero) } else { (&zero, &g) };
            let sol = sys.solve(f0, f1, None)?;
            let mut col = vec![C64::new(0.0, 0.0); 2 * k];
            for (i, facet) in dom.facets.iter().enumerate() {
                col[i] = sol.u.trace_normal(facet, Some(f0(facet.pos)))?;
                col[k + i] = sol.w.trace_normal(facet, Some(f1(facet.pos)))?;
            }
            columns.push(col);
        }
    }
    Ok(DnMap {
        basis: basis.clone(),
        facet_count: k,
        facets: (0..k).collect(),
        sqrt_weights: dom.facets.iter().map(|f| f.weight.sqrt()).collect(),
        columns,
    })
}

/// Relative gap between two sampled maps: the larger of the two block-wise
/// ratios ‖M1 − M2‖ / max(‖M1‖, ‖M2‖) in the weighted operator norm.
pub fn dn_gap(a: &DnMap, b: &DnMap) -> Result<f64> {
    if a.basis != b.basis || a.facets != b.facets || a.facet_count != b.facet_count {
        return Err(Error::BasisMismatch("maps sampled on different data or facets".into()));
    }
    let mut worst: f64 = 0.0;
    for blk in 0..2 {
        let ba = a.block(blk);
        let bb = b.block(blk);
        let diff: Vec<Vec<C64>> = ba.iter().zip(&bb).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
        let scale = spectral_norm(&ba).max(spectral_norm(&bb));
        if scale > 0.0 {
            worst = worst.max(spectral_norm(&diff) / scale);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenReport {
    pub lhs: C64,
    pub rhs: C64,
    /// |lhs − rhs| divided by the sum of the magnitudes of all terms.
    pub residual: f64,
}

/// Green's formula for L and its adjoint on closed-form fields.
pub fn green_residual<U, V>(dom: &Arc<DiscretizedDomain>, pert: &Perturbation, u: U, v: V) -> Result<GreenReport>
where
    U: Fn(Vec3) -> C64 + Sync,
    V: Fn(Vec3) -> C64 + Sync,
{
    let uf = ComplexField::from_fn(dom, GHOST_LAYERS, &u);
    let vf = ComplexField::from_fn(dom, GHOST_LAYERS, &v);
    let lu = apply_operator(&uf, pert)?;
    let lsv = apply_operator(&vf, &pert.adjoint())?;
    let t1 = lu.inner(&vf)?;
    let t2 = uf.inner(&lsv)?;
    let lhs = t1 - t2;
    let lap_u = uf.laplacian()?;
    let lap_v = vf.laplacian()?;
    let mut rhs = C64::new(0.0, 0.0);
    let mut mag = t1.norm() + t2.norm();
    for f in &dom.facets {
        let uv = u(f.pos);
        let vv = v(f.pos).conj();
        let a = pert.eval_a(f.pos);
        let nu_a: C64 = (0..3).map(|k| a[k] * f.normal[k]).sum();
        let du = uf.trace_normal(f, Some(u(f.pos)))?;
        let dv = vf.trace_normal(f, Some(v(f.pos)))?.conj();
        let lu_b = lap_u.trace(f)?;
        let lv_b = lap_v.trace(f)?.conj();
        let dlu = lap_u.trace_normal(f, None)?;
        let dlv = lap_v.trace_normal(f, None)?.conj();
        let terms = [
            -I * nu_a * uv * vv,
            dlu * vv,
            -lu_b * dv,
            du * lv_b,
            -uv * dlv,
        ];
        for t in terms {
            rhs += t * f.weight;
            mag += t.norm() * f.weight;
        }
    }
    Ok(GreenReport { lhs, rhs, residual: (lhs - rhs).norm() / mag.max(f64::MIN_POSITIVE) })
}

/// Solution u1 of L1 u1 = 0 with the Navier data of u2, obtained as
/// u1 = u2 + w where L1 w = (A2 − A1)·D u2 + (q2 − q1) u2 with zero data.
pub struct MatchedSolution {
    pub u1: ComplexField,
    /// u1 − u2 with its Laplacian, both with zero Navier data.
    pub diff: NavierSolution,
}

/// `grad_u2` may be supplied when a more accurate gradient than the centred
/// stencils is available.
pub fn match_solution(
    sys1: &NavierSystem,
    u2: &ComplexField,
    grad_u2: Option<&[ComplexField; 3]>,
    pert2: &Perturbation,
) -> Result<MatchedSolution> {
    let dom = &sys1.dom;
    let owned;
    let g = match grad_u2 {
        Some(g) => g,
        None => {
            owned = u2.gradient()?;
            &owned
        }
    };
    let pert1 = &sys1.pert;
    let mut src = Vec::with_capacity(dom.mask.num_unknowns());
    for &node in &dom.mask.nodes {
        let p = dom.grid().point(node);
        let a1 = pert1.eval_a(p);
        let a2 = pert2.eval_a(p);
        let mut s = C64::new(0.0, 0.0);
        for k in 0..3 {
            if !g[k].valid[node] {
                return Err(Error::FieldIncomplete(node));
            }
            s += (a2[k] - a1[k]) * (-I) * g[k].values[node];
        }
        s += (pert2.eval_q(p) - pert1.eval_q(p)) * u2.values[node];
        src.push(s);
    }
    let zero = |_: Vec3| C64::new(0.0, 0.0);
    let diff = sys1.solve(&zero, &zero, Some(&src))?;
    let u1 = u2.add(&diff.u);
    Ok(MatchedSolution { u1, diff })
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
    fn quadratic_is_reproduced() {
        let d = domain(17);
        let sys = NavierSystem::assemble(&d, &Perturbation::zero()).unwrap();
        let u = |p: Vec3| C64::new(p[0] * p[0] + p[1] * p[1], 0.0);
        let f1 = |_: Vec3| C64::new(4.0, 0.0);
        let sol = sys.solve(&u, &f1, None).unwrap();
        for &n in &d.mask.nodes {
            assert!((sol.u.values[n] - u(d.grid().point(n))).norm() < 1e-6);
        }
    }

    #[test]
    fn adjoint_of_adjoint_is_identity() {
        let p = Perturbation::parse(["(1+i)*x*y", "exp(i*z)", "0.3"], "2 - i*x").unwrap();
        let pp = p.adjoint().adjoint();
        for pt in [[0.1, 0.2, 3.9], [-0.4, 0.3, 4.2]] {
            for k in 0..3 {
                assert!((pp.eval_a(pt)[k] - p.eval_a(pt)[k]).norm() < 1e-13);
            }
            assert!((pp.eval_q(pt) - p.eval_q(pt)).norm() < 1e-12);
        }
    }

    #[test]
    fn green_formula_exact_for_cubics() {
        let d = domain(17);
        let u = |p: Vec3| C64::new(p[0] * p[0] * p[1] - p[2] * p[2] * p[2] * 0.1 + p[0], p[1] * p[2]);
        let v = |p: Vec3| C64::new(p[2] * p[0] * p[1] + 1.0, -p[0] * p[0] * p[0]);
        let r = green_residual(&d, &Perturbation::zero(), u, v).unwrap();
        assert!(r.residual < 1e-8, "{r:?}");
    }

    #[test]
    fn basis_size() {
        assert_eq!(BoundaryBasis::new(4, [0.0; 3]).len(), 25);
    }

    #[test]
    fn gap_rejects_mismatched_bases() {
        let a = DnMap {
            basis: BoundaryBasis::new(1, [0.0; 3]),
            facet_count: 1,
            facets: vec![0],
            sqrt_weights: vec![1.0],
            columns: vec![],
        };
        let mut b = a.clone();
        b.basis = BoundaryBasis::new(2, [0.0; 3]);
        assert!(matches!(dn_gap(&a, &b), Err(Error::BasisMismatch(_))));
    }
}
