//! The five subcommands. Each returns its checks, a serializable result and
//! its tables; `main` writes them into the run directory.

use bihar_core::carleman::{sweep, CarlemanReport};
use bihar_core::cgo::{remainder_scaling, CgoBuilder, CgoDiagnostics, RemainderScaling};
use bihar_core::discretization::ComplexField;
use bihar_core::expr::{Expr, VectorExpr};
use bihar_core::forward::{dn_map, green_residual, BoundaryBasis, NavierSystem};
use bihar_core::geometry::VolumeRule;
use bihar_core::identities::{
    boundary_decay, distinguisher, front_neighbourhood, limit_consistency, plane_integrals, q_identity, DecayFit,
    Distinction, FlooredValue, IdentityQuadrature, LeadingPair, LimitConsistency, MainIdentityEntry, PairProblem,
    SliceIntegralSet, Verdict,
};
use bihar_core::transport::{holomorphic_family, SliceOptions, SliceSetup};
use bihar_core::weights::Sign;
use bihar_core::{Vec3, C64};
use serde::Serialize;

use crate::config::{RunConfig, SignChoice};
use crate::report::{num, Check, Table};
use crate::CliError;

pub struct Outcome<T> {
    pub checks: Vec<Check>,
    pub results: T,
    pub tables: Vec<Table>,
}

/// Main-identity defects above this are discretization failures.
const DEFECT_TOLERANCE: f64 = 1e-2;

fn ctx<T>(what: &str, r: bihar_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Core(format!("{what}: {e}")))
}

fn cnum(z: C64) -> [String; 2] {
    [num(z.re), num(z.im)]
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ForwardLevel {
    pub grid: usize,
    pub dx: f64,
    pub relative_error: f64,
    pub green_residual: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct ForwardResults {
    pub levels: Vec<ForwardLevel>,
    /// observed orders between consecutive grids
    pub orders: Vec<f64>,
    pub green_orders: Vec<f64>,
}

pub fn forward(cfg: &RunConfig) -> Result<Outcome<ForwardResults>, CliError> {
    let fc = &cfg.forward;
    if fc.grids.len() < 2 {
        return Err(CliError::ConfigInvalid("forward.grids needs at least two grids".into()));
    }
    let pert = fc.coefficients.as_ref().unwrap_or(&cfg.pair.second).perturbation()?;
    let parse = |s: &str| Expr::parse(s).map_err(|e| CliError::ConfigInvalid(format!("{s:?}: {e}")));
    let u = parse(&fc.solution)?;
    let v = parse(&fc.test_function)?;
    let lap = Expr::add(Expr::add(u.diff(0).diff(0), u.diff(1).diff(1)), u.diff(2).diff(2));
    let source = pert.apply_exact(&u);
    let mut levels = Vec::new();
    for &n in &fc.grids {
        let dom = cfg.domain_at(n)?;
        let sys = ctx("assembly", NavierSystem::assemble(&dom, &pert))?;
        let src: Vec<C64> = dom.mask.nodes.iter().map(|&i| source.eval(dom.grid().point(i))).collect();
        let f0 = |p: Vec3| u.eval(p);
        let f1 = |p: Vec3| lap.eval(p);
        let sol = ctx("forward solve", sys.solve(&f0, &f1, Some(&src)))?;
        let exact = ComplexField::from_fn(&dom, 1, |p| u.eval(p));
        let err = ctx("error norm", sol.u.restrict(1).sub(&exact).l2_norm())?;
        let scale = ctx("error norm", exact.l2_norm())?;
        let green = ctx("green formula", green_residual(&dom, &pert, |p| u.eval(p), |p| v.eval(p)))?;
        levels.push(ForwardLevel {
            grid: n,
            dx: dom.dx(),
            relative_error: err / scale,
            green_residual: green.residual,
            solver_iterations: sol.stats.iterations,
        });
    }
    let order = |a: &ForwardLevel, b: &ForwardLevel, f: fn(&ForwardLevel) -> f64| (f(a) / f(b)).ln() / (a.dx / b.dx).ln();
    let orders: Vec<f64> = levels.windows(2).map(|w| order(&w[0], &w[1], |l| l.relative_error)).collect();
    let green_orders: Vec<f64> = levels.windows(2).map(|w| order(&w[0], &w[1], |l| l.green_residual)).collect();
    let checks = vec![
        Check::at_least("convergence_order", *orders.last().unwrap(), fc.min_order),
        Check::at_least("green_residual_order", *green_orders.last().unwrap(), fc.min_green_order),
    ];
    let mut t = Table::new("forward", &["grid", "dx", "relative_error", "green_residual", "iterations"]);
    for l in &levels {
        t.push(vec![l.grid.to_string(), num(l.dx), num(l.relative_error), num(l.green_residual), l.solver_iterations.to_string()]);
    }
    Ok(Outcome { checks, results: ForwardResults { levels, orders, green_orders }, tables: vec![t] })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct CgoBranch {
    pub sign: Sign,
    pub diagnostics: Vec<CgoDiagnostics>,
    pub scaling: RemainderScaling,
}

#[derive(Debug, Serialize)]
pub struct CgoResults {
    pub oscillation_floor: f64,
    pub generator: String,
    pub branches: Vec<CgoBranch>,
}

pub fn cgo(cfg: &RunConfig) -> Result<Outcome<CgoResults>, CliError> {
    let dom = cfg.domain_at(cfg.domain.grid)?;
    let wp = cfg.weights()?;
    let floor = cfg.check_floor(&dom, &wp)?;
    let pert = cfg.pair.second.perturbation()?;
    let generator = cfg.cgo.generator.build()?;
    let setup = ctx("slice setup", SliceSetup::new(&dom, &wp, cfg.cgo.slices.clone()))?;
    let builder = ctx("cgo builder", CgoBuilder::new(&dom, &wp, &pert))?;
    let signs = match cfg.cgo.sign {
        SignChoice::Plus => vec![Sign::Plus],
        SignChoice::Minus => vec![Sign::Minus],
        SignChoice::Both => vec![Sign::Plus, Sign::Minus],
    };
    let mut checks = Vec::new();
    let mut branches = Vec::new();
    let mut t = Table::new(
        "cgo",
        &["sign", "h_requested", "h", "rhs_l2", "r_scl_norm", "bound_ratio", "pde_residual", "grad_r_trace_l2", "lap_r_trace_l2", "iterations"],
    );
    for sign in signs {
        let family = ctx("transport amplitudes", builder.family(&setup, sign, &generator))?;
        let mut diagnostics = Vec::new();
        for &h in &cfg.h_list {
            let sol = ctx(&format!("cgo solve at h = {h}"), builder.solve(&family, h))?;
            let d = sol.diagnostics;
            t.push(vec![
                format!("{sign:?}").to_lowercase(),
                num(d.h_requested),
                num(d.h),
                num(d.rhs_l2),
                num(d.r_scl_norm),
                num(d.bound_ratio),
                num(d.pde_residual),
                num(d.grad_r_trace_l2),
                num(d.lap_r_trace_l2),
                d.iterations.to_string(),
            ]);
            diagnostics.push(d);
        }
        let scaling = ctx("remainder scaling", remainder_scaling(&diagnostics))?;
        let tag = format!("{sign:?}").to_lowercase();
        checks.push(Check::within(&format!("{tag}.remainder_slope"), scaling.r_scl.slope, cfg.cgo.slope_band));
        checks.push(Check::below(&format!("{tag}.bound_ratio_spread"), scaling.bound_ratio_spread, cfg.cgo.max_bound_spread));
        branches.push(CgoBranch { sign, diagnostics, scaling });
    }
    Ok(Outcome { checks, results: CgoResults { oscillation_floor: floor, generator: generator.label(), branches }, tables: vec![t] })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct CarlemanResults {
    pub oscillation_floor: f64,
    pub reports: Vec<CarlemanReport>,
}

pub fn carleman(cfg: &RunConfig) -> Result<Outcome<CarlemanResults>, CliError> {
    let dom = cfg.domain_at(cfg.domain.grid)?;
    let wp = cfg.weights()?;
    let floor = cfg.check_floor(&dom, &wp)?;
    let pert = cfg.pair.second.perturbation()?;
    let options = cfg.ensemble();
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut t = Table::new("carleman", &["estimate", "h", "min_ratio", "median_ratio", "argmin"]);
    for &est in &cfg.carleman.estimates {
        let r = ctx(est.name(), sweep(&dom, &wp, &pert, est, &cfg.h_list, cfg.carleman.ensemble_size, &options))?;
        for i in 0..r.h_list.len() {
            t.push(vec![est.name().into(), num(r.h_list[i]), num(r.minima[i]), num(r.medians[i]), r.argmin[i].to_string()]);
        }
        let lo = r.minima.iter().cloned().fold(f64::INFINITY, f64::min);
        let at_largest = r.minima[0];
        checks.push(Check::at_least(&format!("{}.lower_bound", est.name()), lo / at_largest, 0.5));
        checks.push(Check::below(&format!("{}.spread", est.name()), r.spread, cfg.carleman.max_spread));
        reports.push(r);
    }
    Ok(Outcome { checks, results: CarlemanResults { oscillation_floor: floor, reports }, tables: vec![t] })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct GeneratorValue {
    pub generator: String,
    pub value: FlooredValue,
}

#[derive(Debug, Serialize)]
pub struct IdentityResults {
    pub oscillation_floor: f64,
    pub generator: String,
    pub entries: Vec<MainIdentityEntry>,
    pub decay: DecayFit,
    pub limit: LimitConsistency,
    pub slice_integrals: Vec<SliceIntegralSet>,
    pub slice_floor_ratio: f64,
    pub q_values: Vec<GeneratorValue>,
    pub q_floor_ratio: f64,
}

pub fn identity(cfg: &RunConfig) -> Result<Outcome<IdentityResults>, CliError> {
    let ic = &cfg.identity;
    let dom = cfg.domain_at(cfg.domain.grid)?;
    let wp = cfg.weights()?;
    let floor = cfg.check_floor(&dom, &wp)?;
    let shape = cfg.shape()?;
    let p1 = cfg.pair.first.perturbation()?;
    let p2 = cfg.pair.second.perturbation()?;
    let generator = ic.generator.build()?;
    if cfg.h_list.len() < 3 {
        return Err(CliError::ConfigInvalid("identity needs at least three h values".into()));
    }

    let setup = ctx("slice setup", SliceSetup::new(&dom, &wp, ic.slices.clone()))?;
    let problem = ctx("pair problem", PairProblem::new(&setup, &p1, &p2, &generator, ic.front_eps))?;
    let entries = cfg
        .h_list
        .iter()
        .map(|&h| ctx(&format!("main identity at h = {h}"), problem.main_identity(h)))
        .collect::<Result<Vec<_>, _>>()?;
    let decay = ctx("boundary decay", boundary_decay(&entries, ic.decay_threshold))?;
    let rule = VolumeRule::new(&shape, ic.volume_points, ic.volume_points);
    let direct = ctx("limit identity", problem.limit_value(&rule))?;
    let limit = ctx("limit consistency", limit_consistency(&entries, direct, ic.limit_tolerance))?;

    // slice integrals of the A-difference over the generator sweep
    let diff_a: VectorExpr = p2.a.sub(&p1.a);
    let generators = holomorphic_family(ic.max_z_degree, ic.max_theta_mode);
    let slice_integrals: Vec<SliceIntegralSet> = [Sign::Plus, Sign::Minus]
        .into_iter()
        .map(|dir| plane_integrals(&shape, wp.frame(), &diff_a, &generators, dir, &ic.quadrature))
        .collect();
    let slice_floor_ratio = slice_integrals.iter().map(|s| s.max_floor_ratio()).fold(0.0, f64::max);

    // q-identity with floors from a refined rule and a finer Φ-pair
    let diff_q = Expr::sub(p2.q.clone(), p1.q.clone());
    let fine_setup = ctx(
        "fine slice setup",
        SliceSetup::new(&dom, &wp, SliceOptions { step_factor: 0.7 * ic.slices.step_factor, ..ic.slices.clone() }),
    )?;
    let quad = IdentityQuadrature::new(
        &shape,
        ic.volume_points,
        LeadingPair::phi_pair(&setup, Sign::Plus),
        LeadingPair::phi_pair(&fine_setup, Sign::Plus),
    );
    let q_values = generators
        .iter()
        .map(|g| {
            let value = ctx("q identity", quad.floored(|rule, pair| Ok(q_identity(&diff_q, pair, g, rule))))?;
            Ok(GeneratorValue { generator: g.label(), value })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let q_floor_ratio = q_values.iter().map(|v| v.value.ratio()).fold(0.0, f64::max);

    let worst_defect = entries.iter().map(|e| e.defect).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("main_identity_defect", worst_defect, DEFECT_TOLERANCE),
        Check::at_least("boundary_decay_lap_slope", decay.lap.slope, ic.decay_threshold),
        Check::at_least("boundary_decay_grad_slope", decay.grad.slope, ic.decay_threshold),
        Check::at_most("limit_relative_error", limit.relative_error, ic.limit_tolerance),
    ];
    // a vanishing difference must stay inside the floor, a nonzero one must clear it
    if diff_a.is_zero() {
        checks.push(Check::below("slice_integrals_floor_ratio", slice_floor_ratio, ic.floor_factor));
    } else {
        checks.push(Check::above("slice_integrals_floor_ratio", slice_floor_ratio, ic.floor_factor));
    }
    if diff_q.is_zero() {
        checks.push(Check::below("q_identity_floor_ratio", q_floor_ratio, ic.floor_factor));
    } else {
        checks.push(Check::above("q_identity_floor_ratio", q_floor_ratio, ic.floor_factor));
    }

    let mut te = Table::new(
        "main_identity",
        &["h", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "defect", "back_lap_term", "back_grad_term", "scaled_lhs_re", "scaled_lhs_im"],
    );
    for (e, s) in entries.iter().zip(&limit.scaled_lhs) {
        let mut row = vec![num(e.h)];
        row.extend(cnum(e.lhs));
        row.extend(cnum(e.rhs));
        row.extend([num(e.defect), num(e.back_lap_term), num(e.back_grad_term)]);
        row.extend(cnum(*s));
        te.push(row);
    }
    let mut ts = Table::new("slice_integrals", &["direction", "generator", "theta", "re", "im", "floor"]);
    for set in &slice_integrals {
        for (gi, g) in set.generators.iter().enumerate() {
            for (ti, th) in set.thetas.iter().enumerate() {
                if let (Some(v), Some(f)) = (set.values[gi][ti], set.floors[gi][ti]) {
                    ts.push(vec![format!("{:?}", set.direction).to_lowercase(), g.clone(), num(*th), num(v.re), num(v.im), num(f)]);
                }
            }
        }
    }
    let mut tq = Table::new("q_identity", &["generator", "re", "im", "floor"]);
    for v in &q_values {
        tq.push(vec![v.generator.clone(), num(v.value.value.re), num(v.value.value.im), num(v.value.floor)]);
    }
    let results = IdentityResults {
        oscillation_floor: floor,
        generator: generator.label(),
        entries,
        decay,
        limit,
        slice_integrals,
        slice_floor_ratio,
        q_values,
        q_floor_ratio,
    };
    Ok(Outcome { checks, results, tables: vec![te, ts, tq] })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct GridComparison {
    pub grid: usize,
    pub front_facets: usize,
    pub distinction: Distinction,
}

#[derive(Debug, Serialize)]
pub struct DistinguishResults {
    pub comparisons: Vec<GridComparison>,
    /// change of the gap between the two grids
    pub paired_grid_noise: f64,
    /// "indistinguishable" or "distinct"
    pub verdict: &'static str,
}

pub fn distinguish(cfg: &RunConfig) -> Result<Outcome<DistinguishResults>, CliError> {
    let dc = &cfg.distinguish;
    let shape = cfg.shape()?;
    let wp = cfg.weights()?;
    let p1 = cfg.pair.first.perturbation()?;
    let p2 = cfg.pair.second.perturbation()?;
    let basis = BoundaryBasis::new(dc.basis_degree, shape.center());
    let mut comparisons = Vec::new();
    for &n in &dc.grids {
        let dom = cfg.domain_at(n)?;
        let keep = ctx("front neighbourhood", front_neighbourhood(&dom, &wp, dc.front_eps))?;
        let map = |p| -> Result<_, CliError> {
            let sys = ctx("assembly", NavierSystem::assemble(&dom, p))?;
            Ok(ctx("boundary map", dn_map(&sys, &basis))?.restrict(&keep))
        };
        let (m1, m2) = (map(&p1)?, map(&p2)?);
        let distinction = ctx("distinguisher", distinguisher(&m1, &m2, dc.tolerance))?;
        comparisons.push(GridComparison { grid: n, front_facets: keep.iter().filter(|k| **k).count(), distinction });
    }
    let noise = (comparisons[0].distinction.gap - comparisons[1].distinction.gap).abs();
    let fine = &comparisons[1].distinction;
    let (verdict, check) = match fine.verdict {
        Verdict::Indistinguishable => ("indistinguishable", Check::at_most("gap", fine.gap, dc.tolerance)),
        Verdict::Distinct { .. } => ("distinct", Check::above("gap_over_noise", fine.gap / noise.max(f64::MIN_POSITIVE), dc.floor_factor)),
    };
    let mut t = Table::new("distinguish", &["grid", "front_facets", "gap", "verdict"]);
    for c in &comparisons {
        let v = if matches!(c.distinction.verdict, Verdict::Indistinguishable) { "indistinguishable" } else { "distinct" };
        t.push(vec![c.grid.to_string(), c.front_facets.to_string(), num(c.distinction.gap), v.into()]);
    }
    Ok(Outcome { checks: vec![check], results: DistinguishResults { comparisons, paired_grid_noise: noise, verdict }, tables: vec![t] })
}
