use bihar_core::discretization::ComplexField;
use bihar_core::expr::Expr;
use bihar_core::forward::{NavierSystem, Perturbation};
use bihar_core::geometry::{DiscretizedDomain, DomainSpec, Shape};
use bihar_core::{Vec3, C64};
use std::sync::Arc;

fn error_at(n: usize, u: &Expr, pert: &Perturbation) -> f64 {
    let spec = DomainSpec { shape: Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 }, grid_n: n };
    let dom = Arc::new(DiscretizedDomain::new(&spec).unwrap());
    let sys = NavierSystem::assemble(&dom, pert).unwrap();
    let lap = Expr::add(Expr::add(u.diff(0).diff(0), u.diff(1).diff(1)), u.diff(2).diff(2));
    let src_expr = pert.apply_exact(u);
    let src: Vec<C64> = dom.mask.nodes.iter().map(|&i| src_expr.eval(dom.grid().point(i))).collect();
    let f0 = |p: Vec3| u.eval(p);
    let f1 = |p: Vec3| lap.eval(p);
    let sol = sys.solve(&f0, &f1, Some(&src)).unwrap();
    let exact = ComplexField::from_fn(&dom, 1, |p| u.eval(p));
    sol.u.restrict(1).sub(&exact).l2_norm().unwrap() / exact.l2_norm().unwrap()
}

#[test]
fn second_order_convergence_with_lower_order_terms() {
    let u = Expr::parse("sin(2*x)*cos(y)*exp(z/3) + i*x*y*z").unwrap();
    let pert = Perturbation::parse(["1 + 0.5*i*y", "x*z", "0.2*exp(i*x)"], "3 - 2*i*y*z").unwrap();
    let errs: Vec<f64> = [17, 33, 65].iter().map(|&n| error_at(n, &u, &pert)).collect();
    let p1 = (errs[0] / errs[1]).log2();
    let p2 = (errs[1] / errs[2]).log2();
    eprintln!("errors {errs:?} orders {p1:.2} {p2:.2}");
    assert!(p2 >= 1.8, "observed order {p2}");
}
