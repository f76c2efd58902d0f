//! Shared fixtures for the kernel benchmarks: the desk-scale ball and its
//! standard viewpoint at a chosen grid size.

use bihar_core::forward::Perturbation;
use bihar_core::geometry::{DiscretizedDomain, DomainSpec, Shape, Viewpoint};
use bihar_core::weights::WeightPair;
use std::sync::Arc;

pub fn shape() -> Shape {
    Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 }
}

pub fn domain(n: usize) -> Arc<DiscretizedDomain> {
    Arc::new(DiscretizedDomain::new(&DomainSpec { shape: shape(), grid_n: n }).expect("ball discretizes"))
}

pub fn weights() -> WeightPair {
    WeightPair::new(Viewpoint::standard(&shape()).expect("origin is outside"), 2.0)
}

pub fn bump_pair() -> Perturbation {
    Perturbation::parse(["0.3*gauss(0.1,0,4,0.5)", "0.2*gauss(0,0.1,4.1,0.5)", "0"], "0.5*gauss(-0.1,0,3.9,0.5)")
        .expect("valid expressions")
}
