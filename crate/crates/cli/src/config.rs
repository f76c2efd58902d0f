//! Run configuration. Every section has defaults so a config only names what
//! it changes; the resolved form is embedded in each report.

use bihar_core::carleman::{EnsembleOptions, Estimate};
use bihar_core::forward::Perturbation;
use bihar_core::geometry::{DiscretizedDomain, DomainSpec, Shape, Viewpoint};
use bihar_core::identities::SliceQuadrature;
use bihar_core::transport::{Generator, SliceOptions};
use bihar_core::weights::WeightPair;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    /// overridden by `--seed`
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainConfig,
    #[serde(default)]
    pub viewpoint: Option<ViewpointConfig>,
    #[serde(default)]
    pub pair: PairConfig,
    /// descending, each above the oscillation floor of `domain.grid`
    #[serde(default = "default_h_list")]
    pub h_list: Vec<f64>,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub cgo: CgoConfig,
    #[serde(default)]
    pub carleman: CarlemanConfig,
    #[serde(default)]
    pub identity: IdentityConfig,
    #[serde(default)]
    pub distinguish: DistinguishConfig,
}

fn default_h_list() -> Vec<f64> {
    vec![0.5, 0.35, 0.25, 0.18]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default = "default_shape")]
    pub shape: String,
    pub center: [f64; 3],
    /// radius of a ball
    #[serde(default)]
    pub radius: Option<f64>,
    /// semi-axes of an ellipsoid
    #[serde(default)]
    pub semi_axes: Option<[f64; 3]>,
    pub grid: usize,
}

fn default_shape() -> String {
    "ball".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewpointConfig {
    pub x0: [f64; 3],
    pub omega: [f64; 3],
}

/// Coefficients as expressions in x, y, z.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    #[serde(default = "zero_vector")]
    pub a: [String; 3],
    #[serde(default = "zero_scalar")]
    pub q: String,
}

fn zero_vector() -> [String; 3] {
    ["0".into(), "0".into(), "0".into()]
}

fn zero_scalar() -> String {
    "0".into()
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig { a: zero_vector(), q: zero_scalar() }
    }
}

impl CoefficientConfig {
    pub fn perturbation(&self) -> Result<Perturbation, CliError> {
        let a = [self.a[0].as_str(), self.a[1].as_str(), self.a[2].as_str()];
        Perturbation::parse(a, &self.q).map_err(|e| CliError::ConfigInvalid(format!("coefficients: {e}")))
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    #[serde(default)]
    pub first: CoefficientConfig,
    #[serde(default)]
    pub second: CoefficientConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub grids: Vec<usize>,
    /// manufactured solution
    pub solution: String,
    /// test function paired with the solution in Green's formula
    pub test_function: String,
    /// coefficients of the operator; the second of the pair when absent
    pub coefficients: Option<CoefficientConfig>,
    pub min_order: f64,
    pub min_green_order: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            grids: vec![17, 33, 65],
            solution: "sin(2*x)*cos(y)*exp(z/3) + i*x*y*z".into(),
            test_function: "cos(x+y)*exp(i*z/2)".into(),
            coefficients: None,
            min_order: 1.8,
            min_green_order: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignChoice {
    Plus,
    Minus,
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgoConfig {
    pub sign: SignChoice,
    pub generator: GeneratorConfig,
    pub slices: SliceOptions,
    pub slope_band: [f64; 2],
    pub max_bound_spread: f64,
}

impl Default for CgoConfig {
    fn default() -> Self {
        CgoConfig {
            sign: SignChoice::Both,
            generator: GeneratorConfig::default(),
            slices: SliceOptions::default(),
            slope_band: [1.7, 2.5],
            max_bound_spread: 2.0,
        }
    }
}

/// A sum of monomials c·z^k e^{imθ}.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub terms: Vec<MonomialConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialConfig {
    #[serde(default = "one")]
    pub coefficient: [f64; 2],
    #[serde(default)]
    pub z_degree: i32,
    #[serde(default)]
    pub theta_mode: i32,
}

fn one() -> [f64; 2] {
    [1.0, 0.0]
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { terms: vec![MonomialConfig { coefficient: one(), z_degree: 0, theta_mode: 0 }] }
    }
}

impl GeneratorConfig {
    pub fn build(&self) -> Result<Generator, CliError> {
        let mut terms = self.terms.iter().map(|t| {
            Generator::monomial(t.z_degree, t.theta_mode).scale(bihar_core::C64::new(t.coefficient[0], t.coefficient[1]))
        });
        let first = terms.next().ok_or_else(|| CliError::ConfigInvalid("generator has no terms".into()))?;
        Ok(terms.fold(first, |acc, t| acc.add(&t)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    pub estimates: Vec<Estimate>,
    pub ensemble_size: usize,
    pub modes: usize,
    pub max_wavenumber: f64,
    pub max_modulation: f64,
    pub max_spread: f64,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        let e = EnsembleOptions::default();
        CarlemanConfig {
            estimates: Estimate::ALL.to_vec(),
            ensemble_size: 64,
            modes: e.modes,
            max_wavenumber: e.max_wavenumber,
            max_modulation: e.max_modulation,
            max_spread: 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentityConfig {
    pub generator: GeneratorConfig,
    pub slices: SliceOptions,
    /// F̃ = {∂νφ ≤ front_eps}
    pub front_eps: f64,
    pub decay_threshold: f64,
    pub limit_tolerance: f64,
    /// z-degree and θ-mode bounds of the generator sweep
    pub max_z_degree: i32,
    pub max_theta_mode: i32,
    pub quadrature: SliceQuadrature,
    /// radial points of the volume rule (the fine rule uses 3/2 of it)
    pub volume_points: usize,
    /// verdict threshold in units of the noise floor
    pub floor_factor: f64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            generator: GeneratorConfig::default(),
            slices: SliceOptions::default(),
            front_eps: 0.05,
            decay_threshold: 0.3,
            limit_tolerance: 0.1,
            max_z_degree: 3,
            max_theta_mode: 4,
            quadrature: SliceQuadrature::default(),
            volume_points: 24,
            floor_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistinguishConfig {
    /// two grids: the gap on the second is the verdict, the difference
    /// between them the noise
    pub grids: Vec<usize>,
    pub basis_degree: usize,
    pub front_eps: f64,
    pub tolerance: f64,
    pub floor_factor: f64,
}

impl Default for DistinguishConfig {
    fn default() -> Self {
        DistinguishConfig { grids: vec![33, 49], basis_degree: 4, front_eps: 0.05, tolerance: 1e-10, floor_factor: 10.0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))
    }

    pub fn shape(&self) -> Result<Shape, CliError> {
        let d = &self.domain;
        let shape = match d.shape.as_str() {
            "ball" => Shape::Ball {
                center: d.center,
                radius: d.radius.ok_or_else(|| CliError::ConfigInvalid("ball needs domain.radius".into()))?,
            },
            "ellipsoid" => Shape::Ellipsoid {
                center: d.center,
                semi_axes: d.semi_axes.ok_or_else(|| CliError::ConfigInvalid("ellipsoid needs domain.semi_axes".into()))?,
            },
            other => return Err(CliError::ConfigInvalid(format!("unknown shape {other:?}"))),
        };
        shape.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        Ok(shape)
    }

    pub fn domain_at(&self, grid: usize) -> Result<Arc<DiscretizedDomain>, CliError> {
        let spec = DomainSpec { shape: self.shape()?, grid_n: grid };
        Ok(Arc::new(DiscretizedDomain::new(&spec).map_err(|e| CliError::ConfigInvalid(format!("grid {grid}: {e}")))?))
    }

    pub fn weights(&self) -> Result<WeightPair, CliError> {
        let shape = self.shape()?;
        let vp = match &self.viewpoint {
            Some(v) => Viewpoint::new(&shape, v.x0, v.omega),
            None => Viewpoint::standard(&shape),
        }
        .map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        Ok(WeightPair::new(vp, shape.diameter()))
    }

    pub fn ensemble(&self) -> EnsembleOptions {
        EnsembleOptions {
            modes: self.carleman.modes,
            max_wavenumber: self.carleman.max_wavenumber,
            max_modulation: self.carleman.max_modulation,
            seed: self.seed,
        }
    }

    /// Checks that do not need a discretized domain.
    pub fn validate(&self) -> Result<(), CliError> {
        self.shape()?;
        self.weights()?;
        self.pair.first.perturbation()?;
        self.pair.second.perturbation()?;
        if self.h_list.is_empty() || self.h_list.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(CliError::ConfigInvalid("h_list must hold positive values".into()));
        }
        if self.h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CliError::ConfigInvalid("h_list must be strictly descending".into()));
        }
        if self.distinguish.grids.len() != 2 {
            return Err(CliError::ConfigInvalid("distinguish.grids needs exactly two grids".into()));
        }
        self.cgo.generator.build()?;
        self.identity.generator.build()?;
        Ok(())
    }

    /// Every h must resolve the phase e^{iψ/h} on the grid.
    pub fn check_floor(&self, dom: &DiscretizedDomain, wp: &WeightPair) -> Result<f64, CliError> {
        let floor = bihar_core::cgo::oscillation_floor(dom, wp)?;
        if let Some(h) = self.h_list.iter().find(|h| **h < floor) {
            return Err(CliError::ConfigInvalid(format!("h = {h} is below the oscillation floor {floor:.4} of grid {}", self.domain.grid)));
        }
        Ok(floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(body).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    const BALL: &str = "[domain]\ncenter = [0.0, 0.0, 4.0]\nradius = 1.0\ngrid = 33\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = parse(BALL).unwrap();
        assert_eq!(cfg.h_list, vec![0.5, 0.35, 0.25, 0.18]);
        assert_eq!(cfg.carleman.ensemble_size, 64);
        assert_eq!(cfg.distinguish.grids, vec![33, 49]);
        assert_eq!(cfg.identity.quadrature.slices, 16);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(parse(&format!("{BALL}bogus = 1\n")).is_err());
        assert!(parse(&format!("h_list = [0.3, 0.3]\n{BALL}")).is_err());
        assert!(parse(&format!("h_list = [-0.1]\n{BALL}")).is_err());
        assert!(parse(&format!("{BALL}[distinguish]\ngrids = [33]\n")).is_err());
        assert!(parse(&BALL.replace("radius = 1.0\n", "")).is_err());
        // pole inside the domain
        assert!(parse(&format!("{BALL}[viewpoint]\nx0 = [0.0, 0.0, 4.0]\nomega = [1.0, 0.0, 0.0]\n")).is_err());
    }

    #[test]
    fn oscillation_floor_is_enforced() {
        let cfg = parse(&format!("h_list = [0.5, 0.05]\n{BALL}")).unwrap();
        let dom = cfg.domain_at(cfg.domain.grid).unwrap();
        assert!(matches!(cfg.check_floor(&dom, &cfg.weights().unwrap()), Err(CliError::ConfigInvalid(_))));
    }

    #[test]
    fn shipped_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/standard_pair.toml");
        let cfg = RunConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.domain.grid, 65);
    }
}
