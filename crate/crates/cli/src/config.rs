//! Experiment files and their validation.

use std::path::Path;

use serde::Deserialize;
use taylored::kd_chain::{BoundaryRule, CrossPolicy, KdOptions, Tie, UpwindRule};
use taylored::models::{
    HeavyTraffic, InventoryModel, InventoryParams, Model, QueueModel, RoutingModel, RoutingParams, ServiceRateModel,
    ServiceRateParams,
};
use taylored::solver::{LinearSolver, SolveOptions};
use taylored::tapi::{Disaggregation, ImprovementMode, PolicyMap, TapiOptions};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub alpha: f64,
    #[serde(default)]
    pub mode: Mode,
    /// Table this file reproduces, if any.
    #[serde(default)]
    pub table: Option<u32>,
    pub model: ModelConfig,
    #[serde(default)]
    pub tapi: TapiConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// How the candidate policy is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    #[default]
    Tapi,
    /// Routing heuristic that overflows as many customers as possible.
    MaxOverflow,
    /// Lexicographically first action everywhere.
    FirstAction,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Tapi => "tapi",
            Mode::MaxOverflow => "max_overflow",
            Mode::FirstAction => "first_action",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    ServiceRate(ServiceRateParams),
    Inventory(InventoryParams),
    Routing(RoutingParams),
    HeavyTraffic(HeavyTrafficParams),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeavyTrafficParams {
    /// Arrival probability; ignored when `rho` is given.
    pub lambda: f64,
    pub rho: Option<f64>,
    pub m: i64,
}

impl Default for HeavyTrafficParams {
    fn default() -> Self {
        Self { lambda: 0.4, rho: None, m: 3000 }
    }
}

impl ModelConfig {
    pub fn build(&self, alpha: f64) -> taylored::Result<Model> {
        Ok(match self {
            ModelConfig::ServiceRate(p) => Model::ServiceRate(ServiceRateModel::build(p.clone(), alpha)?),
            ModelConfig::Inventory(p) => Model::Inventory(InventoryModel::build(p.clone(), alpha)?),
            ModelConfig::Routing(p) => Model::Routing(RoutingModel::build(p.clone(), alpha)?),
            ModelConfig::HeavyTraffic(p) => {
                let q = match p.rho {
                    Some(rho) => HeavyTraffic::with_utilization(rho, alpha)?,
                    None => HeavyTraffic::new(p.lambda, alpha)?,
                };
                Model::Queue(QueueModel::build(q, p.m)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementArg {
    #[default]
    Approx,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisaggregationArg {
    #[default]
    Pc,
    Multilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMapArg {
    #[default]
    Taylored,
    NearestLower,
    NearestUpper,
    NearestInward,
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryArg {
    #[default]
    Mirror,
    Instantaneous,
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpwindArg {
    #[default]
    Minimal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossArg {
    Strict,
    #[default]
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TapiConfig {
    pub h: i64,
    pub improvement: ImprovementArg,
    pub disaggregation: DisaggregationArg,
    pub policy_map: PolicyMapArg,
    pub one_step: bool,
    /// Also run the exact-improvement variant.
    pub exact_variant: bool,
    pub boundary: BoundaryArg,
    pub upwind: UpwindArg,
    pub cross: CrossArg,
    pub max_iterations: usize,
}

impl Default for TapiConfig {
    fn default() -> Self {
        Self {
            h: 1,
            improvement: ImprovementArg::Approx,
            disaggregation: DisaggregationArg::Pc,
            policy_map: PolicyMapArg::Taylored,
            one_step: false,
            exact_variant: false,
            boundary: BoundaryArg::Mirror,
            upwind: UpwindArg::Minimal,
            cross: CrossArg::Clip,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearArg {
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub linear: LinearArg,
    pub krylov_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { linear: LinearArg::Auto, krylov_tol: d.krylov_tol, max_iterations: d.max_iterations }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        let linear = match self.linear {
            LinearArg::Auto => LinearSolver::Auto,
            LinearArg::Direct => LinearSolver::Direct,
            LinearArg::Iterative => LinearSolver::Iterative,
        };
        SolveOptions { linear, krylov_tol: self.krylov_tol, max_iterations: self.max_iterations, ..SolveOptions::default() }
    }
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_table(read_table(path)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.tapi.h < 1 {
            return bad(format!("h = {} must be a positive integer", self.tapi.h));
        }
        if self.tapi.max_iterations == 0 || self.solver.max_iterations == 0 {
            return bad("iteration caps must be positive".into());
        }
        if !(self.solver.krylov_tol > 0.0) {
            return bad("krylov_tol must be positive".into());
        }
        if self.mode == Mode::MaxOverflow && !matches!(self.model, ModelConfig::Routing(_)) {
            return bad("mode max_overflow needs the routing model".into());
        }
        let params_ok = match &self.model {
            ModelConfig::ServiceRate(p) => p.validate(),
            ModelConfig::Inventory(p) => p.validate(),
            ModelConfig::Routing(p) => p.validate(),
            ModelConfig::HeavyTraffic(p) => {
                if p.m < 2 {
                    return bad("heavy-traffic truncation m must be at least 2".into());
                }
                match p.rho {
                    Some(rho) if !(rho > 0.0 && rho < 1.0) => return bad(format!("rho = {rho} must lie in (0, 1)")),
                    Some(_) => Ok(()),
                    None => HeavyTraffic::new(p.lambda, self.alpha).map(|_| ()),
                }
            }
        };
        params_ok.map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn tapi_options(&self) -> TapiOptions {
        let t = &self.tapi;
        let mut kd = KdOptions::new(t.h);
        kd.boundary = match t.boundary {
            BoundaryArg::Mirror => BoundaryRule::Mirror,
            BoundaryArg::Instantaneous => BoundaryRule::Instantaneous,
            BoundaryArg::FirstOrder => BoundaryRule::FirstOrder,
        };
        kd.upwind = match t.upwind {
            UpwindArg::Minimal => UpwindRule::Minimal,
            UpwindArg::Full => UpwindRule::Full,
        };
        kd.cross = match t.cross {
            CrossArg::Strict => CrossPolicy::Strict,
            CrossArg::Clip => CrossPolicy::Clip,
        };
        TapiOptions {
            kd,
            max_iterations: t.max_iterations,
            improvement: match t.improvement {
                ImprovementArg::Approx => ImprovementMode::Approximate,
                ImprovementArg::Exact => ImprovementMode::Exact,
            },
            disaggregation: match t.disaggregation {
                DisaggregationArg::Pc => Disaggregation::PiecewiseConstant,
                DisaggregationArg::Multilinear => Disaggregation::Multilinear,
            },
            policy_map: match t.policy_map {
                PolicyMapArg::Taylored => PolicyMap::Taylored,
                PolicyMapArg::NearestLower => PolicyMap::Nearest(Tie::Lower),
                PolicyMapArg::NearestUpper => PolicyMap::Nearest(Tie::Upper),
                PolicyMapArg::NearestInward => PolicyMap::Nearest(Tie::Inward),
                PolicyMapArg::Floor => PolicyMap::Floor,
            },
            one_step: t.one_step,
            solve: self.solver.options(),
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model_name().to_string())
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelConfig::ServiceRate(_) => "service_rate",
            ModelConfig::Inventory(_) => "inventory",
            ModelConfig::Routing(_) => "routing",
            ModelConfig::HeavyTraffic(_) => "heavy_traffic",
        }
    }
}

pub fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Sets `key` (dotted) in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Validation(format!("empty key in '{key}'")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Validation(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Reads the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Validation(format!("expected key=value, got '{s}'")))?;
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_table(text.parse().unwrap())
    }

    #[test]
    fn minimal_file() {
        let c = parse("alpha = 0.9\n[model]\nkind = \"service_rate\"\nm = 20\n").unwrap();
        assert_eq!(c.mode, Mode::Tapi);
        assert!(matches!(c.model, ModelConfig::ServiceRate(ref p) if p.m == 20 && p.k == 100));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("alpha = 0.9\n[model]\nkind = \"service_rate\"\nmm = 20\n").is_err());
        assert!(parse("alpha = 0.9\nbogus = 1\n[model]\nkind = \"service_rate\"\n").is_err());
        assert!(parse("alpha = 0.9\n[model]\nkind = \"warehouse\"\n").is_err());
    }

    #[test]
    fn zero_h_is_a_validation_error() {
        let e = parse("alpha = 0.9\n[model]\nkind = \"service_rate\"\n[tapi]\nh = 0\n").unwrap_err();
        assert_eq!(e.category(), "validation");
    }

    #[test]
    fn dotted_assignments() {
        let mut t = toml::Table::new();
        let (k, v) = parse_assignment("model.p=[0.5, 0.5]").unwrap();
        set_path(&mut t, &k, v).unwrap();
        let (k, v) = parse_assignment("tapi.boundary=first_order").unwrap();
        set_path(&mut t, &k, v).unwrap();
        assert_eq!(t["model"]["p"].as_array().unwrap().len(), 2);
        assert_eq!(t["tapi"]["boundary"].as_str(), Some("first_order"));
    }
}
