//! Table reproduction from the shipped experiment files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use taylored::lattice::ValueFunction;

use crate::config::{ExperimentConfig, ModelConfig};
use crate::output::{num, Csv};
use crate::run::{candidate, gaps, solve_exact};
use crate::CliError;

pub const HEADER: [&str; 11] = [
    "config",
    "alpha",
    "h",
    "load",
    "max_rel_err",
    "mean_rel_err",
    "exact_improvement_max_rel",
    "one_step_max_rel",
    "iters",
    "exact_wall_time",
    "wall_time",
];

fn load_of(cfg: &ExperimentConfig) -> Option<f64> {
    match &cfg.model {
        ModelConfig::Routing(p) => p.load,
        _ => None,
    }
}

/// Experiment files in `dir` that declare `table = id`, ordered by
/// discount, load and `h`.
pub fn table_configs(dir: &Path, id: u32) -> Result<Vec<(PathBuf, ExperimentConfig)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::Io(e.to_string()))?.path();
        if path.extension().is_some_and(|x| x == "toml") {
            let cfg = ExperimentConfig::load(&path)?;
            if cfg.table == Some(id) {
                out.push((path, cfg));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("no experiment file in {} declares table = {id}", dir.display())));
    }
    out.sort_by(|a, b| {
        let key = |c: &ExperimentConfig| (c.alpha, load_of(c).unwrap_or(0.0), c.tapi.h);
        key(&a.1).partial_cmp(&key(&b.1)).unwrap().then_with(|| a.0.cmp(&b.0))
    });
    Ok(out)
}

/// Runs every cell of table `id`, writing `table<id>.csv` under `out_dir`.
/// The exact baseline is solved once per model and discount.
pub fn reproduce(dir: &Path, id: u32, out_dir: &Path, mut progress: impl FnMut(&[String])) -> Result<PathBuf, CliError> {
    let configs = table_configs(dir, id)?;
    let mut cache: HashMap<String, (ValueFunction, f64)> = HashMap::new();
    let mut csv = Csv::create(&out_dir.join(format!("table{id}.csv")), &HEADER.map(String::from))?;
    for (path, cfg) in &configs {
        let model = cfg.model.build(cfg.alpha)?;
        let key = format!("{:?}|{}|{:?}", cfg.model, cfg.alpha, cfg.solver);
        if !cache.contains_key(&key) {
            let t = Instant::now();
            let pi = solve_exact(cfg, &model)?;
            cache.insert(key.clone(), (pi.value, t.elapsed().as_secs_f64()));
        }
        let (star, exact_time) = &cache[&key];
        let c = candidate(cfg, &model)?;
        let g = gaps(&c.value, star)?;
        let max_of = |v: Option<&ValueFunction>| -> Result<String, CliError> {
            Ok(match v {
                Some(v) => num(gaps(v, star)?.max_rel),
                None => String::new(),
            })
        };
        let one_step = max_of(c.tapi.as_ref().and_then(|t| t.improved.as_ref()).map(|(_, v)| v))?;
        let variant = max_of(c.variant.as_ref().map(|r| &r.fine_value))?;
        let row = vec![
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            num(cfg.alpha),
            cfg.tapi.h.to_string(),
            load_of(cfg).map(num).unwrap_or_default(),
            num(g.max_rel),
            num(g.mean_rel),
            variant,
            one_step,
            c.iterations.to_string(),
            format!("{exact_time:.3}"),
            format!("{:.3}", c.elapsed.as_secs_f64()),
        ];
        progress(&row);
        csv.row(&row)?;
    }
    csv.finish()
}
