mod config;
mod output;
mod reproduce;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use taylored::bounds::{corner_set, discounted_accumulation, taylor_remainder, Phi};
use taylored::kd_chain::{build_kd_chain, chain_records, verify_tcp_equivalence};
use taylored::lattice::max_jump;
use taylored::taylor::{ellipticity_check, moment_table};
use taylored::tapi::disaggregate_value;

use config::{parse_assignment, read_table, set_path, ExperimentConfig, Mode};
use output::{axis_proxy, write_bounds, write_chain, write_gaps, write_moments, write_summary, write_values, BoundsColumns};
use run::{candidate, gaps, solve_exact, Summary};

/// Thread count used when `--jobs` is absent.
const THREADS_ENV: &str = "TAYLORED_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] taylored::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Validation(_) | CliError::Model(taylored::Error::InvalidParameter(_)) => "validation",
            CliError::Io(_) => "io",
            CliError::Model(e) => e.category(),
        }
    }

    fn exit_code(&self) -> u8 {
        if self.category() == "validation" {
            2
        } else {
            1
        }
    }
}

#[derive(Parser)]
#[command(name = "taylored", version, about = "Exact and Taylor-approximate solvers for lattice MDPs")]
struct Cli {
    /// Directory for CSV outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to $TAYLORED_THREADS, then to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal policy and value by policy iteration on the full lattice.
    SolveExact(ExpArgs),
    /// Approximate policy iteration on a coarse chain.
    #[command(alias = "tapi")]
    SolveTapi {
        #[command(flatten)]
        exp: ExpArgs,
        /// Skip the exact baseline and the gap report.
        #[arg(long)]
        no_exact: bool,
        /// Also write the coarse chain transitions.
        #[arg(long)]
        dump_chain: bool,
    },
    /// Gaps of experiment A against experiment B (exact solution of A's
    /// model when B is omitted).
    Compare {
        #[arg(long = "a")]
        a: PathBuf,
        #[arg(long = "b")]
        b: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-state gap, Taylor remainder, accumulation, proxy and corner flags.
    Bounds {
        #[command(flatten)]
        exp: ExpArgs,
        /// Corner radius; defaults to the largest jump of the candidate.
        #[arg(long)]
        rho: Option<i64>,
    },
    /// Runs every experiment file of a table.
    Reproduce {
        #[arg(long)]
        table: u32,
        /// Directory holding the experiment files.
        #[arg(long)]
        configs: Option<PathBuf>,
    },
    /// Moment table, ellipticity range, chain dump and moment-identity check.
    Diagnostics(ExpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Clone, Default)]
struct ExpArgs {
    /// Experiment file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// service_rate, inventory, routing or heavy_traffic.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    h: Option<i64>,
    /// Truncation level of the model.
    #[arg(long = "M")]
    m: Option<i64>,
    /// exact, tapi, max_overflow or first_action.
    #[arg(long)]
    mode: Option<String>,
    /// approx or exact.
    #[arg(long)]
    improvement: Option<String>,
    /// pc or multilinear.
    #[arg(long)]
    disaggregation: Option<String>,
    #[arg(long, value_enum)]
    one_step: Option<OnOff>,
    /// Output CSV for the value function.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any entry as a dotted key, e.g. `model.p=[0.5,0.5]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut t = match &self.config {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        if let Some(kind) = &self.model {
            let same = t.get("model").and_then(|m| m.get("kind")).and_then(|k| k.as_str()) == Some(kind.as_str());
            if !same {
                t.insert("model".into(), toml::Value::Table(toml::Table::new()));
            }
            set_path(&mut t, "model.kind", kind.clone().into())?;
        }
        let mut put = |k: &str, v: toml::Value| set_path(&mut t, k, v);
        if let Some(a) = self.alpha {
            put("alpha", a.into())?;
        }
        if let Some(h) = self.h {
            put("tapi.h", h.into())?;
        }
        if let Some(m) = self.m {
            put("model.m", m.into())?;
        }
        if let Some(v) = &self.mode {
            put("mode", v.clone().into())?;
        }
        if let Some(v) = &self.improvement {
            put("tapi.improvement", v.clone().into())?;
        }
        if let Some(v) = &self.disaggregation {
            put("tapi.disaggregation", v.clone().into())?;
        }
        if let Some(v) = self.one_step {
            put("tapi.one_step", matches!(v, OnOff::On).into())?;
        }
        for s in &self.set {
            let (k, v) = parse_assignment(s)?;
            put(&k, v)?;
        }
        if !t.contains_key("model") {
            return Err(CliError::Validation("no model given; use --model or --config".into()));
        }
        ExperimentConfig::from_table(t)
    }

    fn out_path(&self, out_dir: &Path, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| out_dir.join(default))
    }
}

fn print_summary(out_dir: &Path, rows: &[Summary]) -> Result<(), CliError> {
    println!("{}", Summary::HEADER.join(","));
    for r in rows {
        println!("{}", r.fields().join(","));
    }
    write_summary(&out_dir.join("summary.csv"), rows)?;
    Ok(())
}

fn cmd_solve_exact(out_dir: &Path, exp: &ExpArgs) -> Result<(), CliError> {
    let mut cfg = exp.config()?;
    cfg.mode = Mode::Exact;
    let model = cfg.model.build(cfg.alpha)?;
    let t = Instant::now();
    let pi = solve_exact(&cfg, &model)?;
    let path = write_values(&exp.out_path(out_dir, "values.csv"), model.mdp(), &pi.value, &pi.policy)?;
    eprintln!("wrote {}", path.display());
    print_summary(out_dir, &[Summary::new(&cfg, "exact", None, pi.iterations, t.elapsed())])
}

fn cmd_solve_tapi(out_dir: &Path, exp: &ExpArgs, no_exact: bool, dump_chain: bool) -> Result<(), CliError> {
    let mut cfg = exp.config()?;
    cfg.mode = Mode::Tapi;
    let model = cfg.model.build(cfg.alpha)?;
    let mdp = model.mdp();
    let c = candidate(&cfg, &model)?;
    let tapi = c.tapi.as_ref().expect("tapi mode");
    let path = write_values(&exp.out_path(out_dir, "tapi_values.csv"), mdp, &c.value, &c.policy)?;
    eprintln!("wrote {}", path.display());
    if dump_chain {
        let p = write_chain(&out_dir.join("chain.csv"), mdp.lattice.dim(), mdp.actions.dim(), &chain_records(&tapi.chain))?;
        eprintln!("wrote {}", p.display());
    }
    let mut rows = Vec::new();
    if no_exact {
        rows.push(Summary::new(&cfg, "tapi", None, c.iterations, c.elapsed));
    } else {
        let t = Instant::now();
        let pi = solve_exact(&cfg, &model)?;
        let exact_time = t.elapsed();
        let g = gaps(&c.value, &pi.value)?;
        let p = write_gaps(&out_dir.join("gaps.csv"), &mdp.lattice, &c.value, &pi.value, &g)?;
        eprintln!("wrote {}", p.display());
        rows.push(Summary::new(&cfg, "exact", None, pi.iterations, exact_time));
        rows.push(Summary::new(&cfg, "tapi", Some(&g), c.iterations, c.elapsed));
        if let Some((pol, v)) = &tapi.improved {
            let p = write_values(&out_dir.join("one_step_values.csv"), mdp, v, pol)?;
            eprintln!("wrote {}", p.display());
            rows.push(Summary::new(&cfg, "tapi_one_step", Some(&gaps(v, &pi.value)?), c.iterations, c.elapsed));
        }
        if let Some(r) = &c.variant {
            rows.push(Summary::new(&cfg, "tapi_exact_improvement", Some(&gaps(&r.fine_value, &pi.value)?), r.iterations, r.elapsed));
        }
    }
    print_summary(out_dir, &rows)
}

fn cmd_compare(out_dir: &Path, a: &Path, b: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let ca = ExperimentConfig::load(a)?;
    let model = ca.model.build(ca.alpha)?;
    let ra = candidate(&ca, &model)?;
    let (cb, rb) = match b {
        Some(b) => {
            let cb = ExperimentConfig::load(b)?;
            let mb = cb.model.build(cb.alpha)?;
            if mb.mdp().lattice != model.mdp().lattice {
                return Err(taylored::Error::LatticeMismatch(format!("{} and {} use different lattices", a.display(), b.display())).into());
            }
            let rb = candidate(&cb, &mb)?;
            (cb, rb)
        }
        None => {
            let cb = ExperimentConfig { mode: Mode::Exact, ..ca.clone() };
            let rb = candidate(&cb, &model)?;
            (cb, rb)
        }
    };
    let g = gaps(&ra.value, &rb.value)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("gaps.csv"));
    let p = write_gaps(&path, &model.mdp().lattice, &ra.value, &rb.value, &g)?;
    eprintln!("wrote {}", p.display());
    print_summary(
        out_dir,
        &[
            Summary::new(&cb, cb.mode.name(), None, rb.iterations, rb.elapsed),
            Summary::new(&ca, ca.mode.name(), Some(&g), ra.iterations, ra.elapsed),
        ],
    )
}

fn cmd_bounds(out_dir: &Path, exp: &ExpArgs, rho: Option<i64>) -> Result<(), CliError> {
    let cfg = exp.config()?;
    let model = cfg.model.build(cfg.alpha)?;
    let mdp = model.mdp();
    let problem = model.problem()?;
    let opts = cfg.solver.options();
    let c = candidate(&cfg, &model)?;
    let pi = solve_exact(&cfg, &model)?;
    let g = gaps(&c.value, &pi.value)?;
    // the surrogate whose Taylor remainder drives the bound
    let surrogate = match &c.tapi {
        Some(t) => disaggregate_value(&t.coarse_value, &t.chain.grid, cfg.tapi_options().disaggregation),
        None => c.value.clone(),
    };
    let remainder = taylor_remainder(&problem, &c.policy, Phi::Grid(&surrogate))?;
    let magnitude: Vec<f64> = remainder.iter().map(|v| v.abs()).collect();
    let accumulation = discounted_accumulation(mdp, &c.policy, &magnitude, &opts)?;
    let proxy: Vec<Option<f64>> = (0..mdp.num_states()).map(|i| axis_proxy(&mdp.lattice, &pi.value, i)).collect();
    let rho = rho.unwrap_or_else(|| max_jump(mdp, &c.policy) as i64);
    let corner = corner_set(&mdp.lattice, rho);
    let cols = BoundsColumns {
        star: &pi.value,
        candidate: &c.value,
        gaps: &g,
        remainder: &remainder,
        accumulation: &accumulation,
        proxy: &proxy,
        corner: &corner,
    };
    let p = write_bounds(&exp.out_path(out_dir, "bounds.csv"), &mdp.lattice, &cols)?;
    eprintln!("wrote {}", p.display());
    print_summary(out_dir, &[Summary::new(&cfg, cfg.mode.name(), Some(&g), c.iterations, c.elapsed)])
}

fn cmd_reproduce(out_dir: &Path, table: u32, configs: Option<&Path>) -> Result<(), CliError> {
    let dir = match configs {
        Some(d) => d.to_path_buf(),
        None if Path::new("configs").is_dir() => PathBuf::from("configs"),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs"),
    };
    println!("{}", reproduce::HEADER.join(","));
    let p = reproduce::reproduce(&dir, table, out_dir, |row| println!("{}", row.join(",")))?;
    eprintln!("wrote {}", p.display());
    Ok(())
}

fn cmd_diagnostics(out_dir: &Path, exp: &ExpArgs) -> Result<(), CliError> {
    let cfg = exp.config()?;
    let model = cfg.model.build(cfg.alpha)?;
    let mdp = model.mdp();
    let problem = model.problem()?;
    let (d, m) = (mdp.lattice.dim(), mdp.actions.dim());
    let p = write_moments(&out_dir.join("moments.csv"), d, m, &moment_table(&problem)?)?;
    eprintln!("wrote {}", p.display());
    let e = ellipticity_check(&problem)?;
    println!("ellipticity: lambda_min={} lambda_max={} pairs={} pass={}", e.lambda_min, e.lambda_max, e.pairs_checked, e.pass);
    let (worst, rows) = model.moment_agreement()?;
    println!("moment agreement: worst={worst} rows={rows}");
    let chain = build_kd_chain(&problem, &cfg.tapi_options().kd)?;
    let rep = verify_tcp_equivalence(&chain, &problem)?;
    println!(
        "chain h={}: rows={} central={} boundary={} first={} second_central={} second_other={} reward={} clip={}",
        cfg.tapi.h,
        rep.rows_checked,
        rep.central_rows,
        rep.boundary_rows_skipped,
        rep.worst_first,
        rep.worst_second_central,
        rep.worst_second_other,
        rep.worst_reward,
        rep.clip_defect
    );
    let p = write_chain(&out_dir.join("chain.csv"), d, m, &chain_records(&chain))?;
    eprintln!("wrote {}", p.display());
    Ok(())
}

fn configure_threads(jobs: Option<usize>) -> Result<(), CliError> {
    let n = match jobs {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::Validation(format!("{THREADS_ENV}={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Validation("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.jobs)?;
    let out = &cli.out_dir;
    match &cli.command {
        Command::SolveExact(exp) => cmd_solve_exact(out, exp),
        Command::SolveTapi { exp, no_exact, dump_chain } => cmd_solve_tapi(out, exp, *no_exact, *dump_chain),
        Command::Compare { a, b, out: o } => cmd_compare(out, a, b.as_deref(), o.as_deref()),
        Command::Bounds { exp, rho } => cmd_bounds(out, exp, *rho),
        Command::Reproduce { table, configs } => cmd_reproduce(out, *table, configs.as_deref()),
        Command::Diagnostics(exp) => cmd_diagnostics(out, exp),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
