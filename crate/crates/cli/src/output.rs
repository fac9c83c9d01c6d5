//! CSV writers. Column layouts are described in docs/formats.md.

use std::fs::File;
use std::path::{Path, PathBuf};

use taylored::bounds::{third_derivative_proxy_at, GapReport};
use taylored::kd_chain::ChainRecord;
use taylored::lattice::{LatticeMdp, StateLattice, StationaryPolicy};
use taylored::taylor::MomentRecord;

use crate::run::Summary;
use crate::CliError;

pub struct Csv {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl Csv {
    pub fn create(path: &Path, header: &[String]) -> Result<Self, CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut w = Self { writer: csv::Writer::from_writer(file), path: path.to_path_buf() };
        w.row(header)?;
        Ok(w)
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<(), CliError> {
        self.writer.write_record(fields).map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.writer.flush().map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))?;
        Ok(self.path)
    }
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn ints(v: &[i64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_values(path: &Path, mdp: &LatticeMdp, value: &[f64], policy: &StationaryPolicy) -> Result<PathBuf, CliError> {
    let d = mdp.lattice.dim();
    let m = mdp.actions.dim();
    let mut header = vec!["state_index".to_string()];
    header.extend(names("coord", d));
    header.push("value".into());
    header.extend(names("action", m));
    let mut w = Csv::create(path, &header)?;
    for (i, x) in mdp.lattice.states().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(ints(&x));
        row.push(num(value[i]));
        row.extend(ints(policy.action(&mdp.actions, i)));
        w.row(&row)?;
    }
    w.finish()
}

pub fn write_gaps(path: &Path, lattice: &StateLattice, candidate: &[f64], star: &[f64], gaps: &GapReport) -> Result<PathBuf, CliError> {
    let mut header = vec!["state_index".to_string()];
    header.extend(names("coord", lattice.dim()));
    header.extend(["V_star", "V_candidate", "abs_gap", "rel_gap"].map(String::from));
    let mut w = Csv::create(path, &header)?;
    for (i, x) in lattice.states().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(ints(&x));
        row.extend([num(star[i]), num(candidate[i]), num(gaps.abs_gap[i]), opt(gaps.rel_gap[i])]);
        w.row(&row)?;
    }
    w.finish()
}

/// Largest third-difference proxy over the axes through `index`; `None`
/// when no axis has room for the stencil.
pub fn axis_proxy(lattice: &StateLattice, values: &[f64], index: usize) -> Option<f64> {
    let x = lattice.state(index);
    let mut best: Option<f64> = None;
    for axis in 0..lattice.dim() {
        let mut y = x.clone();
        let line: Vec<f64> = (lattice.lower()[axis]..=lattice.upper()[axis])
            .map(|v| {
                y[axis] = v;
                values[lattice.index_of(&y).expect("line stays inside the box")]
            })
            .collect();
        let pos = (x[axis] - lattice.lower()[axis]) as usize;
        if let Ok(p) = third_derivative_proxy_at(&line, pos, 1) {
            best = Some(best.map_or(p.abs(), |b: f64| b.max(p.abs())));
        }
    }
    best
}

pub struct BoundsColumns<'a> {
    pub star: &'a [f64],
    pub candidate: &'a [f64],
    pub gaps: &'a GapReport,
    pub remainder: &'a [f64],
    pub accumulation: &'a [f64],
    pub proxy: &'a [Option<f64>],
    pub corner: &'a [bool],
}

pub fn write_bounds(path: &Path, lattice: &StateLattice, c: &BoundsColumns<'_>) -> Result<PathBuf, CliError> {
    let mut header = vec!["state".to_string()];
    header.extend(names("coord", lattice.dim()));
    header.extend(
        ["V_star", "V_candidate", "abs_gap", "rel_gap", "remainder", "accumulation", "proxy", "corner_flag"].map(String::from),
    );
    let mut w = Csv::create(path, &header)?;
    for (i, x) in lattice.states().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(ints(&x));
        row.extend([
            num(c.star[i]),
            num(c.candidate[i]),
            num(c.gaps.abs_gap[i]),
            opt(c.gaps.rel_gap[i]),
            num(c.remainder[i]),
            num(c.accumulation[i]),
            opt(c.proxy[i]),
            u8::from(c.corner[i]).to_string(),
        ]);
        w.row(&row)?;
    }
    w.finish()
}

pub fn write_moments(path: &Path, d: usize, m: usize, records: &[MomentRecord]) -> Result<PathBuf, CliError> {
    let mut header = names("coord", d);
    header.extend(names("action", m));
    header.extend(names("mu", d));
    header.extend((0..d * d).map(|k| format!("sigma2_{}{}", k / d + 1, k % d + 1)));
    header.extend(["eig_min", "eig_max"].map(String::from));
    let mut w = Csv::create(path, &header)?;
    for r in records {
        let mut row: Vec<String> = ints(&r.state).chain(ints(&r.action)).collect();
        row.extend(r.moments.mu.iter().chain(&r.moments.sigma2).map(|&v| num(v)));
        row.extend([num(r.eig_min), num(r.eig_max)]);
        w.row(&row)?;
    }
    w.finish()
}

pub fn write_chain(path: &Path, d: usize, m: usize, records: &[ChainRecord]) -> Result<PathBuf, CliError> {
    let mut header = names("state", d);
    header.extend(names("action", m));
    header.extend(names("target", d));
    header.extend(["prob", "alpha_h", "r_tilde"].map(String::from));
    let mut w = Csv::create(path, &header)?;
    for r in records {
        let mut row: Vec<String> = ints(&r.state).chain(ints(&r.action)).chain(ints(&r.target)).collect();
        row.extend([num(r.prob), num(r.alpha_h), num(r.r_tilde)]);
        w.row(&row)?;
    }
    w.finish()
}

pub fn write_summary(path: &Path, rows: &[Summary]) -> Result<PathBuf, CliError> {
    let mut w = Csv::create(path, &Summary::HEADER.map(String::from))?;
    for r in rows {
        w.row(&r.fields())?;
    }
    w.finish()
}
