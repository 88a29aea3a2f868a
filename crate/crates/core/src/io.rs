//! Plain-text file formats: snapshot dumps, trajectory dumps and CSV tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{MatsError, Result, StopReason};
use crate::online::ReducedState;
use crate::pwl::{Grid, GridFn};

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| MatsError::Parse(format!("bad {what}: {s:?}")))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Snapshot file: a column-name line, a metadata line, then one nodal value per line.
pub fn snapshot_to_string(u: &GridFn, t: f64, mu: &[f64]) -> String {
    let g = u.grid();
    let mut s = String::new();
    let names: Vec<String> = (1..=mu.len()).map(|i| format!("mu_{i}")).collect();
    writeln!(s, "# x_left x_right n_nodes t {}", names.join(" ")).unwrap();
    writeln!(s, "# {} {} {} {} {}", g.x_left(), g.x_right(), g.n_nodes(), t, join(mu)).unwrap();
    for v in u.values() {
        writeln!(s, "{v}").unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub u: GridFn,
    pub t: f64,
    pub mu: Vec<f64>,
}

pub fn snapshot_from_str(text: &str) -> Result<SnapshotFile> {
    let mut lines = text.lines();
    let names = lines.next().ok_or_else(|| MatsError::Parse("empty snapshot file".into()))?;
    if !names.starts_with("# x_left x_right n_nodes t") {
        return Err(MatsError::Parse("missing snapshot column header".into()));
    }
    let meta = lines.next().and_then(|l| l.strip_prefix('#')).ok_or_else(|| MatsError::Parse("missing metadata".into()))?;
    let fields: Vec<&str> = meta.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(MatsError::Parse("short metadata line".into()));
    }
    let n_nodes: usize = fields[2].parse().map_err(|_| MatsError::Parse(format!("bad n_nodes {:?}", fields[2])))?;
    let grid = Grid::new(parse_f64(fields[0], "x_left")?, parse_f64(fields[1], "x_right")?, n_nodes)?;
    let t = parse_f64(fields[3], "t")?;
    let mu = fields[4..].iter().map(|f| parse_f64(f, "mu")).collect::<Result<Vec<_>>>()?;
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_f64(l.trim(), "value"))
        .collect::<Result<Vec<_>>>()?;
    Ok(SnapshotFile { u: GridFn::new(grid, values)?, t, mu })
}

pub fn write_snapshot(path: &Path, u: &GridFn, t: f64, mu: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, snapshot_to_string(u, t, mu))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<SnapshotFile> {
    snapshot_from_str(&fs::read_to_string(path)?)
}

/// First 16 hex digits of the SHA-256 of the parameter vector's little-endian bytes.
pub fn mu_hash(mu: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in mu {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `root/snapshots/<case>/<mu-hash>/<t>.dat`.
pub fn snapshot_path(root: &Path, case: &str, mu: &[f64], t: f64) -> PathBuf {
    root.join("snapshots").join(case).join(mu_hash(mu)).join(format!("{t:.10}.dat"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mu: Vec<f64>,
    pub n_local: usize,
    pub n_modes: usize,
    pub lambda: f64,
    pub k_target: usize,
    pub stop: Option<StopReason>,
    /// `(t, state)` per recorded step.
    pub rows: Vec<(f64, ReducedState)>,
}

pub fn trajectory_to_string(tr: &Trajectory) -> String {
    let mut s = String::new();
    writeln!(s, "# mu {}", join(&tr.mu)).unwrap();
    writeln!(
        s,
        "# N {} M {} lambda {} K {} stop {}",
        tr.n_local,
        tr.n_modes,
        tr.lambda,
        tr.k_target,
        tr.stop.map(|r| r.as_str()).unwrap_or("none")
    )
    .unwrap();
    let mut cols = vec!["k".to_string(), "t".to_string()];
    cols.extend((1..=tr.n_modes).map(|m| format!("alpha_{m}")));
    cols.extend((1..=tr.n_local).map(|n| format!("beta_{n}")));
    cols.extend((1..=tr.n_local).map(|n| format!("x_{n}")));
    writeln!(s, "# {}", cols.join(" ")).unwrap();
    for (t, st) in &tr.rows {
        writeln!(s, "{} {} {} {} {}", st.step, t, join(&st.alpha), join(&st.beta), join(&st.particles)).unwrap();
    }
    s
}

pub fn trajectory_from_str(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    let bad = |m: &str| MatsError::Parse(format!("trajectory: {m}"));
    let mu_line = lines.next().and_then(|l| l.strip_prefix("# mu")).ok_or_else(|| bad("missing mu line"))?;
    let mu = mu_line.split_whitespace().map(|f| parse_f64(f, "mu")).collect::<Result<Vec<_>>>()?;
    let dims = lines.next().and_then(|l| l.strip_prefix('#')).ok_or_else(|| bad("missing dimension line"))?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 10 || f[0] != "N" || f[2] != "M" || f[4] != "lambda" || f[6] != "K" || f[8] != "stop" {
        return Err(bad("malformed dimension line"));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
    let (n, m) = (int(f[1])?, int(f[3])?);
    let lambda = parse_f64(f[5], "lambda")?;
    let k_target = int(f[7])?;
    let stop = match f[9] {
        "none" => None,
        s => Some(StopReason::parse(s).ok_or_else(|| bad("unknown stop reason"))?),
    };
    lines.next().ok_or_else(|| bad("missing column line"))?;
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let v: Vec<&str> = line.split_whitespace().collect();
        if v.len() != 2 + m + 2 * n {
            return Err(bad("row width"));
        }
        let nums = v[1..].iter().map(|x| parse_f64(x, "row value")).collect::<Result<Vec<_>>>()?;
        let state = ReducedState {
            step: int(v[0])?,
            alpha: nums[1..1 + m].to_vec(),
            beta: nums[1 + m..1 + m + n].to_vec(),
            particles: nums[1 + m + n..].to_vec(),
        };
        rows.push((nums[0], state));
    }
    Ok(Trajectory { mu, n_local: n, n_modes: m, lambda, k_target, stop, rows })
}

pub fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, trajectory_to_string(tr))?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_str(&fs::read_to_string(path)?)
}

/// CSV with leading `#` comment lines, a header row, then the records.
pub fn write_csv(path: &Path, comments: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    for c in comments {
        writeln!(f, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(f);
    let to_io = |e: csv::Error| MatsError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(to_io)?;
    for r in rows {
        w.write_record(r).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
