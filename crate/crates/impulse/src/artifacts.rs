//! On-disk layout of runs: field CSVs, the grid sidecar, summaries with
//! per-file digests, and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use impulse_core::assumptions::AssumptionReport;
use impulse_core::solver::Diagnostics;
use impulse_core::{Grid, ProblemSpec, Solution, SolverConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, ConfigError, ProblemDoc};

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("artifact integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style blob digest: `sha256("blob <len>\0" + bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Writes files relative to a run directory and remembers their digests.
pub struct Writer {
    root: PathBuf,
    pub files: BTreeMap<String, String>,
}

impl Writer {
    pub fn create(root: &Path) -> Result<Self, ArtifactError> {
        fs::create_dir_all(root).map_err(io(root))?;
        Ok(Writer { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes an untracked file (summaries and manifests).
    pub fn put(&self, rel: &str, bytes: &[u8]) -> Result<(), ArtifactError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io(dir))?;
        }
        fs::write(&path, bytes).map_err(io(&path))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), ArtifactError> {
        self.put(rel, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), ArtifactError> {
        self.write(rel, &to_json(value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifacts serialize");
    v.push(b'\n');
    v
}

fn header(grid: &Grid, extra: &[String]) -> Vec<String> {
    let n = grid.dim();
    let mut h: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend(extra.iter().cloned());
    h
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn node_prefix(grid: &Grid, node: usize) -> Vec<String> {
    let mut r: Vec<String> = grid.multi(node).iter().map(|i| i.to_string()).collect();
    r.extend(grid.coords(node).iter().map(|x| num(*x)));
    r
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// `i0,..,x0,..,value` for every node.
pub fn field_csv(grid: &Grid, values: &[f64]) -> Vec<u8> {
    let head = header(grid, &["value".into()]);
    csv_bytes(std::iter::once(head).chain((0..grid.len()).map(|k| {
        let mut r = node_prefix(grid, k);
        r.push(num(values[k]));
        r
    })))
}

/// Action mask as a field of 0/1 values.
pub fn mask_csv(grid: &Grid, mask: &[bool]) -> Vec<u8> {
    let values: Vec<f64> = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    field_csv(grid, &values)
}

/// Minimizing impulse at every node that has one.
pub fn impulse_csv(grid: &Grid, map: &[Option<Vec<f64>>]) -> Vec<u8> {
    let n = grid.dim();
    let head = header(grid, &(0..n).map(|i| format!("xi{i}")).collect::<Vec<_>>());
    csv_bytes(std::iter::once(head).chain(map.iter().enumerate().filter_map(|(k, xi)| {
        let xi = xi.as_ref()?;
        let mut r = node_prefix(grid, k);
        r.extend(xi.iter().map(|v| num(*v)));
        Some(r)
    })))
}

fn read_rows(path: &Path, bytes: &[u8], expect_header: &[String]) -> Result<Vec<Vec<f64>>, ArtifactError> {
    let fmt = |message: String| ArtifactError::Format { path: path.to_path_buf(), message };
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let head: Vec<String> = r.headers().map_err(|e| fmt(e.to_string()))?.iter().map(String::from).collect();
    if head != expect_header {
        return Err(fmt(format!("header {head:?}, expected {expect_header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let row: Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        out.push(row.map_err(|e| fmt(format!("line {}: {e}", out.len() + 2)))?);
    }
    Ok(out)
}

pub fn parse_field_csv(path: &Path, bytes: &[u8], grid: &Grid) -> Result<Vec<f64>, ArtifactError> {
    let n = grid.dim();
    let rows = read_rows(path, bytes, &header(grid, &["value".into()]))?;
    if rows.len() != grid.len() {
        return Err(ArtifactError::Format { path: path.into(), message: format!("{} rows for {} nodes", rows.len(), grid.len()) });
    }
    let mut out = vec![0.0; grid.len()];
    for row in rows {
        let idx: Vec<usize> = row[..n].iter().map(|v| *v as usize).collect();
        if idx.iter().zip(&grid.axes).any(|(i, a)| *i >= a.count) {
            return Err(ArtifactError::Format { path: path.into(), message: format!("node index {idx:?} out of range") });
        }
        out[grid.flat(&idx)] = row[2 * n];
    }
    Ok(out)
}

pub fn parse_impulse_csv(path: &Path, bytes: &[u8], grid: &Grid) -> Result<Vec<Option<Vec<f64>>>, ArtifactError> {
    let n = grid.dim();
    let head = header(grid, &(0..n).map(|i| format!("xi{i}")).collect::<Vec<_>>());
    let mut out = vec![None; grid.len()];
    for row in read_rows(path, bytes, &head)? {
        let idx: Vec<usize> = row[..n].iter().map(|v| *v as usize).collect();
        if idx.iter().zip(&grid.axes).any(|(i, a)| *i >= a.count) {
            return Err(ArtifactError::Format { path: path.into(), message: format!("node index {idx:?} out of range") });
        }
        out[grid.flat(&idx)] = Some(row[2 * n..].to_vec());
    }
    Ok(out)
}

/// Grid sidecar; slices are indexed by inverted time `τ = T − t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub grid: Grid,
    pub slice_times_inverted: bool,
    pub slices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub problem: ProblemDoc,
    pub solver: SolverConfig,
    pub assumptions: AssumptionReport,
    pub forced: bool,
    pub diagnostics: Diagnostics,
    /// SHA-256 of every artifact, keyed by path relative to the run directory.
    pub files: BTreeMap<String, String>,
}

pub const PROBLEM_COPY: &str = "inputs/problem.json";
pub const SOLVER_COPY: &str = "inputs/solver.json";

fn slice_name(dir: &str, k: usize) -> String {
    format!("{dir}/{dir}_{k:04}.csv")
}

/// Writes everything except the manifest.
pub fn write_solution(
    w: &mut Writer,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    sol: &Solution,
    assumptions: AssumptionReport,
    forced: bool,
    problem_text: &str,
    solver_text: &str,
) -> Result<SolveSummary, ArtifactError> {
    w.write(PROBLEM_COPY, problem_text.as_bytes())?;
    w.write(SOLVER_COPY, solver_text.as_bytes())?;
    let grid = &sol.grid;
    let mut names = Vec::with_capacity(sol.slices.len());
    for k in 0..sol.slices.len() {
        let name = slice_name("slices", k);
        w.write(&name, &field_csv(grid, &sol.slices[k]))?;
        names.push(name);
        w.write(&slice_name("obstacle", k), &field_csv(grid, &sol.obstacle[k]))?;
        w.write(&slice_name("masks", k), &mask_csv(grid, &sol.action[k]))?;
        w.write(&slice_name("impulse", k), &impulse_csv(grid, &sol.impulse[k]))?;
    }
    w.write_json("grid.json", &GridMeta { grid: grid.clone(), slice_times_inverted: true, slices: names })?;
    let summary = SolveSummary {
        problem: config::render_problem(spec),
        solver: cfg.clone(),
        assumptions,
        forced,
        diagnostics: sol.diagnostics.clone(),
        files: w.files.clone(),
    };
    w.put("summary.json", &to_json(&summary))?;
    Ok(summary)
}

pub struct LoadedSolution {
    pub spec: ProblemSpec,
    pub solver: SolverConfig,
    pub solution: Solution,
    pub summary: SolveSummary,
    pub summary_bytes: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>, ArtifactError> {
    fs::read(path).map_err(io(path))
}

/// Loads a solve directory, checking every file against its recorded digest.
pub fn load_solution(dir: &Path) -> Result<LoadedSolution, ArtifactError> {
    let summary_path = dir.join("summary.json");
    let summary_bytes = read(&summary_path)?;
    let summary: SolveSummary = serde_json::from_slice(&summary_bytes)
        .map_err(|e| ArtifactError::Format { path: summary_path.clone(), message: e.to_string() })?;
    let mut contents = BTreeMap::new();
    for (rel, digest) in &summary.files {
        let bytes = read(&dir.join(rel))?;
        if &sha256_hex(&bytes) != digest {
            return Err(ArtifactError::Integrity(format!("{} does not match its recorded digest", dir.join(rel).display())));
        }
        contents.insert(rel.clone(), bytes);
    }
    let get = |rel: &str| {
        contents.get(rel).ok_or_else(|| ArtifactError::Integrity(format!("{rel} is not listed in summary.json")))
    };
    let problem_text = String::from_utf8_lossy(get(PROBLEM_COPY)?).into_owned();
    let spec = if summary.forced {
        config::parse_problem_lenient(&problem_text)?
    } else {
        config::parse_problem(&problem_text)?
    };
    let solver = config::parse_solver(&String::from_utf8_lossy(get(SOLVER_COPY)?))?;
    let meta: GridMeta = serde_json::from_slice(get("grid.json")?)
        .map_err(|e| ArtifactError::Format { path: dir.join("grid.json"), message: e.to_string() })?;
    let grid = meta.grid;
    grid.check().map_err(|e| ArtifactError::Format { path: dir.join("grid.json"), message: e.to_string() })?;
    let mut slices = Vec::with_capacity(grid.t_count);
    let mut obstacle = Vec::with_capacity(grid.t_count);
    let mut impulse = Vec::with_capacity(grid.t_count);
    let mut action = Vec::with_capacity(grid.t_count);
    for k in 0..grid.t_count {
        let field = |d: &str| -> Result<Vec<f64>, ArtifactError> {
            let rel = slice_name(d, k);
            parse_field_csv(&dir.join(&rel), get(&rel)?, &grid)
        };
        slices.push(field("slices")?);
        obstacle.push(field("obstacle")?);
        action.push(field("masks")?.iter().map(|v| *v != 0.0).collect());
        let rel = slice_name("impulse", k);
        impulse.push(parse_impulse_csv(&dir.join(&rel), get(&rel)?, &grid)?);
    }
    let solution = Solution {
        grid,
        slices,
        obstacle,
        impulse,
        action,
        region_tol: solver.region_tol,
        diagnostics: summary.diagnostics.clone(),
    };
    Ok(LoadedSolution { spec, solver, solution, summary, summary_bytes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub blob: String,
}

/// One per output directory. Everything except `wall_clock_seconds` is a
/// function of the inputs and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: BTreeMap<String, String>,
    pub inputs: Vec<InputRecord>,
    /// Digest over the input blobs; changes iff an input byte changes.
    pub input_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifact_dir: String,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

pub fn input_hash(inputs: &[InputRecord]) -> String {
    let mut h = Sha256::new();
    for i in inputs {
        h.update(i.role.as_bytes());
        h.update([0]);
        h.update(i.blob.as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}
