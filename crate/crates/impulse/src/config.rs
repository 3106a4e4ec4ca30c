//! JSON documents: problem files, solver/Monte Carlo/validation settings and
//! strategy descriptions.

use std::path::{Path, PathBuf};

use impulse_core::expr::{ExprError, SymbolSet};
use impulse_core::model::{TableVar, VectorArg};
use impulse_core::sim::PathConfig;
use impulse_core::validation::{DppStop, ProbeConfig, DEFAULT_BOUND_PAIRS, DEFAULT_C_DISC};
use impulse_core::{BoxRegion, CoefficientFn, Constants, JumpAtom, JumpSpec, ModelError, ProblemSpec, SmallJumps, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: syntax error at line {line}, column {column}: {message}")]
    Syntax { what: String, line: usize, column: usize, message: String },
    #[error("{field}: {message} (line {line}, column {column})")]
    Expression { field: String, message: String, line: usize, column: usize },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    /// Dominance violations are assumption failures rather than parse errors.
    pub fn is_assumption_failure(&self) -> bool {
        matches!(self, ConfigError::Model(ModelError::Dominance { .. } | ModelError::GrowthDominance { .. }))
    }
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        what: what.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// A coefficient in a problem file: a number, an expression string or a
/// tagged builtin object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefDoc {
    Number(f64),
    Expr(String),
    Builtin(BuiltinDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BuiltinDoc {
    Constant {
        value: f64,
    },
    Affine {
        on: VectorArg,
        #[serde(default)]
        offset: f64,
        coeffs: Vec<f64>,
        #[serde(default)]
        time: f64,
    },
    Quadratic {
        on: VectorArg,
        #[serde(default)]
        offset: f64,
        linear: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
    /// `var` is `x<i>`, `xi<i>`, `t` or `s`.
    Table { var: String, knots: Vec<f64>, values: Vec<f64> },
}

/// One coefficient or, for `dim = 1`, a bare scalar in place of a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorDoc {
    List(Vec<CoefDoc>),
    Single(CoefDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixDoc {
    Rows(Vec<Vec<CoefDoc>>),
    Single(CoefDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDoc {
    pub intensity: CoefDoc,
    pub size: VectorDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionDoc {
    pub dir: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallDoc {
    /// Radial density in the symbol `s`.
    pub density: CoefDoc,
    pub cutoff: f64,
    /// Defaults to `±e_i` with equal weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<DirectionDoc>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small: Option<SmallDoc>,
    /// Unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_delta_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub dim: usize,
    pub horizon: f64,
    #[serde(default)]
    pub discount: f64,
    pub drift: VectorDoc,
    pub diffusion: MatrixDoc,
    #[serde(default)]
    pub jumps: JumpsDoc,
    pub running_cost: CoefDoc,
    pub terminal_cost: CoefDoc,
    pub intervention_cost: CoefDoc,
    pub constants: Constants,
}

struct Builder<'a> {
    text: &'a str,
    dim: usize,
}

impl Builder<'_> {
    fn expr_error(&self, field: &str, src: &str, e: ExprError) -> ConfigError {
        // locate the expression in the document for a line/column
        let quoted = serde_json::to_string(src).unwrap_or_default();
        let (line, column) = match self.text.find(&quoted) {
            Some(at) => {
                let before = &self.text[..at];
                let line = before.matches('\n').count() + 1;
                let col = at - before.rfind('\n').map_or(0, |p| p + 1) + 1 + e.column;
                (line, col)
            }
            None => (0, e.column),
        };
        ConfigError::Expression { field: field.into(), message: e.message, line, column }
    }

    fn coef(&self, field: &str, doc: &CoefDoc, symbols: SymbolSet) -> Result<CoefficientFn, ConfigError> {
        let n = self.dim;
        let shape = |found: usize, expected: usize| {
            ConfigError::Model(ModelError::Dimension { field: field.into(), expected, found })
        };
        Ok(match doc {
            CoefDoc::Number(v) => CoefficientFn::Constant(*v),
            CoefDoc::Expr(src) => CoefficientFn::expr(src, &symbols).map_err(|e| self.expr_error(field, src, e))?,
            CoefDoc::Builtin(b) => match b {
                BuiltinDoc::Constant { value } => CoefficientFn::Constant(*value),
                BuiltinDoc::Affine { on, offset, coeffs, time } => {
                    CoefficientFn::Affine { on: *on, offset: *offset, coeffs: coeffs.clone(), time: *time }
                }
                BuiltinDoc::Quadratic { on, offset, linear, matrix } => {
                    if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                        return Err(shape(matrix.len(), n));
                    }
                    CoefficientFn::Quadratic {
                        on: *on,
                        offset: *offset,
                        linear: linear.clone(),
                        matrix: matrix.iter().flatten().copied().collect(),
                    }
                }
                BuiltinDoc::Table { var, knots, values } => {
                    let var = parse_table_var(var, n)
                        .ok_or_else(|| ConfigError::Invalid(format!("{field}: unknown table variable {var:?}")))?;
                    CoefficientFn::Table { var, knots: knots.clone(), values: values.clone() }
                }
            },
        })
    }

    fn vector(&self, field: &str, doc: &VectorDoc, symbols: SymbolSet) -> Result<Vec<CoefficientFn>, ConfigError> {
        let items: Vec<&CoefDoc> = match doc {
            VectorDoc::List(v) => v.iter().collect(),
            VectorDoc::Single(c) => vec![c],
        };
        if items.len() != self.dim {
            return Err(ModelError::Dimension { field: field.into(), expected: self.dim, found: items.len() }.into());
        }
        items.iter().enumerate().map(|(i, c)| self.coef(&format!("{field}[{i}]"), c, symbols)).collect()
    }
}

fn parse_table_var(var: &str, dim: usize) -> Option<TableVar> {
    let idx = |s: &str| s.parse::<usize>().ok().filter(|i| *i < dim);
    match var {
        "t" => Some(TableVar::T),
        "s" => Some(TableVar::S),
        v if v.starts_with("xi") => idx(&v[2..]).map(TableVar::Xi),
        v if v.starts_with('x') => idx(&v[1..]).map(TableVar::X),
        _ => None,
    }
}

fn table_var_name(var: TableVar) -> String {
    match var {
        TableVar::T => "t".into(),
        TableVar::S => "s".into(),
        TableVar::X(i) => format!("x{i}"),
        TableVar::Xi(i) => format!("xi{i}"),
    }
}

/// Builds a spec without the dominance checks.
pub fn build_problem(doc: &ProblemDoc, text: &str) -> Result<ProblemSpec, ConfigError> {
    let n = doc.dim;
    if n == 0 {
        return Err(ModelError::Invalid { name: "dim".into(), reason: "must be at least 1".into() }.into());
    }
    let b = Builder { text, dim: n };
    let state = SymbolSet::state(n);
    let drift = b.vector("drift", &doc.drift, state)?;
    let diffusion = match &doc.diffusion {
        MatrixDoc::Single(c) => {
            if n != 1 {
                return Err(ConfigError::Invalid("diffusion: a scalar is only accepted for dim = 1".into()));
            }
            vec![vec![b.coef("diffusion", c, state)?]]
        }
        MatrixDoc::Rows(rows) => {
            if rows.len() != n {
                return Err(ModelError::Dimension { field: "diffusion".into(), expected: n, found: rows.len() }.into());
            }
            rows.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter().enumerate().map(|(j, c)| b.coef(&format!("diffusion[{i}][{j}]"), c, state)).collect()
                })
                .collect::<Result<_, _>>()?
        }
    };
    let mut atoms = Vec::with_capacity(doc.jumps.atoms.len());
    for (k, a) in doc.jumps.atoms.iter().enumerate() {
        atoms.push(JumpAtom {
            intensity: b.coef(&format!("jumps.atoms[{k}].intensity"), &a.intensity, state)?,
            size: b.vector(&format!("jumps.atoms[{k}].size"), &a.size, state)?,
        });
    }
    let small = match &doc.jumps.small {
        None => None,
        Some(s) => Some(SmallJumps {
            density: b.coef("jumps.small.density", &s.density, SymbolSet::radial())?,
            cutoff: s.cutoff,
            directions: match &s.directions {
                Some(d) => d.iter().map(|d| (d.dir.clone(), d.weight)).collect(),
                None => SmallJumps::axis_directions(n),
            },
        }),
    };
    let spec = ProblemSpec {
        dim: n,
        horizon: doc.horizon,
        discount: doc.discount,
        drift,
        diffusion,
        jumps: JumpSpec { atoms, small, order_delta_bound: doc.jumps.order_delta_bound.unwrap_or(f64::INFINITY) },
        running_cost: b.coef("running_cost", &doc.running_cost, state)?,
        terminal_cost: b.coef("terminal_cost", &doc.terminal_cost, SymbolSet::terminal(n))?,
        intervention_cost: b.coef("intervention_cost", &doc.intervention_cost, SymbolSet::impulse(n))?,
        constants: doc.constants,
    };
    spec.check_structure()?;
    Ok(spec)
}

/// Parses a problem document; dominance violations are errors.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ConfigError> {
    let spec = parse_problem_lenient(text)?;
    spec.check()?;
    Ok(spec)
}

/// Parses a problem document without the dominance checks.
pub fn parse_problem_lenient(text: &str) -> Result<ProblemSpec, ConfigError> {
    let doc: ProblemDoc = from_json(text, "problem")?;
    build_problem(&doc, text)
}

fn render_coef(c: &CoefficientFn) -> CoefDoc {
    match c {
        CoefficientFn::Constant(v) => CoefDoc::Number(*v),
        CoefficientFn::Expr(e) => CoefDoc::Expr(e.render()),
        CoefficientFn::Affine { on, offset, coeffs, time } => {
            CoefDoc::Builtin(BuiltinDoc::Affine { on: *on, offset: *offset, coeffs: coeffs.clone(), time: *time })
        }
        CoefficientFn::Quadratic { on, offset, linear, matrix } => {
            let n = linear.len();
            CoefDoc::Builtin(BuiltinDoc::Quadratic {
                on: *on,
                offset: *offset,
                linear: linear.clone(),
                matrix: matrix.chunks(n.max(1)).map(|r| r.to_vec()).collect(),
            })
        }
        CoefficientFn::Table { var, knots, values } => CoefDoc::Builtin(BuiltinDoc::Table {
            var: table_var_name(*var),
            knots: knots.clone(),
            values: values.clone(),
        }),
    }
}

pub fn render_problem(spec: &ProblemSpec) -> ProblemDoc {
    let jumps = &spec.jumps;
    ProblemDoc {
        dim: spec.dim,
        horizon: spec.horizon,
        discount: spec.discount,
        drift: VectorDoc::List(spec.drift.iter().map(render_coef).collect()),
        diffusion: MatrixDoc::Rows(spec.diffusion.iter().map(|r| r.iter().map(render_coef).collect()).collect()),
        jumps: JumpsDoc {
            atoms: jumps
                .atoms
                .iter()
                .map(|a| AtomDoc {
                    intensity: render_coef(&a.intensity),
                    size: VectorDoc::List(a.size.iter().map(render_coef).collect()),
                })
                .collect(),
            small: jumps.small.as_ref().map(|s| SmallDoc {
                density: render_coef(&s.density),
                cutoff: s.cutoff,
                directions: Some(s.directions.iter().map(|(d, w)| DirectionDoc { dir: d.clone(), weight: *w }).collect()),
            }),
            order_delta_bound: Some(jumps.order_delta_bound).filter(|v| v.is_finite()),
        },
        running_cost: render_coef(&spec.running_cost),
        terminal_cost: render_coef(&spec.terminal_cost),
        intervention_cost: render_coef(&spec.intervention_cost),
        constants: spec.constants,
    }
}

pub fn render_problem_json(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(&render_problem(spec)).expect("problem documents serialize")
}

pub fn parse_solver(text: &str) -> Result<SolverConfig, ConfigError> {
    from_json(text, "solver config")
}

/// Monte Carlo settings; `n_paths = 0` and similar are rejected later by
/// the simulator so the caller can map them to a validation error.
pub fn parse_mc(text: &str) -> Result<PathConfig, ConfigError> {
    from_json(text, "mc config")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppSettings {
    /// Start point; the centre of the solved box when absent.
    pub x0: Option<Vec<f64>>,
    pub t0: f64,
    /// Fixed stopping time; `(t0 + T)/2` when neither this nor `exit_box` is set.
    pub s: Option<f64>,
    pub exit_box: Option<BoxRegion>,
    pub c_disc: f64,
    pub mc: PathConfig,
}

impl Default for DppSettings {
    fn default() -> Self {
        DppSettings { x0: None, t0: 0.0, s: None, exit_box: None, c_disc: DEFAULT_C_DISC, mc: PathConfig::default() }
    }
}

impl DppSettings {
    pub fn stop(&self, horizon: f64) -> DppStop {
        match (&self.exit_box, self.s) {
            (Some(b), _) => DppStop::FirstExit(b.clone()),
            (None, Some(s)) => DppStop::FixedTime(s),
            (None, None) => DppStop::FixedTime(0.5 * (self.t0 + horizon)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSettings {
    pub pairs: usize,
    pub seed: u64,
}

impl Default for BoundsSettings {
    fn default() -> Self {
        BoundsSettings { pairs: DEFAULT_BOUND_PAIRS, seed: 0 }
    }
}

/// Settings of the `validate` command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub dpp: DppSettings,
    pub bounds: BoundsSettings,
    pub viscosity: ProbeConfig,
    /// Region tolerance of the obstacle check; the solve's when absent.
    pub region_tol: Option<f64>,
}

pub fn parse_validate(text: &str) -> Result<ValidateConfig, ConfigError> {
    from_json(text, "validate config")
}

/// A strategy as written in files or on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrategyDoc {
    None,
    /// Feedback policy of a solve directory.
    Policy { solution: PathBuf },
    Fixed { events: Vec<EventDoc> },
    Threshold { trigger: String, impulse: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDoc {
    pub t: f64,
    pub xi: Vec<f64>,
}

/// `none`, `policy:DIR`, `fixed:T:XI0,XI1;T:...` or `file:PATH` (a JSON
/// strategy document; relative solution paths resolve against its folder).
pub fn parse_strategy(s: &str) -> Result<StrategyDoc, ConfigError> {
    let bad = |m: String| ConfigError::Invalid(format!("strategy {s:?}: {m}"));
    if s == "none" {
        return Ok(StrategyDoc::None);
    }
    if let Some(dir) = s.strip_prefix("policy:") {
        return Ok(StrategyDoc::Policy { solution: PathBuf::from(dir) });
    }
    if let Some(list) = s.strip_prefix("fixed:") {
        let mut events = Vec::new();
        for item in list.split(';').filter(|i| !i.trim().is_empty()) {
            let (t, xi) = item.split_once(':').ok_or_else(|| bad(format!("event {item:?} is not T:XI")))?;
            let t: f64 = t.trim().parse().map_err(|_| bad(format!("bad time {t:?}")))?;
            let xi = parse_csv_list(xi).map_err(bad)?;
            events.push(EventDoc { t, xi });
        }
        return Ok(StrategyDoc::Fixed { events });
    }
    if let Some(path) = s.strip_prefix("file:") {
        let path = Path::new(path);
        let mut doc: StrategyDoc = from_json(&read_text(path)?, "strategy")?;
        if let StrategyDoc::Policy { solution } = &mut doc {
            if solution.is_relative() {
                *solution = path.parent().unwrap_or(Path::new(".")).join(&*solution);
            }
        }
        return Ok(doc);
    }
    Err(bad("expected none, policy:DIR, fixed:T:XI;... or file:PATH".into()))
}

pub fn parse_csv_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?}"))).collect()
}
