//! Run configuration: a flat sectioned text format with typed keys.
//!
//! ```text
//! # comment
//! [problem]
//! dim = 3
//! p = 2.0
//! ell = 2
//! mu = [1.0, 1.0]
//! lambda = [[0.0, -1.0], [-1.0, 0.0]]
//! centers = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
//! eps = 0.4
//!
//! [grid]
//! n = 64
//! L = 8.0
//!
//! [solver]
//! max_iters = 2000
//! grad_tol = 1e-6
//! step0 = 1.0
//! armijo_c = 1e-4
//! armijo_shrink = 0.5
//! seed = 1
//! restarts = 0
//!
//! [study]
//! mode = "distinct"            # or "single-core"
//! eps_list = [0.4, 0.2, 0.1, 0.05]
//! lambda_list = [-1.0, -10.0, -100.0, -1000.0]
//! deltas = [0.25, 0.5, 1.0]
//! theta = 1e-3
//!
//! [output]
//! directory = "out"
//! dump_fields = false
//! emit_plots = true
//! ```
//!
//! Every key is optional and falls back to the defaults above; unknown
//! sections, unknown keys, and duplicate keys are errors. Values must fit on
//! one line; `#` starts a comment anywhere outside a quoted string. The
//! parser never panics on any input.

use nehari_core::model::Params;
use nehari_core::solver::SolverConfig;
use nehari_core::study::{SweepMode, DEFAULT_DELTAS, SUPPORT_THRESHOLD_FRACTION};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, message: message.into() }
}

/// Study-section settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySection {
    pub mode: SweepMode,
    pub eps_list: Vec<f64>,
    pub lambda_list: Vec<f64>,
    pub deltas: Vec<f64>,
    pub theta: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            mode: SweepMode::DistinctCenters,
            eps_list: vec![0.4, 0.2, 0.1, 0.05],
            lambda_list: vec![-1.0, -10.0, -100.0, -1000.0],
            deltas: DEFAULT_DELTAS.to_vec(),
            theta: SUPPORT_THRESHOLD_FRACTION,
        }
    }
}

/// Output-section settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: String,
    pub dump_fields: bool,
    pub emit_plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: "out".into(), dump_fields: false, emit_plots: true }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: Params,
    pub grid_n: usize,
    pub grid_half_width: f64,
    pub solver: SolverConfig,
    pub study: StudySection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: Params {
                dim: 3,
                p: 2.0,
                ell: 2,
                mu: vec![1.0, 1.0],
                lambda: vec![vec![0.0, -1.0], vec![-1.0, 0.0]],
                centers: vec![vec![-1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
                eps: 0.4,
            },
            grid_n: 64,
            grid_half_width: 8.0,
            solver: SolverConfig::default(),
            study: StudySection::default(),
            output: OutputSection::default(),
        }
    }
}

/// One parsed scalar or list token tree.
#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(f64),
    Bool(bool),
    Text(String),
    List(Vec<Value>),
}

/// Strip a trailing comment, respecting quoted strings.
fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Recursive-descent value parser over one line's byte positions.
struct ValueParser<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> ValueParser<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        ValueParser { src, pos: 0, line }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn parse_value(&mut self, depth: usize) -> Result<Value, ConfigError> {
        if depth > 4 {
            return Err(parse_err(self.line, "lists nested deeper than 4 levels"));
        }
        self.skip_ws();
        match self.peek() {
            Some('[') => self.parse_list(depth),
            Some('"') => self.parse_text(),
            Some(_) => self.parse_scalar(),
            None => Err(parse_err(self.line, "missing value")),
        }
    }

    fn parse_list(&mut self, depth: usize) -> Result<Value, ConfigError> {
        self.pos += 1; // consume '['
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(']') => {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                None => return Err(parse_err(self.line, "unterminated list")),
                _ => {}
            }
            items.push(self.parse_value(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.pos += 1;
                }
                Some(']') => {}
                Some(c) => {
                    return Err(parse_err(
                        self.line,
                        format!("expected ',' or ']' in list, found {c:?}"),
                    ))
                }
                None => return Err(parse_err(self.line, "unterminated list")),
            }
        }
    }

    fn parse_text(&mut self) -> Result<Value, ConfigError> {
        let rest = self.rest();
        debug_assert!(rest.starts_with('"'));
        match rest[1..].find('"') {
            Some(end) => {
                let text = rest[1..1 + end].to_string();
                self.pos += end + 2;
                Ok(Value::Text(text))
            }
            None => Err(parse_err(self.line, "unterminated string")),
        }
    }

    fn parse_scalar(&mut self) -> Result<Value, ConfigError> {
        let rest = self.rest();
        let end = rest.find([',', ']']).unwrap_or(rest.len());
        let token = rest[..end].trim();
        self.pos += end;
        if token.is_empty() {
            return Err(parse_err(self.line, "missing value"));
        }
        match token {
            "true" => return Ok(Value::Bool(true)),
            "false" => return Ok(Value::Bool(false)),
            _ => {}
        }
        match token.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Value::Number(x)),
            Ok(_) => Err(parse_err(self.line, format!("{token:?} is not a finite number"))),
            Err(_) => Err(parse_err(
                self.line,
                format!("{token:?} is not a number, boolean, or quoted string"),
            )),
        }
    }

    fn finish(mut self, value: Value) -> Result<Value, ConfigError> {
        self.skip_ws();
        if !self.rest().is_empty() {
            return Err(parse_err(
                self.line,
                format!("unexpected trailing content {:?}", self.rest()),
            ));
        }
        Ok(value)
    }
}

fn parse_line_value(src: &str, line: usize) -> Result<Value, ConfigError> {
    let mut p = ValueParser::new(src, line);
    let v = p.parse_value(0)?;
    p.finish(v)
}

// Typed extractors, each reporting the offending key and line.

fn as_f64(v: &Value, key: &str, line: usize) -> Result<f64, ConfigError> {
    match v {
        Value::Number(x) => Ok(*x),
        _ => Err(parse_err(line, format!("{key} must be a number"))),
    }
}

fn as_usize(v: &Value, key: &str, line: usize) -> Result<usize, ConfigError> {
    match v {
        Value::Number(x) if *x >= 0.0 && x.fract() == 0.0 && *x <= (1u64 << 53) as f64 => {
            Ok(*x as usize)
        }
        _ => Err(parse_err(line, format!("{key} must be a nonnegative integer"))),
    }
}

fn as_u64(v: &Value, key: &str, line: usize) -> Result<u64, ConfigError> {
    as_usize(v, key, line).map(|x| x as u64)
}

fn as_bool(v: &Value, key: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        Value::Bool(b) => Ok(*b),
        _ => Err(parse_err(line, format!("{key} must be true or false"))),
    }
}

fn as_text<'v>(v: &'v Value, key: &str, line: usize) -> Result<&'v str, ConfigError> {
    match v {
        Value::Text(s) => Ok(s),
        _ => Err(parse_err(line, format!("{key} must be a quoted string"))),
    }
}

fn as_f64_list(v: &Value, key: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::List(items) => items.iter().map(|it| as_f64(it, key, line)).collect(),
        _ => Err(parse_err(line, format!("{key} must be a bracketed list of numbers"))),
    }
}

fn as_f64_matrix(v: &Value, key: &str, line: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
    match v {
        Value::List(items) => items.iter().map(|it| as_f64_list(it, key, line)).collect(),
        _ => Err(parse_err(line, format!("{key} must be a bracketed list of lists"))),
    }
}

/// Parse the config text into a fully resolved, validated RunConfig.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut section: Option<String> = None;
    let mut seen: Vec<(String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                .trim();
            match name {
                "problem" | "grid" | "solver" | "study" | "output" => {
                    section = Some(name.to_string());
                }
                _ => return Err(parse_err(line_no, format!("unknown section [{name}]"))),
            }
            continue;
        }
        let Some((key, value_src)) = line.split_once('=') else {
            return Err(parse_err(line_no, format!("expected `key = value`, found {line:?}")));
        };
        let key = key.trim();
        let sec = section
            .clone()
            .ok_or_else(|| parse_err(line_no, format!("key {key:?} appears before any [section]")))?;
        if seen.iter().any(|(s, k)| *s == sec && k == key) {
            return Err(parse_err(line_no, format!("duplicate key {key:?} in [{sec}]")));
        }
        seen.push((sec.clone(), key.to_string()));
        let value = parse_line_value(value_src, line_no)?;

        match (sec.as_str(), key) {
            ("problem", "dim") => cfg.params.dim = as_usize(&value, key, line_no)?,
            ("problem", "p") => cfg.params.p = as_f64(&value, key, line_no)?,
            ("problem", "ell") => cfg.params.ell = as_usize(&value, key, line_no)?,
            ("problem", "mu") => cfg.params.mu = as_f64_list(&value, key, line_no)?,
            ("problem", "lambda") => cfg.params.lambda = as_f64_matrix(&value, key, line_no)?,
            ("problem", "centers") => cfg.params.centers = as_f64_matrix(&value, key, line_no)?,
            ("problem", "eps") => cfg.params.eps = as_f64(&value, key, line_no)?,
            ("grid", "n") => cfg.grid_n = as_usize(&value, key, line_no)?,
            ("grid", "L") => cfg.grid_half_width = as_f64(&value, key, line_no)?,
            ("solver", "max_iters") => cfg.solver.max_iters = as_usize(&value, key, line_no)?,
            ("solver", "grad_tol") => cfg.solver.grad_tol = as_f64(&value, key, line_no)?,
            ("solver", "step0") => cfg.solver.step0 = as_f64(&value, key, line_no)?,
            ("solver", "armijo_c") => cfg.solver.armijo_c = as_f64(&value, key, line_no)?,
            ("solver", "armijo_shrink") => {
                cfg.solver.armijo_shrink = as_f64(&value, key, line_no)?
            }
            ("solver", "seed") => cfg.solver.seed = as_u64(&value, key, line_no)?,
            ("solver", "restarts") => cfg.solver.restarts = as_usize(&value, key, line_no)?,
            ("study", "mode") => {
                cfg.study.mode = match as_text(&value, key, line_no)? {
                    "distinct" => SweepMode::DistinctCenters,
                    "single-core" => SweepMode::SingleCore,
                    other => {
                        return Err(parse_err(
                            line_no,
                            format!("mode must be \"distinct\" or \"single-core\", got {other:?}"),
                        ))
                    }
                }
            }
            ("study", "eps_list") => cfg.study.eps_list = as_f64_list(&value, key, line_no)?,
            ("study", "lambda_list") => {
                cfg.study.lambda_list = as_f64_list(&value, key, line_no)?
            }
            ("study", "deltas") => cfg.study.deltas = as_f64_list(&value, key, line_no)?,
            ("study", "theta") => cfg.study.theta = as_f64(&value, key, line_no)?,
            ("output", "directory") => {
                cfg.output.directory = as_text(&value, key, line_no)?.to_string()
            }
            ("output", "dump_fields") => cfg.output.dump_fields = as_bool(&value, key, line_no)?,
            ("output", "emit_plots") => cfg.output.emit_plots = as_bool(&value, key, line_no)?,
            _ => return Err(parse_err(line_no, format!("unknown key {key:?} in [{sec}]"))),
        }
    }

    validate(&cfg)?;
    Ok(cfg)
}

/// Semantic validation of a parsed configuration.
fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    if let Some(v) = nehari_core::model::validate(&cfg.params).first() {
        return Err(ConfigError::Invalid(v.to_string()));
    }
    cfg.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if cfg.grid_n == 0 || cfg.grid_n > 4096 {
        return Err(ConfigError::Invalid(format!(
            "grid n must lie in 1..=4096, got {}",
            cfg.grid_n
        )));
    }
    if !(cfg.grid_half_width.is_finite() && cfg.grid_half_width > 0.0) {
        return Err(ConfigError::Invalid(format!(
            "grid L must be positive and finite, got {}",
            cfg.grid_half_width
        )));
    }
    if !(cfg.study.theta > 0.0 && cfg.study.theta < 1.0) {
        return Err(ConfigError::Invalid(format!(
            "study theta must lie in (0, 1), got {}",
            cfg.study.theta
        )));
    }
    for d in &cfg.study.deltas {
        if !(d.is_finite() && *d > 0.0) {
            return Err(ConfigError::Invalid(format!("study deltas must be positive, got {d}")));
        }
    }
    for e in &cfg.study.eps_list {
        if !(e.is_finite() && *e > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "study eps_list entries must be positive, got {e}"
            )));
        }
    }
    for l in &cfg.study.lambda_list {
        if !(l.is_finite() && *l < 0.0) {
            return Err(ConfigError::Invalid(format!(
                "study lambda_list entries must be negative, got {l}"
            )));
        }
    }
    Ok(())
}

/// Render the resolved config in the same format `parse_config` accepts;
/// used for the CSV headers and manifests, so outputs embed their exact
/// provenance.
pub fn render_config(cfg: &RunConfig) -> String {
    fn list(xs: &[f64]) -> String {
        let items: Vec<String> = xs.iter().map(|x| format!("{x}")).collect();
        format!("[{}]", items.join(", "))
    }
    fn matrix(xss: &[Vec<f64>]) -> String {
        let items: Vec<String> = xss.iter().map(|xs| list(xs)).collect();
        format!("[{}]", items.join(", "))
    }
    let mode = match cfg.study.mode {
        SweepMode::DistinctCenters => "distinct",
        SweepMode::SingleCore => "single-core",
    };
    format!(
        "[problem]\n\
         dim = {}\np = {}\nell = {}\nmu = {}\nlambda = {}\ncenters = {}\neps = {}\n\
         \n[grid]\nn = {}\nL = {}\n\
         \n[solver]\nmax_iters = {}\ngrad_tol = {}\nstep0 = {}\narmijo_c = {}\narmijo_shrink = {}\nseed = {}\nrestarts = {}\n\
         \n[study]\nmode = \"{}\"\neps_list = {}\nlambda_list = {}\ndeltas = {}\ntheta = {}\n\
         \n[output]\ndirectory = \"{}\"\ndump_fields = {}\nemit_plots = {}\n",
        cfg.params.dim,
        cfg.params.p,
        cfg.params.ell,
        list(&cfg.params.mu),
        matrix(&cfg.params.lambda),
        matrix(&cfg.params.centers),
        cfg.params.eps,
        cfg.grid_n,
        cfg.grid_half_width,
        cfg.solver.max_iters,
        cfg.solver.grad_tol,
        cfg.solver.step0,
        cfg.solver.armijo_c,
        cfg.solver.armijo_shrink,
        cfg.solver.seed,
        cfg.solver.restarts,
        mode,
        list(&cfg.study.eps_list),
        list(&cfg.study.lambda_list),
        list(&cfg.study.deltas),
        cfg.study.theta,
        cfg.output.directory,
        cfg.output.dump_fields,
        cfg.output.emit_plots,
    )
}
