//! Experiment specs and the batch runner behind the `weakmeas` binary.
//!
//! A spec is a JSON object with `kind`, `seed`, `out` and the parameters of
//! that kind. Parameters may sit at the top level or inside one level of
//! grouping objects (`{"measurement": {"k": 0.1}}`); group names are
//! ignored. Frequencies are accepted as angular (`omega*`, rad/s) or as
//! ordinary frequencies (`freq*`, Hz) and stored as angular.
//!
//! Every data file is CSV with a header row, floats printed with 17
//! significant digits, and written through a temporary file in the output
//! directory that is renamed into place. A `manifest.json` lists what was
//! written.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::feedback::{self, FeedbackConfig, FeedbackError};
use crate::measure::{MeasurementParams, PhiSign};
use crate::paramp::{self, DuffingParams, ParampError};
use crate::qstate::{BlochVector, QubitState};
use crate::rng::{hash_str, mix};
use crate::sme::{self, Scheme, SmeConfig, SmeError};
use crate::traj::{self, BackactionConfig, TargetWindow, TrajError};
use crate::{ParamError, Quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Trajectory,
    Ensemble,
    BackactionTomography,
    ConditionalTomography,
    PostselectMlp,
    PastState,
    Feedback,
    FeedbackSweep,
    ParampTransfer,
    ParampPhaseDiagram,
    ParampGain,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::Trajectory,
        Kind::Ensemble,
        Kind::BackactionTomography,
        Kind::ConditionalTomography,
        Kind::PostselectMlp,
        Kind::PastState,
        Kind::Feedback,
        Kind::FeedbackSweep,
        Kind::ParampTransfer,
        Kind::ParampPhaseDiagram,
        Kind::ParampGain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Trajectory => "trajectory",
            Kind::Ensemble => "ensemble",
            Kind::BackactionTomography => "backaction-tomography",
            Kind::ConditionalTomography => "conditional-tomography",
            Kind::PostselectMlp => "postselect-mlp",
            Kind::PastState => "past-state",
            Kind::Feedback => "feedback",
            Kind::FeedbackSweep => "feedback-sweep",
            Kind::ParampTransfer => "paramp-transfer",
            Kind::ParampPhaseDiagram => "paramp-phase-diagram",
            Kind::ParampGain => "paramp-gain",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, SpecError> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| SpecError::UnknownKind(s.to_string()))
    }

    fn keys(self) -> Vec<Key> {
        use Ty::*;
        let measurement = || {
            vec![
                Key::req("k", NonNeg, "1/s", "measurement strength"),
                Key::req("eta", Efficiency, "", "quantum efficiency"),
                Key::req("dt", Positive, "s", "record bin width"),
                Key::req("duration", Positive, "s", "total time"),
                Key::opt("gamma", NonNeg, "1/s", "0", "environmental dephasing rate"),
                Key::opt("omega_r", Real, "rad/s", "0", "Rabi frequency"),
                Key::opt("quadrature", Choice(&["Q", "I"]), "", "Q", "measured quadrature"),
                Key::opt("scheme", Choice(&["kraus", "euler-maruyama"]), "", "kraus", "time-stepping scheme"),
                Key::opt("initial", Choice(INITIAL), "", "ground", "initial state"),
            ]
        };
        let loop_keys = || {
            vec![
                Key::req("omega_r", Positive, "rad/s", "Rabi reference frequency"),
                Key::opt("k", NonNeg, "1/s", "omega_r/20", "measurement strength"),
                Key::opt("eta", Efficiency, "", "0.5", "detector efficiency"),
                Key::opt("gamma_env", NonNeg, "1/s", "k/2", "environmental dephasing rate"),
                Key::opt("dt", Positive, "s", "0.05/omega_r", "record bin width"),
                Key::opt("duration", Positive, "s", "8 decay times", "total time"),
                Key::opt("delay", NonNeg, "s", "0", "loop delay, a multiple of dt"),
                Key::opt("f_lp", Positive, "rad/s", "omega_r/10", "low-pass cutoff"),
                Key::opt("t_on", NonNeg, "s", "0", "time the loop closes"),
                Key::opt("reference_phase", Real, "rad", "0", "demodulation phase offset"),
            ]
        };
        let duffing = || {
            vec![
                Key::req("omega0", Positive, "rad/s", "linear resonance"),
                Key::req("Gamma", Positive, "1/s", "amplitude damping"),
            ]
        };
        match self {
            Kind::Trajectory => measurement(),
            Kind::Ensemble => {
                let mut v = measurement();
                v.push(Key::req("n", Count(1), "", "number of trajectories"));
                v
            }
            Kind::BackactionTomography => vec![
                Key::req("S", Positive, "", "total measurement strength 16k*eta*tau"),
                Key::req("eta", Efficiency, "", "quantum efficiency"),
                Key::req("tau", Positive, "s", "measurement duration"),
                Key::req("shots", Count(1), "", "number of single-shot runs"),
                Key::opt("gamma", NonNeg, "1/s", "0", "environmental dephasing rate"),
                Key::opt("quadrature", Choice(&["Q", "I"]), "", "Q", "measured quadrature"),
                Key::opt("steps", Count(1), "", "200", "record bins per shot"),
                Key::opt("bin_width", Positive, "", "0.1", "V_m histogram bin width"),
                Key::opt("v_max", Positive, "", "2", "largest |V_m| reported"),
            ],
            Kind::ConditionalTomography => {
                let mut v = measurement();
                v.push(Key::req("n_runs", Count(1), "", "tomography runs"));
                v.push(Key::opt("eps", Positive, "", "0.05", "window half width in x and z"));
                v.push(Key::opt("times", Count(1), "", "5", "number of equally spaced check times"));
                v
            }
            Kind::PostselectMlp => {
                let mut v = measurement();
                v.push(Key::req("n", Count(1), "", "ensemble size"));
                v.push(Key::req("x_f", Real, "", "final-state x"));
                v.push(Key::req("z_f", Real, "", "final-state z"));
                v.push(Key::opt("t_f", Positive, "s", "end of run", "post-selection time"));
                v.push(Key::opt("eps", Positive, "", "0.05", "window half width in x and z"));
                v.push(Key::opt("bins", Count(8), "", "40", "histogram bins per axis"));
                v
            }
            Kind::PastState => measurement(),
            Kind::Feedback => {
                let mut v = loop_keys();
                v.insert(1, Key::req("F", NonNeg, "", "loop gain"));
                v.push(Key::opt("n", Count(1), "", "1", "number of trajectories"));
                v
            }
            Kind::FeedbackSweep => {
                let mut v = loop_keys();
                v.push(Key::opt("gains", List, "", "0,0.05,0.1,0.15,0.2,0.3,0.5,1,2,4", "loop gains F (at least 5)"));
                v.push(Key::opt("n", Count(1), "", "1000", "trajectories per gain"));
                v
            }
            Kind::ParampTransfer => {
                let mut v = duffing();
                v.push(Key::req("omega_d", Positive, "rad/s", "drive frequency"));
                v.push(Key::req("F_min", Positive, "rad^2/s^2", "smallest drive"));
                v.push(Key::req("F_max", Positive, "rad^2/s^2", "largest drive"));
                v.push(Key::opt("points", Count(2), "", "50", "log-spaced drive points"));
                v
            }
            Kind::ParampPhaseDiagram => {
                let mut v = duffing();
                v.push(Key::req("omega_d_min", Positive, "rad/s", "lowest drive frequency"));
                v.push(Key::req("omega_d_max", Positive, "rad/s", "highest drive frequency"));
                v.push(Key::opt("omega_d_points", Count(20), "", "20", "drive frequencies"));
                v.push(Key::req("F_min", Positive, "rad^2/s^2", "smallest drive"));
                v.push(Key::req("F_max", Positive, "rad^2/s^2", "largest drive"));
                v.push(Key::opt("F_points", Count(20), "", "24", "log-spaced drives"));
                v
            }
            Kind::ParampGain => {
                let mut v = duffing();
                v.push(Key::req("omega_d", Positive, "rad/s", "pump frequency"));
                v.push(Key::req("F_d", Positive, "rad^2/s^2", "pump amplitude"));
                v.push(Key::req("signal_phase", Real, "rad", "signal phase from the amplified axis"));
                v.push(Key::opt("signal_amp", Positive, "rad^2/s^2", "F_d/1000", "signal amplitude, at most F_d/100"));
                v.push(Key::opt("points", Count(1), "", "1", "phases signal_phase + j*pi/points"));
                v
            }
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const INITIAL: &[&str] = &["ground", "excited", "plus_x", "minus_x", "plus_y", "minus_y", "mixed"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ty {
    Positive,
    NonNeg,
    Real,
    Efficiency,
    Count(u64),
    Choice(&'static [&'static str]),
    /// Comma-separated reals in a string.
    List,
}

#[derive(Debug, Clone)]
struct Key {
    name: &'static str,
    ty: Ty,
    unit: &'static str,
    default: Option<&'static str>,
    doc: &'static str,
}

impl Key {
    fn req(name: &'static str, ty: Ty, unit: &'static str, doc: &'static str) -> Self {
        Self { name, ty, unit, default: None, doc }
    }

    fn opt(name: &'static str, ty: Ty, unit: &'static str, default: &'static str, doc: &'static str) -> Self {
        Self { name, ty, unit, default: Some(default), doc }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("spec must be a JSON object")]
    NotObject,
    #[error("unknown kind `{0}`; valid kinds: {valid}", valid = Kind::ALL.map(|k| k.name()).join(", "))]
    UnknownKind(String),
    #[error("missing key `{key}` for kind {kind}")]
    Missing { kind: String, key: String },
    #[error("unknown key `{key}` for kind {kind}")]
    UnknownKey { kind: String, key: String },
    #[error("key `{0}` appears more than once")]
    Duplicate(String),
    #[error("key `{0}` nests deeper than one level")]
    TooDeep(String),
    #[error("key `{key}`: expected {expected}")]
    Type { key: String, expected: String },
    #[error("key `{key}` = {value} out of range: expected {expected}")]
    Range { key: String, value: String, expected: String },
    #[error("both `{0}` and `{1}` given; use one unit")]
    BothUnits(String, String),
    #[error("invalid {kind} configuration: {message}")]
    Invalid { kind: String, message: String },
}

/// A parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub seed: u64,
    pub out: PathBuf,
    /// Validated parameters, frequencies in rad/s.
    pub params: BTreeMap<String, Value>,
}

impl ExperimentSpec {
    /// Flat JSON echo; parses back to an equal spec.
    pub fn to_json(&self) -> Json {
        let mut m = Map::new();
        m.insert("kind".into(), Json::from(self.kind.name()));
        m.insert("seed".into(), Json::from(self.seed));
        m.insert("out".into(), Json::from(self.out.to_string_lossy().into_owned()));
        for (k, v) in &self.params {
            m.insert(k.clone(), serde_json::to_value(v).expect("scalar"));
        }
        Json::Object(m)
    }

    fn num(&self, key: &str) -> Option<f64> {
        match self.params.get(key) {
            Some(Value::Num(v)) => Some(*v),
            _ => None,
        }
    }

    fn num_or(&self, key: &str, default: f64) -> f64 {
        self.num(key).unwrap_or(default)
    }

    fn req(&self, key: &str) -> f64 {
        self.num(key).unwrap_or_else(|| panic!("validated spec lacks `{key}`"))
    }

    fn count_or(&self, key: &str, default: usize) -> usize {
        self.num(key).map(|v| v as usize).unwrap_or(default)
    }

    fn text_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        match self.params.get(key) {
            Some(Value::Str(s)) => s,
            _ => default,
        }
    }

    /// Seed of stream `index` for this spec's kind.
    pub fn stream_seed(&self, index: u64) -> u64 {
        mix(self.seed, hash_str(self.kind.name())).wrapping_add(index)
    }
}

fn syntax(e: serde_json::Error) -> SpecError {
    SpecError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
}

/// Parse and validate a spec document.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, SpecError> {
    let doc: Json = serde_json::from_str(text).map_err(syntax)?;
    let Json::Object(top) = doc else {
        return Err(SpecError::NotObject);
    };
    let mut flat: Vec<(String, Json)> = Vec::new();
    for (k, v) in top {
        match v {
            Json::Object(inner) => {
                for (ik, iv) in inner {
                    if iv.is_object() {
                        return Err(SpecError::TooDeep(format!("{k}.{ik}")));
                    }
                    flat.push((ik, iv));
                }
            }
            other => flat.push((k, other)),
        }
    }
    let mut map: BTreeMap<String, Json> = BTreeMap::new();
    for (k, v) in flat {
        if map.insert(k.clone(), v).is_some() {
            return Err(SpecError::Duplicate(k));
        }
    }
    let kind = match map.remove("kind") {
        Some(Json::String(s)) => Kind::from_name(&s)?,
        Some(_) => return Err(SpecError::Type { key: "kind".into(), expected: "a string".into() }),
        None => return Err(SpecError::Missing { kind: "?".into(), key: "kind".into() }),
    };
    let kname = kind.name().to_string();
    let seed = match map.remove("seed") {
        Some(v) => v.as_u64().ok_or_else(|| SpecError::Type { key: "seed".into(), expected: "a non-negative integer".into() })?,
        None => return Err(SpecError::Missing { kind: kname, key: "seed".into() }),
    };
    let out = match map.remove("out") {
        Some(Json::String(s)) if !s.is_empty() => PathBuf::from(s),
        Some(_) => return Err(SpecError::Type { key: "out".into(), expected: "a non-empty path string".into() }),
        None => return Err(SpecError::Missing { kind: kname, key: "out".into() }),
    };
    let keys = kind.keys();
    // Move `freq*` values onto their `omega*` names.
    let freq_names: Vec<String> = map.keys().filter(|k| k.starts_with("freq")).cloned().collect();
    for f in freq_names {
        let omega = format!("omega{}", &f["freq".len()..]);
        if !keys.iter().any(|k| k.name == omega) {
            continue;
        }
        if map.contains_key(&omega) {
            return Err(SpecError::BothUnits(omega, f));
        }
        let v = map.remove(&f).expect("present");
        let hz = v.as_f64().ok_or_else(|| SpecError::Type { key: f.clone(), expected: "a number".into() })?;
        map.insert(omega, Json::from(2.0 * PI * hz));
    }
    if let Some(extra) = map.keys().find(|k| !keys.iter().any(|d| d.name == k.as_str())) {
        return Err(SpecError::UnknownKey { kind: kname, key: extra.clone() });
    }
    let mut params = BTreeMap::new();
    for key in &keys {
        match map.remove(key.name) {
            Some(v) => {
                params.insert(key.name.to_string(), check_value(key, v)?);
            }
            None if key.default.is_none() => return Err(SpecError::Missing { kind: kname, key: key.name.into() }),
            None => {}
        }
    }
    Ok(ExperimentSpec { kind, seed, out, params })
}

fn check_value(key: &Key, v: Json) -> Result<Value, SpecError> {
    let ty_err = |expected: &str| SpecError::Type { key: key.name.into(), expected: expected.into() };
    let range = |value: String, expected: &str| SpecError::Range { key: key.name.into(), value, expected: expected.into() };
    match key.ty {
        Ty::Choice(options) => {
            let s = v.as_str().ok_or_else(|| ty_err("a string"))?;
            if options.contains(&s) {
                Ok(Value::Str(s.into()))
            } else {
                Err(range(s.into(), &format!("one of {}", options.join(", "))))
            }
        }
        Ty::List => {
            let s = v.as_str().ok_or_else(|| ty_err("a comma-separated string of numbers"))?;
            let parsed = parse_list(s).ok_or_else(|| range(s.into(), "comma-separated finite numbers"))?;
            if parsed.iter().any(|x| *x < 0.0) {
                return Err(range(s.into(), "values >= 0"));
            }
            Ok(Value::Str(s.into()))
        }
        ty => {
            let x = v.as_f64().ok_or_else(|| ty_err("a number"))?;
            let ok = x.is_finite()
                && match ty {
                    Ty::Positive => x > 0.0,
                    Ty::NonNeg => x >= 0.0,
                    Ty::Real => true,
                    Ty::Efficiency => x > 0.0 && x <= 1.0,
                    Ty::Count(min) => x.fract() == 0.0 && x >= min as f64 && x <= 1e15,
                    Ty::Choice(_) | Ty::List => unreachable!(),
                };
            if ok {
                Ok(Value::Num(x))
            } else {
                let expected = match ty {
                    Ty::Positive => "a finite value > 0".to_string(),
                    Ty::NonNeg => "a finite value >= 0".to_string(),
                    Ty::Real => "a finite value".to_string(),
                    Ty::Efficiency => "a value in (0, 1]".to_string(),
                    Ty::Count(min) => format!("an integer >= {min}"),
                    Ty::Choice(_) | Ty::List => unreachable!(),
                };
                Err(range(x.to_string(), &expected))
            }
        }
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|p| p.trim().parse::<f64>().ok().filter(|x| x.is_finite())).collect()
}

/// Keys, units and defaults of a kind.
pub fn describe(kind: &str) -> Result<String, SpecError> {
    let kind = Kind::from_name(kind)?;
    let keys = kind.keys();
    let mut s = String::new();
    writeln!(s, "kind: {kind}").unwrap();
    writeln!(s, "required:").unwrap();
    writeln!(s, "  seed     master seed (non-negative integer)").unwrap();
    writeln!(s, "  out      output directory").unwrap();
    let line = |s: &mut String, k: &Key| {
        let unit = if k.unit.is_empty() { String::new() } else { format!(" [{}]", k.unit) };
        let dflt = k.default.map(|d| format!(" (default {d})")).unwrap_or_default();
        writeln!(s, "  {}{unit}  {}{dflt}", k.name, k.doc).unwrap();
    };
    for k in keys.iter().filter(|k| k.default.is_none()) {
        line(&mut s, k);
    }
    writeln!(s, "optional:").unwrap();
    for k in keys.iter().filter(|k| k.default.is_some()) {
        line(&mut s, k);
    }
    if keys.iter().any(|k| k.name.starts_with("omega")) {
        writeln!(s, "frequencies named omega* [rad/s] may instead be given as freq* [Hz]").unwrap();
    }
    Ok(s)
}

/// Failure inside a library routine.
#[derive(Debug, thiserror::Error)]
pub enum ModuleError {
    #[error(transparent)]
    Sme(#[from] SmeError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Paramp(#[from] ParampError),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{kind} failed: {source}")]
    Run { kind: Kind, source: ModuleError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for spec problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub spec: Json,
    pub files: Vec<FileEntry>,
    pub version: String,
    pub wall_time_s: f64,
    /// Scalar results (fitted efficiencies, cusp location, counts).
    pub summary: BTreeMap<String, f64>,
}

pub const MANIFEST: &str = "manifest.json";

/// `git describe`-style version string.
pub fn version() -> String {
    match option_env!("WEAKMEAS_GIT_DESCRIBE") {
        Some(d) => d.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

struct Csv {
    name: &'static str,
    body: String,
    rows: usize,
}

impl Csv {
    fn new(name: &'static str, header: &[&str]) -> Self {
        Self { name, body: header.join(",") + "\n", rows: 0 }
    }

    fn row(&mut self, cells: &[Cell]) {
        let mut first = true;
        for c in cells {
            if !first {
                self.body.push(',');
            }
            first = false;
            match c {
                Cell::F(v) => write!(self.body, "{v:.16e}").unwrap(),
                Cell::I(v) => write!(self.body, "{v}").unwrap(),
            }
        }
        self.body.push('\n');
        self.rows += 1;
    }
}

enum Cell {
    F(f64),
    I(u64),
}

use Cell::{F, I};

struct Output {
    files: Vec<Csv>,
    summary: BTreeMap<String, f64>,
}

impl Output {
    fn new() -> Self {
        Self { files: Vec::new(), summary: BTreeMap::new() }
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<u64, CliError> {
    let target = dir.join(name);
    let io = |source| CliError::Io { path: target.clone(), source };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(&target).map_err(|e| io(e.error))?;
    Ok(bytes.len() as u64)
}

/// Execute a validated spec, writing data files and the manifest.
pub fn run(spec: &ExperimentSpec) -> Result<ResultManifest, CliError> {
    let start = Instant::now();
    let out = execute(spec)?;
    std::fs::create_dir_all(&spec.out).map_err(|source| CliError::Io { path: spec.out.clone(), source })?;
    let mut files = Vec::new();
    for csv in &out.files {
        let bytes = write_atomic(&spec.out, csv.name, csv.body.as_bytes())?;
        files.push(FileEntry { name: csv.name.into(), rows: csv.rows, bytes });
    }
    let manifest = ResultManifest {
        spec: spec.to_json(),
        files,
        version: version(),
        wall_time_s: start.elapsed().as_secs_f64(),
        summary: out.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&spec.out, MANIFEST, text.as_bytes())?;
    Ok(manifest)
}

/// Parse, run and report; the binary's entry point.
pub fn run_file(path: &Path) -> Result<ResultManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    run(&parse_spec(&text)?)
}

fn invalid(kind: Kind, e: impl fmt::Display) -> CliError {
    CliError::Spec(SpecError::Invalid { kind: kind.name().into(), message: e.to_string() })
}

fn initial_state(name: &str) -> QubitState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| num_complex::Complex64::new(re, im);
    match name {
        "excited" => QubitState::excited(),
        "plus_x" => QubitState::plus_x(),
        "minus_x" => QubitState::from_bloch(BlochVector::new(-1.0, 0.0, 0.0)).expect("pure"),
        "plus_y" => QubitState::pure(c(h, 0.0), c(0.0, h)).expect("pure"),
        "minus_y" => QubitState::pure(c(h, 0.0), c(0.0, -h)).expect("pure"),
        "mixed" => QubitState::maximally_mixed(),
        _ => QubitState::ground(),
    }
}

fn sme_config(spec: &ExperimentSpec, seed: u64) -> Result<SmeConfig, CliError> {
    let kind = spec.kind;
    let p = MeasurementParams::new(spec.req("k"), spec.req("eta"), spec.req("dt"), spec.num_or("gamma", 0.0))
        .map_err(|e| invalid(kind, e))?;
    let q = if spec.text_or("quadrature", "Q") == "I" { Quadrature::I } else { Quadrature::Q };
    let scheme = if spec.text_or("scheme", "kraus") == "euler-maruyama" { Scheme::EulerMaruyama } else { Scheme::Kraus };
    let init = initial_state(spec.text_or("initial", "ground"));
    let cfg = SmeConfig::new(p, spec.num_or("omega_r", 0.0), spec.req("duration"), init, seed).map_err(|e| invalid(kind, e))?;
    Ok(cfg.with_quadrature(q).with_scheme(scheme).with_phi_sign(PhiSign::Standard))
}

fn feedback_config(spec: &ExperimentSpec, gain: f64) -> Result<FeedbackConfig, CliError> {
    let kind = spec.kind;
    let w = spec.req("omega_r");
    let k = spec.num_or("k", w / 20.0);
    let eta = spec.num_or("eta", 0.5);
    let gamma_env = spec.num_or("gamma_env", 0.25 * 2.0 * k);
    let dt = spec.num_or("dt", 0.05 / w);
    let decay = 2.0 / (2.0 * k + gamma_env);
    let duration = spec.num_or("duration", 8.0 * decay);
    let build = || -> Result<FeedbackConfig, Box<dyn std::error::Error>> {
        let p = MeasurementParams::new(k, eta, dt, gamma_env)?;
        let base = SmeConfig::new(p, w, duration, QubitState::ground(), spec.stream_seed(0))?;
        let mut cfg = FeedbackConfig::new(base, gain)?;
        cfg.f_lp = spec.num_or("f_lp", w / 10.0);
        cfg.t_on = spec.num_or("t_on", 0.0);
        cfg.reference_phase = spec.num_or("reference_phase", 0.0);
        Ok(cfg.with_delay(spec.num_or("delay", 0.0))?)
    };
    build().map_err(|e| invalid(kind, e))
}

fn duffing(spec: &ExperimentSpec, omega_d: f64, drive: f64) -> Result<DuffingParams, CliError> {
    DuffingParams::new(spec.req("omega0"), spec.req("Gamma"), omega_d, drive).map_err(|e: ParamError| invalid(spec.kind, e))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn execute(spec: &ExperimentSpec) -> Result<Output, CliError> {
    let kind = spec.kind;
    let fail = |e: ModuleError| CliError::Run { kind, source: e };
    let mut out = Output::new();
    match kind {
        Kind::Trajectory => {
            let cfg = sme_config(spec, spec.stream_seed(0))?;
            let tr = sme::simulate(&cfg).map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new("trajectory.csv", &["t", "x", "y", "z", "V"]);
            for ((t, s), (_, v)) in tr.states.iter().skip(1).zip(&tr.record.samples) {
                let b = s.bloch();
                csv.row(&[F(*t), F(b.x), F(b.y), F(b.z), F(*v)]);
            }
            out.files.push(csv);
        }
        Kind::Ensemble => {
            let cfg = sme_config(spec, spec.stream_seed(0))?;
            let n = spec.count_or("n", 1);
            let runs = sme::ensemble(&cfg, n, spec.stream_seed(0)).map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new("ensemble.csv", &["traj_id", "t", "x", "y", "z", "V"]);
            for (id, tr) in runs.iter().enumerate() {
                for ((t, s), (_, v)) in tr.states.iter().skip(1).zip(&tr.record.samples) {
                    let b = s.bloch();
                    csv.row(&[I(id as u64), F(*t), F(b.x), F(b.y), F(b.z), F(*v)]);
                }
            }
            out.files.push(csv);
        }
        Kind::BackactionTomography => {
            let mut cfg = BackactionConfig::new(spec.req("S"), spec.req("eta"), spec.req("tau"), spec.count_or("shots", 1), spec.stream_seed(0));
            cfg.gamma = spec.num_or("gamma", 0.0);
            cfg.quadrature = if spec.text_or("quadrature", "Q") == "I" { Quadrature::I } else { Quadrature::Q };
            cfg.steps = spec.count_or("steps", 200);
            cfg.bin_width = spec.num_or("bin_width", 0.1);
            cfg.v_max = spec.num_or("v_max", 2.0);
            cfg.sme_config().map_err(|e| invalid(kind, e))?;
            let bins = traj::backaction_tomography(&cfg).map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new(
                "backaction.csv",
                &["V_m", "n", "x", "y", "z", "x_stderr", "y_stderr", "z_stderr", "x_pred", "y_pred", "z_pred"],
            );
            for b in &bins {
                let p = cfg.prediction(b.v_m);
                csv.row(&[
                    F(b.v_m),
                    I(b.n as u64),
                    F(b.mean.x),
                    F(b.mean.y),
                    F(b.mean.z),
                    F(b.stderr.x),
                    F(b.stderr.y),
                    F(b.stderr.z),
                    F(p.x),
                    F(p.y),
                    F(p.z),
                ]);
            }
            out.files.push(csv);
        }
        Kind::ConditionalTomography => {
            let cfg = sme_config(spec, spec.stream_seed(0))?;
            let target = traj::simulate_resolved(&cfg).map_err(|e| fail(e.into()))?.observed;
            let n = cfg.n_steps();
            let m = spec.count_or("times", 5).min(n);
            let times: Vec<f64> = (1..=m).map(|j| target.states[j * n / m].0).collect();
            let pts = traj::conditional_tomography_multi(&target, spec.num_or("eps", traj::DEFAULT_EPS), &times, spec.count_or("n_runs", 1), spec.stream_seed(1))
                .map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new(
                "tomography.csv",
                &["t", "x_target", "z_target", "x_tomo", "z_tomo", "x_stderr", "z_stderr", "n_matched"],
            );
            for p in &pts {
                csv.row(&[
                    F(p.t),
                    F(p.target.x),
                    F(p.target.z),
                    F(p.x_mean),
                    F(p.z_mean),
                    F(p.x_stderr),
                    F(p.z_stderr),
                    I(p.n_matched as u64),
                ]);
            }
            out.files.push(csv);
        }
        Kind::PostselectMlp => {
            let cfg = sme_config(spec, spec.stream_seed(0))?;
            let runs = sme::ensemble(&cfg, spec.count_or("n", 1), spec.stream_seed(0)).map_err(|e| fail(e.into()))?;
            let t_f = spec.num("t_f").unwrap_or(cfg.n_steps() as f64 * cfg.dt());
            let window = TargetWindow::xz(BlochVector::new(spec.req("x_f"), 0.0, spec.req("z_f")), spec.num_or("eps", traj::DEFAULT_EPS))
                .map_err(|e| invalid(kind, e))?;
            let sub = traj::postselect(&runs, &window, t_f).map_err(|e| fail(e.into()))?;
            let path = traj::most_likely_path(&sub, spec.count_or("bins", 40)).map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new("mlp.csv", &["t", "x", "z"]);
            for (t, x, z) in path {
                csv.row(&[F(t), F(x), F(z)]);
            }
            out.summary.insert("n_selected".into(), sub.len() as f64);
            out.files.push(csv);
        }
        Kind::PastState => {
            let cfg = sme_config(spec, spec.stream_seed(0))?;
            let tr = sme::simulate(&cfg).map_err(|e| fail(e.into()))?;
            let eff = traj::backward_effect(&tr.record, &cfg).map_err(|e| fail(e.into()))?;
            let povm = traj::sigma_z_projectors();
            let mut csv = Csv::new(
                "past_state.csv",
                &["t", "x", "y", "z", "E00", "E11", "E01_re", "E01_im", "P0_forward", "P0_past"],
            );
            for ((t, s), (_, e)) in tr.states.iter().zip(&eff) {
                let b = s.bloch();
                let m = e.matrix();
                let fwd = traj::forward_probability(s, &povm).map_err(|e| fail(e.into()))?;
                let past = traj::hindsight_probability(s, e, &povm).map_err(|e| fail(e.into()))?;
                csv.row(&[
                    F(*t),
                    F(b.x),
                    F(b.y),
                    F(b.z),
                    F(m[(0, 0)].re),
                    F(m[(1, 1)].re),
                    F(m[(0, 1)].re),
                    F(m[(0, 1)].im),
                    F(fwd[0]),
                    F(past[0]),
                ]);
            }
            out.files.push(csv);
        }
        Kind::Feedback => {
            let cfg = feedback_config(spec, spec.req("F"))?;
            let ens = feedback::run_feedback_ensemble(&cfg, spec.count_or("n", 1), spec.stream_seed(0)).map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new("feedback.csv", &["t", "mean_x", "mean_z"]);
            for ((t, x), z) in ens.t.iter().zip(&ens.mean_x).zip(&ens.mean_z) {
                csv.row(&[F(*t), F(*x), F(*z)]);
            }
            if let Ok(fit) = feedback::feedback_efficiency(&ens, cfg.default_window()) {
                out.summary.insert("D".into(), fit.d);
                out.summary.insert("D_stderr".into(), fit.d_stderr);
            }
            out.files.push(csv);
        }
        Kind::FeedbackSweep => {
            let cfg = feedback_config(spec, 0.0)?;
            let gains = match spec.params.get("gains") {
                Some(Value::Str(s)) => parse_list(s).expect("validated"),
                _ => feedback::DEFAULT_GAINS.to_vec(),
            };
            let pts = feedback::efficiency_sweep(&cfg, &gains, spec.count_or("n", 1000), spec.stream_seed(0)).map_err(|e| match e {
                FeedbackError::TooFewGains { .. } => invalid(kind, e),
                e => fail(e.into()),
            })?;
            let mut csv = Csv::new("sweep.csv", &["F", "D", "D_stderr"]);
            for p in &pts {
                csv.row(&[F(p.gain), F(p.d), F(p.d_stderr)]);
            }
            if let Some(best) = pts.iter().max_by(|a, b| a.d.total_cmp(&b.d)) {
                out.summary.insert("F_opt".into(), best.gain);
                out.summary.insert("D_opt".into(), best.d);
            }
            out.files.push(csv);
        }
        Kind::ParampTransfer => {
            let (lo, hi) = (spec.req("F_min"), spec.req("F_max"));
            if hi <= lo {
                return Err(invalid(kind, "F_max must exceed F_min"));
            }
            let p = duffing(spec, spec.req("omega_d"), lo)?;
            let drives = log_grid(lo, hi, spec.count_or("points", 50));
            let curve = paramp::transfer_function(&p, &drives).map_err(|e| match e {
                ParampError::AboveResonance => invalid(kind, e),
                e => fail(e.into()),
            })?;
            let mut csv = Csv::new("transfer.csv", &["F_d", "phase_deg"]);
            for (f, s) in curve {
                csv.row(&[F(f), F(s.phase.to_degrees())]);
            }
            out.files.push(csv);
        }
        Kind::ParampPhaseDiagram => {
            let (wlo, whi) = (spec.req("omega_d_min"), spec.req("omega_d_max"));
            let (lo, hi) = (spec.req("F_min"), spec.req("F_max"));
            if whi <= wlo || hi <= lo {
                return Err(invalid(kind, "grid maxima must exceed minima"));
            }
            duffing(spec, wlo, lo)?;
            let wds = lin_grid(wlo, whi, spec.count_or("omega_d_points", 20));
            let drives = log_grid(lo, hi, spec.count_or("F_points", 24));
            let pd = paramp::bistability_region(spec.req("omega0"), spec.req("Gamma"), &wds, &drives).map_err(|e| fail(e.into()))?;
            let mut csv = Csv::new("phase_diagram.csv", &["omega_d", "F_d_low", "F_d_high"]);
            for w in &pd.windows {
                csv.row(&[F(w.omega_d), F(w.f_low), F(w.f_high)]);
            }
            if let Some((wc, pc)) = pd.cusp {
                out.summary.insert("omega_c".into(), wc);
                out.summary.insert("P_c".into(), pc);
            }
            out.summary.insert("bistable_points".into(), pd.windows.len() as f64);
            out.files.push(csv);
        }
        Kind::ParampGain => {
            let fd = spec.req("F_d");
            let p = duffing(spec, spec.req("omega_d"), fd)?;
            let s = spec.num_or("signal_amp", fd / 1000.0);
            let n = spec.count_or("points", 1);
            let phase0 = spec.req("signal_phase");
            let mut csv = Csv::new("gain.csv", &["signal_phase_deg", "gain_dB"]);
            for j in 0..n {
                let ph = phase0 + j as f64 * PI / n as f64;
                let g = paramp::small_signal_gain(&p, s, ph).map_err(|e| match e {
                    ParampError::SignalTooLarge { .. } | ParampError::BistableBias { .. } | ParampError::Param(_) => invalid(kind, e),
                    e => fail(e.into()),
                })?;
                if j == 0 {
                    out.summary.insert("amplified_axis_deg".into(), g.amplified_axis.to_degrees());
                    out.summary.insert("max_gain_dB".into(), g.max_db);
                    out.summary.insert("min_gain_dB".into(), g.min_db);
                }
                csv.row(&[F(ph.to_degrees()), F(g.gain_db)]);
            }
            out.files.push(csv);
        }
    }
    Ok(out)
}
