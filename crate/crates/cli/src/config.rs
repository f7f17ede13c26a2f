//! Run configuration: a line-based `key = value` file, overridden by flags.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use cpn_thermal::fokker_planck::FpOperator;
use cpn_thermal::{HermitianOperator, SdeParams, C64};

use crate::error::CliError;

/// Every key a config file may contain, in serialisation order.
pub const KEYS: &[&str] = &[
    "mode",
    "spectrum",
    "hamiltonian",
    "beta",
    "beta_grid",
    "kappa",
    "h",
    "dt",
    "steps",
    "t_max",
    "ensemble",
    "record_stride",
    "grid",
    "samples",
    "initial",
    "center",
    "width",
    "seed",
    "format",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Equilibrium,
    Fp,
    VerifyLiouville,
    Sample,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Equilibrium => "equilibrium",
            Mode::Fp => "fp",
            Mode::VerifyLiouville => "verify-liouville",
            Mode::Sample => "sample",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "simulate" => Mode::Simulate,
            "equilibrium" => Mode::Equilibrium,
            "fp" => Mode::Fp,
            "verify-liouville" => Mode::VerifyLiouville,
            "sample" => Mode::Sample,
            _ => return Err(format!("unknown mode `{s}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Hamiltonian {
    /// Diagonal entries.
    Spectrum(Vec<f64>),
    /// Full matrix, rows of complex entries.
    Matrix(Vec<Vec<C64>>),
}

impl Hamiltonian {
    pub fn operator(&self) -> Result<HermitianOperator, CliError> {
        match self {
            Hamiltonian::Spectrum(levels) => Ok(HermitianOperator::from_diagonal(levels)),
            Hamiltonian::Matrix(rows) => {
                HermitianOperator::from_rows(rows).map_err(|e| CliError::validation(format!("hamiltonian: {e}")))
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Hamiltonian::Spectrum(levels) => levels.len(),
            Hamiltonian::Matrix(rows) => rows.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub hamiltonian: Option<Hamiltonian>,
    pub beta: Option<f64>,
    pub beta_grid: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub h: Option<f64>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub t_max: Option<f64>,
    pub ensemble: Option<usize>,
    pub record_stride: Option<usize>,
    pub grid: Option<usize>,
    pub samples: Option<usize>,
    pub initial: Option<String>,
    pub center: Option<f64>,
    pub width: Option<f64>,
    pub seed: u64,
    pub format: Option<Format>,
    /// Where to write; not part of the embedded config.
    pub out: Option<PathBuf>,
}

/// Where a value came from, for error messages.
#[derive(Clone, Debug, PartialEq)]
pub enum Origin {
    Line(usize),
    Flag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

fn describe(origin: &Origin, key: &str) -> String {
    match origin {
        Origin::Line(n) => format!("line {n}: `{key}`"),
        Origin::Flag => format!("flag --{}", key.replace('_', "-")),
    }
}

/// Splits config text into entries. Blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find('#') {
            // A JSON matrix never contains '#', so this split is safe.
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("line {line}: expected `key = value`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::validation(format!("line {line}: unknown key `{key}`")));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            let first = match prev.origin {
                Origin::Line(n) => n,
                Origin::Flag => 0,
            };
            return Err(CliError::validation(format!(
                "line {line}: duplicate key `{key}` (first set on line {first})"
            )));
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            origin: Origin::Line(line),
        });
    }
    Ok(entries)
}

/// Applies flag overrides on top of file entries.
pub fn merge(mut file: Vec<Entry>, flags: Vec<(String, String)>) -> Vec<Entry> {
    for (key, value) in flags {
        file.retain(|e| e.key != key);
        file.push(Entry {
            key,
            value,
            origin: Origin::Flag,
        });
    }
    file
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| CliError::validation(format!("{}: cannot parse `{}`: {err}", describe(&e.origin, &e.key), e.value)))
}

fn parse_list(e: &Entry) -> Result<Vec<f64>, CliError> {
    e.value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|err| {
                CliError::validation(format!("{}: cannot parse `{}`: {err}", describe(&e.origin, &e.key), s.trim()))
            })
        })
        .collect()
}

fn parse_matrix(e: &Entry) -> Result<Vec<Vec<C64>>, CliError> {
    let bad = |msg: String| CliError::validation(format!("{}: {msg}", describe(&e.origin, &e.key)));
    let value: serde_json::Value = serde_json::from_str(&e.value).map_err(|err| bad(format!("invalid JSON: {err}")))?;
    let rows = value.as_array().ok_or_else(|| bad("expected an array of rows".into()))?;
    rows.iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| bad("expected an array of rows".into()))?
                .iter()
                .map(|x| parse_complex(x).ok_or_else(|| bad("entries must be numbers or [re, im] pairs".into())))
                .collect()
        })
        .collect()
}

pub(crate) fn parse_complex(x: &serde_json::Value) -> Option<C64> {
    if let Some(re) = x.as_f64() {
        return Some(C64::new(re, 0.0));
    }
    match x.as_array()?.as_slice() {
        [re, im] => Some(C64::new(re.as_f64()?, im.as_f64()?)),
        _ => None,
    }
}

impl RunConfig {
    /// Builds a config from entries; every error names the offending key.
    pub fn from_entries(entries: &[Entry]) -> Result<Self, CliError> {
        let get = |k: &str| entries.iter().find(|e| e.key == k);
        let mode_entry = get("mode").ok_or_else(|| CliError::validation("missing required key `mode`"))?;
        let mode: Mode = parse_value(mode_entry)?;
        let f64_of = |k: &str| get(k).map(parse_value::<f64>).transpose();
        let usize_of = |k: &str| get(k).map(parse_value::<usize>).transpose();
        let hamiltonian = match (get("spectrum"), get("hamiltonian")) {
            (Some(_), Some(_)) => {
                return Err(CliError::validation("`spectrum` and `hamiltonian` are mutually exclusive"));
            }
            (Some(e), None) => Some(Hamiltonian::Spectrum(parse_list(e)?)),
            (None, Some(e)) => Some(Hamiltonian::Matrix(parse_matrix(e)?)),
            (None, None) => None,
        };
        Ok(Self {
            mode,
            hamiltonian,
            beta: f64_of("beta")?,
            beta_grid: get("beta_grid").map(parse_list).transpose()?,
            kappa: f64_of("kappa")?,
            h: f64_of("h")?,
            dt: f64_of("dt")?,
            steps: usize_of("steps")?,
            t_max: f64_of("t_max")?,
            ensemble: usize_of("ensemble")?,
            record_stride: usize_of("record_stride")?,
            grid: usize_of("grid")?,
            samples: usize_of("samples")?,
            initial: get("initial").map(|e| e.value.clone()),
            center: f64_of("center")?,
            width: f64_of("width")?,
            seed: get("seed").map(parse_value::<u64>).transpose()?.unwrap_or(0),
            format: get("format").map(parse_value::<Format>).transpose()?,
            out: None,
        })
    }

    /// Parses file text and flag overrides, then validates.
    pub fn parse(text: &str, flags: Vec<(String, String)>) -> Result<Self, CliError> {
        let config = Self::from_entries(&merge(parse_lines(text)?, flags))?;
        config.validate()?;
        Ok(config)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(match self.mode {
            Mode::Simulate | Mode::Equilibrium | Mode::Fp => Format::Csv,
            Mode::VerifyLiouville | Mode::Sample => Format::Json,
        })
    }

    fn require<T: Clone>(&self, value: &Option<T>, key: &str) -> Result<T, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::validation(format!("missing required key `{key}` for mode {}", self.mode.name())))
    }

    pub fn hamiltonian(&self) -> Result<HermitianOperator, CliError> {
        self.require(&self.hamiltonian, "spectrum")?.operator()
    }

    pub fn beta(&self) -> Result<f64, CliError> {
        self.require(&self.beta, "beta")
    }

    pub fn kappa(&self) -> Result<f64, CliError> {
        self.require(&self.kappa, "kappa")
    }

    pub fn sde_params(&self) -> Result<SdeParams, CliError> {
        Ok(SdeParams {
            beta: self.beta()?,
            kappa: self.kappa()?,
            dt: self.require(&self.dt, "dt")?,
            steps: self.require(&self.steps, "steps")?,
            ensemble_size: self.require(&self.ensemble, "ensemble")?,
            master_seed: self.seed,
            record_stride: self.record_stride.unwrap_or(1),
        })
    }

    /// Mode-specific presence checks and the engines' numeric guards.
    pub fn validate(&self) -> Result<(), CliError> {
        let non_negative = |v: Option<f64>, key: &str| -> Result<(), CliError> {
            match v {
                Some(x) if !(x.is_finite() && x >= 0.0) => {
                    Err(CliError::validation(format!("`{key}` must be finite and nonnegative, got {x}")))
                }
                _ => Ok(()),
            }
        };
        non_negative(self.beta, "beta")?;
        non_negative(self.kappa, "kappa")?;
        if let Some(h) = &self.hamiltonian {
            if h.dim() < 2 {
                return Err(CliError::validation("`spectrum` needs at least two levels"));
            }
            h.operator()?;
        }
        match self.mode {
            Mode::Simulate | Mode::VerifyLiouville => {
                let h = self.hamiltonian()?;
                let params = self.sde_params()?;
                params.validate(h.dim()).map_err(CliError::from_core)?;
                if params.ensemble_size < 2 {
                    return Err(CliError::validation("`ensemble` must be at least 2"));
                }
                if self.mode == Mode::VerifyLiouville && params.steps / params.record_stride < 2 {
                    return Err(CliError::validation("`steps` / `record_stride` must be at least 2 (three snapshots)"));
                }
                crate::run::initial_law(self, h.dim())?;
            }
            Mode::Equilibrium => {
                self.hamiltonian()?;
                let grid = self.beta_values()?;
                if grid.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                    return Err(CliError::validation("`beta_grid` entries must be positive"));
                }
            }
            Mode::Fp => {
                let kappa = self.kappa()?;
                if !(kappa > 0.0) {
                    return Err(CliError::validation("`kappa` must be positive for mode fp"));
                }
                let cells = self.require(&self.grid, "grid")?;
                let op = FpOperator::new(cells, self.h.unwrap_or(1.0), self.beta()?, kappa).map_err(CliError::from_core)?;
                if let Some(dt) = self.dt {
                    if !(dt > 0.0) || dt > op.max_dt() {
                        return Err(CliError::from_core(cpn_thermal::Error::Guard {
                            name: "dt",
                            value: dt,
                            bound: op.max_dt(),
                        }));
                    }
                }
                self.fp_t_max(op.max_dt())?;
                crate::run::fp_initial(self, cells)?;
            }
            Mode::Sample => {
                self.hamiltonian()?;
                self.beta()?;
                if self.samples.is_some_and(|s| s < 2) {
                    return Err(CliError::validation("`samples` must be at least 2"));
                }
            }
        }
        if self.format() == Format::Csv && matches!(self.mode, Mode::VerifyLiouville | Mode::Sample) {
            return Err(CliError::validation(format!("`format` = csv is not available for mode {}", self.mode.name())));
        }
        Ok(())
    }

    pub fn beta_values(&self) -> Result<Vec<f64>, CliError> {
        match (&self.beta_grid, self.beta) {
            (Some(grid), _) if !grid.is_empty() => Ok(grid.clone()),
            (_, Some(b)) => Ok(vec![b]),
            _ => Err(CliError::validation("missing required key `beta_grid` (or `beta`) for mode equilibrium")),
        }
    }

    /// Final time for the Fokker–Planck run: `t_max`, else `steps · dt`.
    pub fn fp_t_max(&self, max_dt: f64) -> Result<f64, CliError> {
        let t = match (self.t_max, self.steps) {
            (Some(t), _) => t,
            (None, Some(steps)) => steps as f64 * self.dt.unwrap_or(0.9 * max_dt),
            (None, None) => return Err(CliError::validation("missing required key `t_max` (or `steps`) for mode fp")),
        };
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::validation("`t_max` must be positive"));
        }
        Ok(t)
    }

    /// Canonical `key = value` lines; reparsing them gives back this config
    /// (without `out`).
    pub fn to_lines(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        for &key in KEYS {
            let value = match key {
                "mode" => Some(self.mode.name().to_string()),
                "spectrum" => match &self.hamiltonian {
                    Some(Hamiltonian::Spectrum(levels)) => Some(list(levels)),
                    _ => None,
                },
                "hamiltonian" => match &self.hamiltonian {
                    Some(Hamiltonian::Matrix(rows)) => {
                        let json: Vec<Vec<[f64; 2]>> =
                            rows.iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect();
                        Some(serde_json::to_string(&json).expect("matrix serialises"))
                    }
                    _ => None,
                },
                "beta" => self.beta.map(|x| x.to_string()),
                "beta_grid" => self.beta_grid.as_deref().map(list),
                "kappa" => self.kappa.map(|x| x.to_string()),
                "h" => self.h.map(|x| x.to_string()),
                "dt" => self.dt.map(|x| x.to_string()),
                "steps" => self.steps.map(|x| x.to_string()),
                "t_max" => self.t_max.map(|x| x.to_string()),
                "ensemble" => self.ensemble.map(|x| x.to_string()),
                "record_stride" => self.record_stride.map(|x| x.to_string()),
                "grid" => self.grid.map(|x| x.to_string()),
                "samples" => self.samples.map(|x| x.to_string()),
                "initial" => self.initial.clone(),
                "center" => self.center.map(|x| x.to_string()),
                "width" => self.width.map(|x| x.to_string()),
                "seed" => Some(self.seed.to_string()),
                "format" => self.format.map(|f| f.name().to_string()),
                _ => unreachable!("key list and serialiser out of sync"),
            };
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_lines() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
