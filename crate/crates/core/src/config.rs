//! Layered run configuration: built-in defaults, an optional sectioned
//! `key = value` file, `GRAVDEC_<SECTION>_<KEY>` environment variables and
//! command-line flags, in increasing precedence.
//!
//! File grammar:
//!
//! ```text
//! # comment
//! [physical]
//! dx = 1e-9   # trailing comments are allowed
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::decoherence::presets;
use crate::units::Constants;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] {key} = '{value}': {msg}")]
    BadValue { section: String, key: String, value: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    Preset,
    File,
    Env,
    Flag,
}

pub const ENV_PREFIX: &str = "GRAVDEC";

pub const PRESET_PAPER_ELECTRON: &str = "paper-electron";

/// (section, key, default). An empty default means "derived at use".
pub fn schema() -> Vec<(&'static str, &'static str, String)> {
    let c = Constants::CODATA_2018;
    let s = |v: &str| v.to_string();
    let e = |v: f64| format!("{v:e}");
    vec![
        ("run", "seed", s("1")),
        ("run", "threads", s("0")),
        ("run", "rel_tol", e(crate::numerics::DEFAULT_REL_TOL)),
        ("physical", "preset", s("none")),
        ("physical", "m_f", e(c.electron_mass())),
        ("physical", "sigma0", e(presets::PAPER_ELECTRON_SIGMA0)),
        ("physical", "dx", e(presets::PAPER_ELECTRON_DX)),
        ("physical", "volume", e(presets::PAPER_ELECTRON_VOLUME)),
        ("spectrum", "model", s("exponential")),
        ("spectrum", "i0", e(presets::PAPER_ELECTRON_I0_V / presets::PAPER_ELECTRON_VOLUME)),
        ("spectrum", "p_c", e(1.0 / presets::PAPER_ELECTRON_SIGMA0)),
        ("spectrum", "pc_sigma", s("")),
        ("spectrum", "table", s("")),
        ("kernel", "normalization", s("normalized")),
        ("rate", "method", s("auto")),
        ("rate", "tau0_s", s("")),
        ("sweep", "m_min", e(1e-31)),
        ("sweep", "m_max", e(1e-6)),
        ("sweep", "m_points", s("26")),
        ("sweep", "n_min", e(1.0)),
        ("sweep", "n_max", e(1e18)),
        ("sweep", "n_points", s("19")),
        ("sweep", "horizon_s", e(1.0)),
        ("evolve", "gamma_hz", s("")),
        ("evolve", "t_end_s", s("")),
        ("evolve", "n_points", s("101")),
        ("evolve", "rho11", e(0.5)),
        ("evolve", "re_rho12", e(0.5)),
        ("evolve", "im_rho12", e(0.0)),
        ("evolve", "integrator", s("analytic")),
        ("evolve", "step_s", s("")),
        ("csl", "preset", s("grw")),
        ("csl", "lambda", s("")),
        ("csl", "r_c", s("")),
        ("csl", "m0", s("")),
        ("csl", "mass", s("")),
        ("csl", "separation", s("")),
        ("csl", "n_traj", s("1000")),
        ("csl", "t_end_s", s("")),
        ("csl", "dt_s", s("")),
        ("csl", "records", s("50")),
        ("csl", "max_step_drift", e(1e-3)),
        ("verify", "n_theta", s("64")),
        ("verify", "n_phi", s("64")),
        ("verify", "n_directions", s("1000")),
        ("regimes", "horizon_s", e(1.0)),
    ]
}

/// Values filled in by `[physical] preset = paper-electron` for keys that
/// were not set explicitly.
fn preset_values(name: &str) -> Result<Vec<(&'static str, &'static str, String)>, ConfigError> {
    match name {
        "none" => Ok(Vec::new()),
        PRESET_PAPER_ELECTRON => {
            let p = presets::paper_electron();
            let (i0, p_c) = match p.spectrum {
                crate::spectrum::GravitonSpectrum::Exponential { i0, p_c } => (i0, p_c),
                _ => unreachable!("preset spectrum is exponential"),
            };
            Ok(vec![
                ("physical", "m_f", format!("{:e}", p.params.m_f)),
                ("physical", "sigma0", format!("{:e}", p.params.sigma0)),
                ("physical", "dx", format!("{:e}", p.params.dx)),
                ("physical", "volume", format!("{:e}", p.params.volume)),
                ("spectrum", "model", "exponential".into()),
                ("spectrum", "i0", format!("{i0:e}")),
                ("spectrum", "p_c", format!("{p_c:e}")),
                ("kernel", "normalization", "normalized".into()),
            ])
        }
        other => Err(ConfigError::BadValue {
            section: "physical".into(),
            key: "preset".into(),
            value: other.into(),
            msg: format!("unknown preset (known: none, {PRESET_PAPER_ELECTRON})"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<(String, String), (String, Source)>,
}

impl Default for Config {
    fn default() -> Self {
        let values = schema()
            .into_iter()
            .map(|(s, k, v)| ((s.to_string(), k.to_string()), (v, Source::Default)))
            .collect();
        Self { values }
    }
}

impl Config {
    /// Resolves all layers. `env` looks up an environment variable by name.
    pub fn resolve(
        file_text: Option<&str>,
        env: &dyn Fn(&str) -> Option<String>,
        flags: &[(&str, &str, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(text) = file_text {
            for (s, k, v) in parse_file(text)? {
                cfg.set(&s, &k, v, Source::File)?;
            }
        }
        let keys: Vec<(String, String)> = cfg.values.keys().cloned().collect();
        for (s, k) in keys {
            if let Some(v) = env(&env_var_name(&s, &k)) {
                cfg.set(&s, &k, v, Source::Env)?;
            }
        }
        for (s, k, v) in flags {
            cfg.set(s, k, v.clone(), Source::Flag)?;
        }
        let preset = cfg.get("physical", "preset").to_string();
        for (s, k, v) in preset_values(&preset)? {
            let entry = cfg.values.get_mut(&(s.to_string(), k.to_string())).expect("schema key");
            if entry.1 == Source::Default {
                *entry = (v, Source::Preset);
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: String, source: Source) -> Result<(), ConfigError> {
        match self.values.get_mut(&(section.to_string(), key.to_string())) {
            Some(slot) => {
                *slot = (value.trim().to_string(), source);
                Ok(())
            }
            None => Err(ConfigError::UnknownKey { section: section.into(), key: key.into() }),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        &self.values.get(&(section.to_string(), key.to_string())).unwrap_or_else(|| panic!("schema key [{section}] {key}")).0
    }

    pub fn source(&self, section: &str, key: &str) -> Source {
        self.values[&(section.to_string(), key.to_string())].1
    }

    pub fn is_set(&self, section: &str, key: &str) -> bool {
        !self.get(section, key).is_empty()
    }

    fn bad(&self, section: &str, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            section: section.into(),
            key: key.into(),
            value: self.get(section, key).into(),
            msg: msg.into(),
        }
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let v = self.get(section, key);
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.bad(section, key, "expected a finite number")),
        }
    }

    pub fn opt_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        if self.is_set(section, key) {
            self.f64(section, key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize, ConfigError> {
        self.get(section, key).parse().map_err(|_| self.bad(section, key, "expected a non-negative integer"))
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64, ConfigError> {
        self.get(section, key).parse().map_err(|_| self.bad(section, key, "expected a non-negative integer"))
    }

    pub fn choice<'a>(&self, section: &str, key: &str, options: &[&'a str]) -> Result<&'a str, ConfigError> {
        let v = self.get(section, key);
        options
            .iter()
            .find(|o| **o == v)
            .copied()
            .ok_or_else(|| self.bad(section, key, format!("expected one of {}", options.join(", "))))
    }

    /// Nested map of every resolved value, for output metadata.
    pub fn echo(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for ((s, k), (v, _)) in &self.values {
            out.entry(s.clone()).or_default().insert(k.clone(), v.clone());
        }
        out
    }

    /// Renders the resolved values in the file grammar. Feeding the text
    /// back through [`Config::resolve`] reproduces this configuration.
    pub fn to_file_text(&self) -> String {
        let mut text = String::new();
        for (i, (section, keys)) in self.echo().into_iter().enumerate() {
            if i > 0 {
                text.push('\n');
            }
            let _ = writeln!(text, "[{section}]");
            for (k, v) in keys {
                let _ = writeln!(text, "{k} = {v}");
            }
        }
        text
    }
}

pub fn env_var_name(section: &str, key: &str) -> String {
    format!("{ENV_PREFIX}_{}_{}", section.to_uppercase(), key.to_uppercase())
}

/// Parses the sectioned file grammar into (section, key, value) triples.
pub fn parse_file(text: &str) -> Result<Vec<(String, String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, msg: "unterminated section header".into() })?
                .trim();
            if name.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "empty section name".into() });
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected key = value, got '{content}'") })?;
        let s = section
            .clone()
            .ok_or_else(|| ConfigError::Syntax { line, msg: "key before any [section]".into() })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line, msg: "empty key".into() });
        }
        out.push((s, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
