//! Flat `key = value` run configuration.
//!
//! A config file holds one `key = value` pair per line, `#` starts a
//! comment. Flag overrides are applied after the file, in order. Every key
//! has a default, so an empty configuration is valid.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("key `{0}`: must be positive")]
    NotPositive(&'static str),
    #[error("key `{0}`: grid is empty")]
    EmptyGrid(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// Every parameter a subcommand may read.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Group file; the reference group when absent.
    pub group: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub q: Vec<u64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Frequencies of the contraction audit.
    pub audit_b: Vec<f64>,
    /// Real points of the pressure curve.
    pub s: Vec<f64>,
    pub order: usize,
    /// Orders of the dimension convergence table.
    pub orders: Vec<usize>,
    /// Length thresholds for counting.
    pub t: Vec<f64>,
    /// Flow times for correlations.
    pub times: Vec<f64>,
    /// `re_min, re_max, im_min, im_max`.
    pub window: [f64; 4],
    pub eps_test: f64,
    pub b_max: f64,
    pub seed: u64,
    pub samples: usize,
    pub trials: usize,
    pub iters: usize,
    pub k_max: usize,
    /// Laplace variable `re, im`.
    pub xi: [f64; 2],
    /// Base points `x, y` in the upper half plane.
    pub z: [f64; 2],
    pub w: [f64; 2],
    /// Item cap for enumerations.
    pub cap: usize,
    pub cache: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            group: None,
            out: None,
            format: Format::Csv,
            q: vec![2, 3],
            a: vec![0.0],
            b: vec![0.0],
            audit_b: vec![2.0, 5.0, 10.0],
            s: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            order: 12,
            orders: vec![24, 28, 32],
            t: (1..=8).map(f64::from).collect(),
            times: (0..=20).map(f64::from).collect(),
            window: [0.12, 0.27, -5.0, 5.0],
            eps_test: 0.05,
            b_max: 5.0,
            seed: 1,
            samples: 20_000,
            trials: 100,
            iters: 60,
            k_max: 40,
            xi: [0.3, -0.7],
            z: [0.0, 1.0],
            w: [0.0, 1.0],
            cap: 1 << 22,
            cache: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn fixed<const N: usize>(key: &str, value: &str) -> Result<[f64; N], ConfigError> {
    list::<f64>(key, value)?.try_into().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "group" => self.group = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "format" => self.format = parse(key, v)?,
            "q" => self.q = list(key, v)?,
            "a" => self.a = list(key, v)?,
            "b" => self.b = list(key, v)?,
            "audit_b" => self.audit_b = list(key, v)?,
            "s" => self.s = list(key, v)?,
            "order" => self.order = parse(key, v)?,
            "orders" => self.orders = list(key, v)?,
            "t" => self.t = list(key, v)?,
            "times" => self.times = list(key, v)?,
            "window" => self.window = fixed(key, v)?,
            "eps_test" => self.eps_test = parse(key, v)?,
            "b_max" => self.b_max = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "iters" => self.iters = parse(key, v)?,
            "k_max" => self.k_max = parse(key, v)?,
            "xi" => self.xi = fixed(key, v)?,
            "z" => self.z = fixed(key, v)?,
            "w" => self.w = fixed(key, v)?,
            "cap" => self.cap = parse(key, v)?,
            "cache" => self.cache = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a config file's contents on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.merge_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, bool); 8] = [
            ("order", self.order > 0),
            ("samples", self.samples > 0),
            ("trials", self.trials > 0),
            ("iters", self.iters > 0),
            ("k_max", self.k_max > 0),
            ("cap", self.cap > 0),
            ("b_max", self.b_max > 0.0),
            ("eps_test", self.eps_test > 0.0),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(ConfigError::NotPositive(k));
        }
        if self.q.contains(&0) {
            return Err(ConfigError::NotPositive("q"));
        }
        if self.orders.contains(&0) {
            return Err(ConfigError::NotPositive("orders"));
        }
        let grids: [(&'static str, bool); 8] = [
            ("q", self.q.is_empty()),
            ("a", self.a.is_empty()),
            ("b", self.b.is_empty()),
            ("audit_b", self.audit_b.is_empty()),
            ("s", self.s.is_empty()),
            ("orders", self.orders.is_empty()),
            ("t", self.t.is_empty()),
            ("times", self.times.is_empty()),
        ];
        if let Some((k, _)) = grids.iter().find(|(_, empty)| *empty) {
            return Err(ConfigError::EmptyGrid(k));
        }
        Ok(())
    }

    /// Canonical `key=value` listing of the parameters that affect results.
    /// Output location, format and the cache switch are left out.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("a", join(&self.a));
        put("audit_b", join(&self.audit_b));
        put("b", join(&self.b));
        put("b_max", self.b_max.to_string());
        put("cap", self.cap.to_string());
        put("eps_test", self.eps_test.to_string());
        put("iters", self.iters.to_string());
        put("k_max", self.k_max.to_string());
        put("order", self.order.to_string());
        put("orders", join(&self.orders));
        put("q", join(&self.q));
        put("s", join(&self.s));
        put("samples", self.samples.to_string());
        put("seed", self.seed.to_string());
        put("t", join(&self.t));
        put("times", join(&self.times));
        put("trials", self.trials.to_string());
        put("w", join(&self.w));
        put("window", join(&self.window));
        put("xi", join(&self.xi));
        put("z", join(&self.z));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(RunConfig::default().validate().is_ok());
        assert_eq!(RunConfig::parse_text("").unwrap(), RunConfig::default());
    }

    #[test]
    fn parses_lists_and_comments() {
        let c = RunConfig::parse_text("# levels\nq = 2, 3,7\nwindow=0,1,-2,2\nformat = json\n").unwrap();
        assert_eq!(c.q, vec![2, 3, 7]);
        assert_eq!(c.window, [0.0, 1.0, -2.0, 2.0]);
        assert_eq!(c.format, Format::Json);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(RunConfig::parse_text("colour = red"), Err(ConfigError::UnknownKey("colour".into())));
        assert_eq!(RunConfig::parse_text("q 2"), Err(ConfigError::Syntax(1)));
        assert!(matches!(RunConfig::parse_text("order = -1"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse_text("window = 1,2"), Err(ConfigError::BadValue { .. })));
        assert_eq!(RunConfig::parse_text("samples = 0"), Err(ConfigError::NotPositive("samples")));
        assert_eq!(RunConfig::parse_text("t ="), Err(ConfigError::EmptyGrid("t")));
    }

    #[test]
    fn canonical_ignores_output_settings() {
        let mut a = RunConfig::default();
        let mut b = RunConfig::default();
        b.set("out", "/tmp/x").unwrap();
        b.set("format", "json").unwrap();
        assert_eq!(a.canonical(), b.canonical());
        a.set("seed", "9").unwrap();
        assert_ne!(a.canonical(), b.canonical());
    }
}
