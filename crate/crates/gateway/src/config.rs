//! Node configuration: a flat `key = value` file in the data directory.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use medalchain_core::ledger::MAX_DIFFICULTY;
use medalchain_core::node::NodeParams;
use medalchain_core::rsa_blind::{MIN_TEST_BITS, SERVICE_BITS};
use medalchain_core::vote::{Threshold, DEFAULT_QUORUM, DEFAULT_THRESHOLD};

pub const CONFIG_FILE: &str = "medalchain.conf";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8742";
pub const DEFAULT_DIFFICULTY: u32 = 12;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value for {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub data_dir: PathBuf,
    pub listen: SocketAddr,
    pub difficulty: u32,
    pub quorum: u64,
    pub threshold: Threshold,
    /// Modulus size for registrar keys generated when rounds open.
    pub registrar_bits: u64,
    pub authority_id: String,
    /// Authority signing key, relative to the data directory unless absolute.
    pub authority_key: PathBuf,
}

impl NodeConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        NodeConfig {
            data_dir: data_dir.into(),
            listen: DEFAULT_LISTEN.parse().expect("default listen address parses"),
            difficulty: DEFAULT_DIFFICULTY,
            quorum: DEFAULT_QUORUM,
            threshold: DEFAULT_THRESHOLD,
            registrar_bits: SERVICE_BITS,
            authority_id: "authority".into(),
            authority_key: PathBuf::from("authority.key"),
        }
    }

    pub fn params(&self) -> NodeParams {
        NodeParams {
            difficulty: self.difficulty,
            min_registrar_bits: self.registrar_bits,
            quorum: self.quorum,
            threshold: self.threshold,
        }
    }

    pub fn authority_key_path(&self) -> PathBuf {
        self.data_dir.join(&self.authority_key)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.difficulty > MAX_DIFFICULTY {
            return Err(invalid("difficulty", format!("must be within [0, {MAX_DIFFICULTY}]")));
        }
        if self.quorum < 1 {
            return Err(invalid("quorum", "must be at least 1"));
        }
        if self.registrar_bits < MIN_TEST_BITS {
            return Err(invalid("registrar_bits", format!("must be at least {MIN_TEST_BITS}")));
        }
        if self.authority_id.trim().is_empty() {
            return Err(invalid("authority_id", "must not be empty"));
        }
        Ok(())
    }

    /// Reads `<data_dir>/medalchain.conf`; keys not present keep their defaults.
    pub fn load(data_dir: &Path) -> Result<Self, ConfigError> {
        let path = data_dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?;
        Self::parse(data_dir, &text)
    }

    pub fn parse(data_dir: &Path, text: &str) -> Result<Self, ConfigError> {
        let mut config = NodeConfig::new(data_dir);
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(syntax(format!("duplicate key {key:?}")));
            }
            seen.push(key.to_string());
            match key {
                "listen" => config.listen = value.parse().map_err(|_| invalid("listen", format!("{value:?} is not host:port")))?,
                "difficulty" => config.difficulty = number("difficulty", value)?,
                "quorum" => config.quorum = number("quorum", value)?,
                "threshold" => config.threshold = parse_threshold(value).map_err(|m| invalid("threshold", m))?,
                "registrar_bits" => config.registrar_bits = number("registrar_bits", value)?,
                "authority_id" => config.authority_id = value.to_string(),
                "authority_key" => config.authority_key = PathBuf::from(value),
                other => return Err(syntax(format!("unknown key {other:?}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# medalchain node configuration\n");
        let _ = writeln!(out, "listen = {}", self.listen);
        let _ = writeln!(out, "difficulty = {}", self.difficulty);
        let _ = writeln!(out, "quorum = {}", self.quorum);
        let _ = writeln!(out, "threshold = {}/{}", self.threshold.num, self.threshold.den);
        let _ = writeln!(out, "registrar_bits = {}", self.registrar_bits);
        let _ = writeln!(out, "authority_id = {}", self.authority_id);
        let _ = writeln!(out, "authority_key = {}", self.authority_key.display());
        out
    }
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, message: message.into() }
}

fn number<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| invalid(key, format!("{value:?} is not a non-negative integer")))
}

/// Accepts `num/den` or a decimal such as `0.6`.
pub fn parse_threshold(value: &str) -> Result<Threshold, String> {
    let (num, den) = match value.split_once('/') {
        Some((n, d)) => (
            n.trim().parse::<u64>().map_err(|_| format!("bad numerator in {value:?}"))?,
            d.trim().parse::<u64>().map_err(|_| format!("bad denominator in {value:?}"))?,
        ),
        None => {
            let (whole, frac) = value.split_once('.').unwrap_or((value, ""));
            if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("{value:?} is not a fraction"));
            }
            let den = 10u64.pow(frac.len() as u32);
            let whole: u64 = whole.parse().map_err(|_| format!("{value:?} is not a fraction"))?;
            let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| format!("{value:?} is not a fraction"))? };
            let num = whole * den + frac;
            let g = gcd(num, den).max(1);
            (num / g, den / g)
        }
    };
    Threshold::new(num, den).map_err(|e| e.to_string())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}
