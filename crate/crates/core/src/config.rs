//! Run configuration from a `key = value` file, `OPENADOPT_*` environment
//! variables and command-line flags. Flags win over the environment, which
//! wins over the file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use chrono::NaiveDate;

use crate::ingest::FetchPolicy;
use crate::series::FilterConfig;
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "OPENADOPT_";
pub const DEFAULT_BASE_URL: &str = "https://huggingface.co";

/// Keys understood in config files; the environment uses the upper-cased
/// key behind [`ENV_PREFIX`].
pub const KEYS: [&str; 10] = [
    "base_url",
    "store",
    "registry",
    "aliases",
    "max_parallel",
    "min_request_interval_ms",
    "retry_limit",
    "iqr_multiplier",
    "splice_date",
    "reference_date",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub base_url: String,
    pub store: PathBuf,
    pub registry: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub fetch: FetchPolicy,
    pub filter: FilterConfig,
    pub splice_date: Option<NaiveDate>,
    pub reference_date: Option<NaiveDate>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            base_url: DEFAULT_BASE_URL.to_string(),
            store: PathBuf::from("store"),
            registry: None,
            aliases: None,
            fetch: FetchPolicy::default(),
            filter: FilterConfig::default(),
            splice_date: None,
            reference_date: None,
        }
    }
}

/// Parses `key = value` lines. `#` starts a comment, `[section]` headers
/// are ignored, values may be double-quoted.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Usage(format!("config line {}: expected key = value", i + 1)));
        };
        let key = k.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Usage(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        out.insert(key, v.to_string());
    }
    Ok(out)
}

/// Reads every known key from the environment through `lookup`.
pub fn env_overrides(lookup: impl Fn(&str) -> Option<String>) -> BTreeMap<String, String> {
    KEYS.iter()
        .filter_map(|k| {
            let v = lookup(&format!("{ENV_PREFIX}{}", k.to_ascii_uppercase()))?;
            Some((k.to_string(), v))
        })
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Usage(format!("invalid value for {key}: {v:?}")))
}

fn date(key: &str, v: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(v, "%Y-%m-%d")
        .map_err(|_| Error::Usage(format!("invalid date for {key}: {v:?}")))
}

impl Config {
    /// Layers in increasing precedence; later maps override earlier ones.
    pub fn resolve(layers: &[&BTreeMap<String, String>]) -> Result<Config> {
        let mut merged: BTreeMap<&str, &str> = BTreeMap::new();
        for layer in layers {
            for (k, v) in layer.iter() {
                merged.insert(k, v);
            }
        }
        let mut c = Config::default();
        for (k, v) in merged {
            match k {
                "base_url" => c.base_url = v.to_string(),
                "store" => c.store = PathBuf::from(v),
                "registry" => c.registry = Some(PathBuf::from(v)),
                "aliases" => c.aliases = Some(PathBuf::from(v)),
                "max_parallel" => {
                    c.fetch.max_parallel = parse(k, v)?;
                    if c.fetch.max_parallel == 0 {
                        return Err(Error::Usage("max_parallel must be at least 1".into()));
                    }
                }
                "min_request_interval_ms" => {
                    c.fetch.min_request_interval = Duration::from_millis(parse(k, v)?)
                }
                "retry_limit" => c.fetch.retry_limit = parse(k, v)?,
                "iqr_multiplier" => {
                    c.filter.iqr_multiplier = parse(k, v)?;
                    c.filter.validate().map_err(|e| Error::Usage(e.to_string()))?;
                }
                "splice_date" => c.splice_date = Some(date(k, v)?),
                "reference_date" => c.reference_date = Some(date(k, v)?),
                other => return Err(Error::Usage(format!("unknown key {other:?}"))),
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_syntax() {
        let m = parse_config_text(
            "# comment\n[fetch]\nbase_url = \"http://x\"  # trailing\nmax_parallel=4\n\n",
        )
        .unwrap();
        assert_eq!(m["base_url"], "http://x");
        assert_eq!(m["max_parallel"], "4");
        assert!(parse_config_text("nonsense").is_err());
        assert!(parse_config_text("colour = red").is_err());
    }

    #[test]
    fn precedence() {
        let file = map(&[("store", "from-file"), ("base_url", "http://file"), ("max_parallel", "2")]);
        let env = env_overrides(|k| (k == "OPENADOPT_STORE").then(|| "from-env".to_string()));
        let flags = map(&[("base_url", "http://flag")]);
        let c = Config::resolve(&[&file, &env, &flags]).unwrap();
        assert_eq!(c.store, PathBuf::from("from-env"));
        assert_eq!(c.base_url, "http://flag");
        assert_eq!(c.fetch.max_parallel, 2);
    }

    #[test]
    fn bad_values() {
        assert!(Config::resolve(&[&map(&[("max_parallel", "0")])]).is_err());
        assert!(Config::resolve(&[&map(&[("iqr_multiplier", "-1")])]).is_err());
        assert!(Config::resolve(&[&map(&[("splice_date", "2025/01/01")])]).is_err());
        let err = Config::resolve(&[&map(&[("retry_limit", "x")])]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
