//! Run settings resolved from flags, `GCR_*` environment variables and a
//! `key = value` file, in that order of precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::CliError;

/// Every key accepted in a config file. The environment variable for a key is
/// `GCR_` plus the key in upper case.
pub const KEYS: &[&str] = &[
    "kg",
    "qa",
    "vocab",
    "trie",
    "hops",
    "beam",
    "scorer",
    "chat",
    "cache_capacity",
    "jobs",
    "out",
    "seed",
    "max_answer_tokens",
    "timeout",
    "retries",
    "chat_endpoint",
    "chat_model",
    "chat_key",
];

pub fn env_name(key: &str) -> String {
    format!("GCR_{}", key.to_ascii_uppercase())
}

fn canonical(key: &str) -> String {
    key.trim().replace('-', "_").to_ascii_lowercase()
}

/// Parses `key = value` lines. `#` starts a comment line; keys may use `-` or `_`.
pub fn parse_file(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected key = value",
                origin.display(),
                i + 1
            )));
        };
        let k = canonical(k);
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Usage(format!(
                "{}:{}: unknown key `{k}`",
                origin.display(),
                i + 1
            )));
        }
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        out.insert(k, v.to_owned());
    }
    Ok(out)
}

/// Layered lookup of raw string settings.
pub struct Layers<'a> {
    pub flags: BTreeMap<&'static str, String>,
    pub env: &'a dyn Fn(&str) -> Option<String>,
    pub file: BTreeMap<String, String>,
}

impl Layers<'_> {
    pub fn get(&self, key: &str) -> Option<String> {
        self.flags
            .get(key)
            .cloned()
            .or_else(|| (self.env)(&env_name(key)).filter(|v| !v.is_empty()))
            .or_else(|| self.file.get(key).cloned())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid value `{v}` for {key}"))),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kg: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub trie: Option<PathBuf>,
    pub hops: u32,
    pub beam: usize,
    pub scorer: String,
    pub chat: Option<String>,
    pub cache_capacity: usize,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub max_answer_tokens: usize,
    pub timeout: Duration,
    pub retries: u32,
    pub chat_endpoint: Option<String>,
    pub chat_model: String,
    pub chat_key: Option<String>,
}

impl RunConfig {
    pub fn resolve(layers: &Layers) -> Result<Self, CliError> {
        let path = |k: &str| layers.get(k).map(PathBuf::from);
        let cfg = Self {
            kg: path("kg"),
            qa: path("qa"),
            vocab: path("vocab"),
            trie: path("trie"),
            hops: layers.parse("hops", 2)?,
            beam: layers.parse("beam", 10)?,
            scorer: layers.get("scorer").unwrap_or_else(|| "uniform".into()),
            chat: layers.get("chat"),
            cache_capacity: layers.parse("cache_capacity", gcr_core::trie::DEFAULT_CAPACITY)?,
            jobs: layers.parse("jobs", 1)?,
            out: path("out"),
            seed: layers.parse("seed", 0)?,
            max_answer_tokens: layers.parse("max_answer_tokens", 64)?,
            timeout: Duration::from_secs_f64(layers.parse("timeout", 60.0)?),
            retries: layers.parse("retries", 3)?,
            chat_endpoint: layers.get("chat_endpoint"),
            chat_model: layers.get("chat_model").unwrap_or_else(|| "default".into()),
            chat_key: layers.get("chat_key"),
        };
        if cfg.hops == 0 {
            return Err(CliError::Usage("hops must be at least 1".into()));
        }
        if cfg.beam == 0 {
            return Err(CliError::Usage("beam must be at least 1".into()));
        }
        if cfg.cache_capacity == 0 {
            return Err(CliError::Usage("cache capacity must be at least 1".into()));
        }
        if cfg.jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults() {
        let layers = Layers {
            flags: BTreeMap::new(),
            env: &no_env,
            file: BTreeMap::new(),
        };
        let c = RunConfig::resolve(&layers).unwrap();
        assert_eq!((c.hops, c.beam, c.jobs), (2, 10, 1));
        assert_eq!(c.scorer, "uniform");
        assert_eq!(c.max_answer_tokens, 64);
    }

    #[test]
    fn precedence_flag_env_file() {
        let file = parse_file("# comment\nhops = 3\nbeam=4\ncache-capacity = 7\n", Path::new("f")).unwrap();
        let env = |k: &str| (k == "GCR_BEAM" || k == "GCR_HOPS").then(|| "5".to_string());
        let mut flags = BTreeMap::new();
        flags.insert("hops", "1".to_string());
        let c = RunConfig::resolve(&Layers {
            flags,
            env: &env,
            file,
        })
        .unwrap();
        assert_eq!(c.hops, 1, "flag beats env and file");
        assert_eq!(c.beam, 5, "env beats file");
        assert_eq!(c.cache_capacity, 7, "file beats default");
    }

    #[test]
    fn file_errors() {
        assert!(matches!(parse_file("nonsense\n", Path::new("f")), Err(CliError::Usage(_))));
        assert!(matches!(parse_file("colour = red\n", Path::new("f")), Err(CliError::Usage(_))));
        let m = parse_file("kg = \"my graph.tsv\"\n", Path::new("f")).unwrap();
        assert_eq!(m["kg"], "my graph.tsv");
    }

    #[test]
    fn invalid_values() {
        let mut flags = BTreeMap::new();
        flags.insert("beam", "zero".to_string());
        let r = RunConfig::resolve(&Layers {
            flags,
            env: &no_env,
            file: BTreeMap::new(),
        });
        assert!(matches!(r, Err(CliError::Usage(_))));
        let mut flags = BTreeMap::new();
        flags.insert("hops", "0".to_string());
        let r = RunConfig::resolve(&Layers {
            flags,
            env: &no_env,
            file: BTreeMap::new(),
        });
        assert!(matches!(r, Err(CliError::Usage(_))));
    }
}
