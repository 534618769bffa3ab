use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "CRYDET_CONFIG";

/// One documented config key.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    /// True when the default is a choice of this tool rather than a
    /// published value.
    pub chosen: bool,
    pub help: &'static str,
}

const fn key(
    key: &'static str,
    default: &'static str,
    chosen: bool,
    help: &'static str,
) -> KeySpec {
    KeySpec {
        key,
        default,
        chosen,
        help,
    }
}

pub const SCHEMA: &[KeySpec] = &[
    key(
        "seed",
        "0",
        true,
        "RNG seed for initialization, shuffling, dropout and synthesis",
    ),
    key(
        "log_level",
        "warn",
        true,
        "stderr log level: error, warn, info, debug or trace",
    ),
    key(
        "threshold",
        "0.5",
        false,
        "classification threshold (score >= threshold is cry)",
    ),
    key(
        "hop_s",
        "1.0",
        false,
        "frame hop in seconds for featurize, detect and mine",
    ),
    key(
        "profile",
        "blazenet",
        true,
        "DSP profile: blazenet, blazenet_5s or embedding",
    ),
    key(
        "backbone.lr",
        "0.001",
        false,
        "backbone starting learning rate",
    ),
    key("backbone.momentum", "0.9", false, "backbone SGD momentum"),
    key("backbone.epochs", "60", false, "backbone training epochs"),
    key(
        "backbone.decay_factor",
        "0.1",
        false,
        "learning-rate decay factor",
    ),
    key(
        "backbone.decay_every",
        "20",
        false,
        "epochs between learning-rate decays",
    ),
    key("backbone.batch", "32", false, "backbone batch size"),
    key(
        "head.lr",
        "0.001",
        false,
        "anomaly head learning rate (Adam)",
    ),
    key("head.steps", "20000", false, "anomaly head training steps"),
    key(
        "head.batch",
        "128",
        false,
        "bags per step, half abnormal and half normal",
    ),
    key(
        "head.segments",
        "10",
        false,
        "segments per bag after interpolation (typically 5, 10 or 16)",
    ),
    key("head.k", "2", false, "top-k segments by feature magnitude"),
    key("head.margin", "100", true, "magnitude hinge margin"),
    key(
        "head.alpha",
        "0.0001",
        true,
        "weight of the magnitude hinge",
    ),
    key("head.lambda1", "0.0008", true, "smoothness weight"),
    key("head.lambda2", "0.0008", true, "sparsity weight"),
    key(
        "head.variant",
        "eq6_rtfm",
        true,
        "loss: eq6_rtfm (top-k magnitude) or eq3_score_mil",
    ),
    key(
        "head.dropout",
        "0.7",
        true,
        "dropout after the first head layer",
    ),
    key(
        "head.val_every",
        "100",
        true,
        "steps between validation checks",
    ),
    key("mine.t", "2", false, "frames kept per file when mining"),
];

pub fn spec_for(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|k| k.key == key)
}

/// Help-text suffix for a key: its default, marked when chosen here.
pub fn default_note(key: &str) -> String {
    let k = spec_for(key).expect("documented key");
    if k.chosen {
        format!("[default: {}] (chosen)", k.default)
    } else {
        format!("[default: {}]", k.default)
    }
}

/// Settings read from a flat `key = value` file. Blank lines and lines
/// starting with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    origin: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: Option<&Path>) -> Result<Self> {
        let name = origin.map_or("<config>".to_string(), |p| p.display().to_string());
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{name}:{}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if spec_for(k).is_none() {
                return Err(Error::Config(format!(
                    "{name}:{}: unknown key '{k}'",
                    i + 1
                )));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "{name}:{}: key '{k}' set twice",
                    i + 1
                )));
            }
        }
        Ok(RunConfig {
            values,
            origin: origin.map(Path::to_path_buf),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, Some(path))
    }

    /// `explicit` if given, else the file named by `CRYDET_CONFIG`, else empty.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if present, else the file value, else the schema default.
    pub fn resolve<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        let spec =
            spec_for(key).ok_or_else(|| Error::Config(format!("undocumented key '{key}'")))?;
        let (text, from) = match self.raw(key) {
            Some(v) => (v, "config"),
            None => (spec.default, "default"),
        };
        text.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse '{text}' ({from})")))
    }

    pub fn origin(&self) -> Option<&Path> {
        self.origin.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_resolve() {
        let c = RunConfig::parse("# comment\n\nseed = 7\nhead.k=3\n", None).unwrap();
        assert_eq!(c.resolve::<u64>("seed", None).unwrap(), 7);
        assert_eq!(c.resolve::<u64>("seed", Some(9)).unwrap(), 9);
        assert_eq!(c.resolve::<usize>("head.k", None).unwrap(), 3);
        assert_eq!(c.resolve::<f64>("backbone.lr", None).unwrap(), 0.001);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for bad in ["nope = 1", "seed = 1\nseed = 2", "seed"] {
            assert!(
                matches!(RunConfig::parse(bad, None), Err(Error::Config(_))),
                "{bad}"
            );
        }
        let c = RunConfig::parse("head.steps = many", None).unwrap();
        assert!(matches!(
            c.resolve::<usize>("head.steps", None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn every_default_parses() {
        let c = RunConfig::default();
        for k in SCHEMA {
            assert!(c.resolve::<String>(k.key, None).is_ok());
        }
        assert!(default_note("head.margin").ends_with("(chosen)"));
        assert_eq!(default_note("backbone.lr"), "[default: 0.001]");
    }
}
