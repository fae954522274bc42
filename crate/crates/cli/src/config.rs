//! Merging of JSON config files with command-line flags, and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use torusfp::{Error, Result};

/// Keys accepted in a config file. Flags use the same names.
pub const KNOWN_KEYS: &[&str] = &[
    "potential",
    "d",
    "N",
    "l",
    "M",
    "T",
    "eps",
    "samples",
    "seed",
    "out",
    "assert",
    "auto",
    "m_cap",
    "snapshots",
    "halve",
    "matrix",
    "z",
    "ns",
    "family",
    "n_max",
    "emit",
    "m_max",
    "C",
    "a",
    "theta",
];

/// Values drawn from flags, then the config file, then defaults. Every value handed out is recorded.
pub struct Resolver {
    file: Map<String, Value>,
    used: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(Error::Validation("config must be a JSON object".into())),
                    Err(e) => return Err(Error::Validation(format!("config is not valid JSON: {e}"))),
                }
            }
        };
        if let Some(k) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Validation(format!("unknown config key {k:?}")));
        }
        Ok(Resolver { file, used: BTreeMap::new() })
    }

    pub fn opt<T: DeserializeOwned + Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                None | Some(Value::Null) => None,
                Some(raw) => Some(
                    serde_json::from_value(raw.clone())
                        .map_err(|e| Error::Validation(format!("config key {key:?}: {e}")))?,
                ),
            },
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn get<T: DeserializeOwned + Serialize + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, &default);
                Ok(default)
            }
        }
    }

    /// Boolean switch: set by the flag, or by `true` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = if flag { true } else { self.opt::<bool>(key, None)?.unwrap_or(false) };
        self.record(key, &v);
        Ok(v)
    }

    pub fn required<T: DeserializeOwned + Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.opt(key, flag)?.ok_or_else(|| Error::Validation(format!("--{key} is required for this subcommand")))
    }

    pub fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.used.insert(key.to_string(), serde_json::to_value(v).expect("serializable"));
    }

    pub fn used(&self) -> &BTreeMap<String, Value> {
        &self.used
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub subcommand: &'a str,
    pub parameters: &'a BTreeMap<String, Value>,
    pub config_hash: String,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub wall_time_s: f64,
    pub threads: usize,
    pub artifacts: Vec<String>,
    pub violations: &'a [String],
    pub warnings: &'a [String],
}

pub fn versions() -> BTreeMap<&'static str, &'static str> {
    let mut v = BTreeMap::new();
    v.insert("torusfp", torusfp::VERSION);
    v.insert("torusfp-cli", env!("CARGO_PKG_VERSION"));
    v
}

/// Output directory with artifact bookkeeping.
pub struct Outputs {
    pub dir: PathBuf,
    pub written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, written: Vec::new() })
    }

    pub fn file(&mut self, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
        self.written.push(name.to_string());
        Ok(std::io::BufWriter::new(std::fs::File::create(self.dir.join(name))?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        self.written.push(name.to_string());
        std::fs::write(self.dir.join(name), text)?;
        Ok(())
    }
}
