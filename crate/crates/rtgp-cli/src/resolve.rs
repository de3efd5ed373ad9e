//! Three-way parameter resolution: an explicit CLI flag wins, then a config
//! file entry, then the built-in default. Every resolved value is recorded so
//! the run manifest echoes the full effective configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use rtgp_core::error::Result;
use rtgp_core::io::Config;
use rtgp_core::Error;
use serde::Serialize;

pub struct Resolver {
    config: Config,
    params: BTreeMap<String, serde_json::Value>,
}

pub fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Resolver {
    pub fn new(config_path: Option<&PathBuf>) -> Result<Self> {
        let config = match config_path {
            Some(p) => Config::from_path(p)?,
            None => Config::default(),
        };
        Ok(Self { config, params: BTreeMap::new() })
    }

    fn record(&mut self, key: &str, value: serde_json::Value) {
        self.params.insert(key.to_string(), value);
    }

    /// Overrides the recorded value for a key (used when a derived default
    /// replaces an absent pair of alternatives).
    pub fn record_value(&mut self, key: &str, value: impl Serialize) {
        self.record(key, serde_json::to_value(value).expect("serializable parameter"));
    }

    /// Resolves a typed value with a default. The config entry is parsed even
    /// when a flag overrides it, so a malformed file always fails fast and an
    /// overridden key still counts as consumed.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Serialize + Clone,
        T::Err: Display,
    {
        let from_config = self.config.get_parsed::<T>(key)?;
        let v = flag.or(from_config).unwrap_or(default);
        self.record(key, serde_json::to_value(v.clone()).expect("serializable parameter"));
        Ok(v)
    }

    /// Resolves a value that has no default; absent is allowed.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Serialize + Clone,
        T::Err: Display,
    {
        let from_config = self.config.get_parsed::<T>(key)?;
        let v = flag.or(from_config);
        let recorded = match &v {
            Some(v) => serde_json::to_value(v.clone()).expect("serializable parameter"),
            None => serde_json::Value::Null,
        };
        self.record(key, recorded);
        Ok(v)
    }

    /// Resolves a path that must be present on the flag or in the config.
    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let from_config = self.config.get(key).map(PathBuf::from);
        let path = flag
            .or(from_config)
            .ok_or_else(|| usage(format!("missing required `--{key}` (or config key `{key}`)")))?;
        self.record(key, serde_json::Value::String(path.display().to_string()));
        Ok(path)
    }

    /// Finishes resolution: rejects unknown config keys and returns the
    /// effective parameter map for the manifest.
    pub fn finish(self) -> Result<BTreeMap<String, serde_json::Value>> {
        self.config.ensure_consumed()?;
        Ok(self.params)
    }
}

/// Shared resolution of the `--l` / `--kappa` basis-selector pair.
pub fn basis_selector(
    r: &mut Resolver,
    l: Option<usize>,
    kappa: Option<f64>,
    default_kappa: f64,
) -> Result<rtgp_core::BasisSelector> {
    let l = r.optional("l", l)?;
    let kappa = r.optional("kappa", kappa)?;
    match (l, kappa) {
        (Some(_), Some(_)) => Err(usage("give either --l or --kappa, not both")),
        (Some(l), None) => Ok(rtgp_core::BasisSelector::FixedL(l)),
        (None, Some(k)) => Ok(rtgp_core::BasisSelector::KappaTarget(k)),
        (None, None) => {
            r.record_value("kappa", default_kappa);
            Ok(rtgp_core::BasisSelector::KappaTarget(default_kappa))
        }
    }
}
