//! Run configuration files: TOML with a `[solver]` and a `[synth]` section.
//!
//! Both sections are optional and every key inside them defaults to the
//! corresponding `Default` value. Unknown sections or keys are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub synth: SynthConfig,
}

fn section<T: DeserializeOwned + Default>(table: &mut toml::Table, name: &str) -> Result<T> {
    match table.remove(name) {
        None => Ok(T::default()),
        Some(toml::Value::Table(t)) => T::deserialize(t).map_err(|e| {
            // serde reports the field name; keep only its message
            let msg = e.message().trim().to_string();
            match unknown_key(&msg) {
                Some(key) => Error::Config(format!("{name}.{key}: unknown key")),
                None => Error::Config(format!("{name}: {msg}")),
            }
        }),
        Some(other) => Err(Error::Config(format!(
            "{name}: expected a table, found {}",
            other.type_str()
        ))),
    }
}

fn unknown_key(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(format!("syntax: {}", e.message().trim()))
        })?;
        let solver: SolverConfig = section(&mut table, "solver")?;
        let synth: SynthConfig = section(&mut table, "synth")?;
        if let Some(key) = table.keys().next() {
            return Err(Error::Config(format!("{key}: unknown section or key")));
        }
        solver.validate()?;
        synth.validate()?;
        Ok(RunConfig { solver, synth })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
