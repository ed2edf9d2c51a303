//! Experiment configuration: command-line flags, optionally overridden by a
//! JSON file, resolved and validated before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitter::{Family, SplitterSpec};
use crate::tree::SplitTreeParams;
use crate::verify::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Constants,
    Chain,
    Fixedpoint,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Constants => "constants",
            Command::Chain => "chain",
            Command::Fixedpoint => "fixedpoint",
            Command::Verify => "verify",
        }
    }
}

/// Tree parameters as written in a config file; checked on resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub b: usize,
    pub s: usize,
    pub s0: usize,
    pub s1: usize,
}

/// Every field is optional; present fields replace the flag values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub splitter: Option<serde_json::Value>,
    pub params: Option<RawParams>,
    pub n: Option<Vec<u64>>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Subcommand-specific knobs (n1, pop, iters, checks, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
    }
}

/// Values gathered from flags before the config file is applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlagValues {
    pub family: Option<String>,
    pub b: Option<usize>,
    pub k: Option<usize>,
    pub alpha: Vec<f64>,
    pub beta: Option<f64>,
    pub s: Option<usize>,
    pub s0: Option<usize>,
    pub s1: Option<usize>,
    pub n: Vec<u64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A fully validated run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub command: Command,
    pub spec: SplitterSpec,
    pub params: SplitTreeParams,
    pub n: Vec<u64>,
    pub reps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub mode: Mode,
    pub tolerances: BTreeMap<String, f64>,
    pub family_given: bool,
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub const DEFAULT_SEED: u64 = 20_240_601;

fn invalid(e: Error) -> Error {
    match e {
        Error::ConfigInvalid(_) | Error::Io(_) => e,
        other => Error::ConfigInvalid(other.to_string()),
    }
}

pub fn resolve(command: Command, flags: FlagValues, file: Option<ExperimentConfig>) -> Result<Resolved> {
    let file = file.unwrap_or_default();
    if let Some(c) = file.command {
        if c != command {
            return Err(Error::ConfigInvalid(format!(
                "config is for '{}' but '{}' was invoked",
                c.name(),
                command.name()
            )));
        }
    }
    let family_given = flags.family.is_some() || file.splitter.is_some();
    let spec = match file.splitter {
        Some(v) => serde_json::from_value::<SplitterSpec>(v).map_err(|e| Error::ConfigInvalid(format!("splitter: {e}")))?,
        None => {
            let name = flags.family.as_deref().unwrap_or("bst");
            SplitterSpec::new(Family::from_name(name, flags.b, flags.k, &flags.alpha, flags.beta).map_err(invalid)?)
                .map_err(invalid)?
        }
    };
    let defaults = SplitTreeParams::default_for(spec.family());
    let params = match file.params {
        Some(p) => SplitTreeParams { b: p.b, s: p.s, s0: p.s0, s1: p.s1 },
        None => SplitTreeParams {
            b: spec.b(),
            s: flags.s.unwrap_or(defaults.s),
            s0: flags.s0.unwrap_or(defaults.s0),
            s1: flags.s1.unwrap_or(defaults.s1),
        },
    };
    params.validate().map_err(invalid)?;
    params.check_splitter(&spec).map_err(invalid)?;
    let mut extra = flags.extra;
    extra.extend(file.extra);
    let n = file.n.unwrap_or(flags.n);
    let reps = file.reps.or(flags.reps).unwrap_or(100);
    let mode = file.mode.or(flags.mode).unwrap_or(Mode::Quick);
    for (k, v) in &file.tolerances {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::ConfigInvalid(format!("tolerance {k} = {v} must be a non-negative number")));
        }
    }
    Ok(Resolved {
        command,
        spec,
        params,
        n,
        reps,
        seed: file.seed.or(flags.seed).unwrap_or(DEFAULT_SEED),
        out: file.out.or(flags.out).unwrap_or_else(|| PathBuf::from("out")),
        mode,
        tolerances: file.tolerances,
        family_given,
        extra,
    })
}

impl Resolved {
    pub fn extra_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| Error::ConfigInvalid(format!("{key} must be a non-negative integer"))),
        }
    }

    pub fn extra_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| Error::ConfigInvalid(format!("{key} must be a number"))),
        }
    }

    pub fn extra_bool(&self, key: &str) -> bool {
        self.extra.get(key).and_then(|v| v.as_bool()).unwrap_or(false)
    }

    pub fn extra_list(&self, key: &str) -> Result<Vec<u8>> {
        match self.extra.get(key) {
            None => Ok(Vec::new()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::ConfigInvalid(format!("{key}: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_params_cite_constraint() {
        let flags = FlagValues { s0: Some(3), ..Default::default() };
        let err = resolve(Command::Simulate, flags, None).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid(_)));
        assert!(err.to_string().contains("0 ≤ s0 ≤ s"), "{err}");
    }

    #[test]
    fn config_overrides_flags() {
        let flags = FlagValues { seed: Some(1), reps: Some(5), ..Default::default() };
        let file: ExperimentConfig = serde_json::from_str(
            r#"{"seed": 9, "splitter": {"name": "median_of", "k": 1}, "n": [10, 20]}"#,
        )
        .unwrap();
        let r = resolve(Command::Simulate, flags, Some(file)).unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.reps, 5);
        assert_eq!(r.n, vec![10, 20]);
        assert_eq!(r.params, SplitTreeParams::new(2, 2, 1, 1).unwrap());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sede": 1}"#).is_err());
    }

    #[test]
    fn lattice_family_is_rejected() {
        let flags = FlagValues { family: Some("trie".into()), ..Default::default() };
        assert!(matches!(resolve(Command::Simulate, flags, None), Err(Error::ConfigInvalid(_))));
    }
}
