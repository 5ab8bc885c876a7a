//! Run configuration read from JSON, with flag overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ldtree_core::{DustClass, Scope, XiMeasure};

/// A configuration or usage problem; reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSource {
    Zero,
    Equilibrium,
    /// A plain matrix, or a marked `r | u` file for marked runs.
    File(PathBuf),
}

fn default_replicates() -> usize {
    1
}

fn default_initial() -> InitialSource {
    InitialSource::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: serde_json::Value,
    pub n: usize,
    #[serde(default)]
    pub horizon: f64,
    #[serde(default)]
    pub scope: Option<Scope>,
    #[serde(default = "default_initial")]
    pub initial: InitialSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Observation times for state output; the horizon when empty.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Time grid of the block-count profile.
    #[serde(default)]
    pub grid: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn xi(&self) -> anyhow::Result<XiMeasure> {
        XiMeasure::from_json(&self.model.to_string()).map_err(|e| usage(format!("invalid model: {e}")))
    }

    /// The event scope: given explicitly, or marked (touches-level) for
    /// measures with dust and plain (changes-partition) otherwise.
    pub fn scope(&self, xi: &XiMeasure) -> anyhow::Result<Scope> {
        match self.scope {
            Some(Scope::TouchesLevel) if xi.classify_dust() == DustClass::NoDust => {
                Err(usage("scope touches_level needs a measure with dust"))
            }
            Some(s) => Ok(s),
            None => Ok(match xi.classify_dust() {
                DustClass::Dust => Scope::TouchesLevel,
                DustClass::NoDust => Scope::ChangesGamma,
            }),
        }
    }

    pub fn validate_simulation(&self) -> anyhow::Result<()> {
        if self.n == 0 {
            return Err(usage("n must be at least 1"));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(usage("horizon must be finite and nonnegative"));
        }
        if self.times.iter().any(|&t| !(t >= 0.0 && t <= self.horizon)) {
            return Err(usage("observation times must lie in [0, horizon]"));
        }
        if self.replicates == 0 {
            return Err(usage("replicates must be positive"));
        }
        Ok(())
    }

    pub fn validate_coalescent(&self) -> anyhow::Result<()> {
        if self.n < 2 {
            return Err(usage("a coalescent needs at least two leaves"));
        }
        if self.replicates == 0 {
            return Err(usage("replicates must be positive"));
        }
        if self.grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(usage("grid times must be finite and nonnegative"));
        }
        Ok(())
    }
}
