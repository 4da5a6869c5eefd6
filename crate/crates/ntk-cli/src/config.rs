//! JSON architecture descriptions. A file names the patch shape and pooling
//! of each layer plus optional zero-padding and initial-pooling switches,
//! and is compiled into the core [`ArchitectureSpec`].
//!
//! ```json
//! {
//!   "layers": [
//!     {"patch": [3, 3], "pool": {"type": "gaussian", "subsample": 2}},
//!     {"patch": [3, 3], "pool": {"type": "gaussian", "subsample": 5}}
//!   ],
//!   "padding": "zero",
//!   "initial_pool": false
//! }
//! ```
//!
//! Gaussian pooling derives its width from the subsampling factor unless
//! `sigma`/`half_size` override it.

use anyhow::{bail, Context, Result};
use ntk_core::conv::{LayerSpec, Pooling};
use ntk_core::ArchitectureSpec;
use serde::Deserialize;
use std::fs;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchConfig {
    layers: Vec<LayerConfig>,
    #[serde(default = "default_padding")]
    padding: String,
    #[serde(default)]
    initial_pool: InitialPoolConfig,
}

fn default_padding() -> String {
    "zero".to_owned()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerConfig {
    patch: [usize; 2],
    pool: PoolConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum PoolConfig {
    Gaussian {
        subsample: usize,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        half_size: Option<usize>,
    },
    Dirac {
        subsample: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InitialPoolConfig {
    Switch(bool),
    Pool(PoolConfig),
}

impl Default for InitialPoolConfig {
    fn default() -> Self {
        InitialPoolConfig::Switch(false)
    }
}

impl PoolConfig {
    fn build(&self) -> Result<Pooling> {
        Ok(match *self {
            PoolConfig::Gaussian { subsample, sigma, half_size } => match (sigma, half_size) {
                (None, None) => Pooling::gaussian(subsample)?,
                (sigma, half_size) => {
                    let default = Pooling::gaussian(subsample)?;
                    Pooling::gaussian_with(
                        sigma.unwrap_or(f64::from(subsample as u32) / f64::sqrt(2.0)),
                        half_size.unwrap_or(default.half_size()),
                        subsample,
                    )?
                }
            },
            PoolConfig::Dirac { subsample } => Pooling::dirac(subsample)?,
        })
    }
}

impl ArchConfig {
    fn build(&self) -> Result<ArchitectureSpec> {
        if self.padding != "zero" {
            bail!("unsupported padding {:?}: only \"zero\" is implemented", self.padding);
        }
        let initial_pool = match &self.initial_pool {
            InitialPoolConfig::Switch(false) => None,
            InitialPoolConfig::Switch(true) => Some(Pooling::gaussian(2)?),
            InitialPoolConfig::Pool(pool) => Some(pool.build()?),
        };
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                LayerSpec::boxed(layer.patch[0], layer.patch[1], layer.pool.build()?)
                    .with_context(|| format!("layer {i}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ArchitectureSpec::new(initial_pool, layers)?)
    }
}

/// Parse an architecture from JSON text.
pub fn arch_from_json(text: &str) -> Result<ArchitectureSpec> {
    let config: ArchConfig = serde_json::from_str(text).context("parsing architecture JSON")?;
    config.build()
}

/// Read and parse an architecture description file.
pub fn arch_from_file(path: &Path) -> Result<ArchitectureSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    arch_from_json(&text).with_context(|| format!("in {}", path.display()))
}

/// Architecture used when no file is given: two 3x3 layers with Gaussian
/// pooling at subsampling factors 2 and 5 (28x28 inputs reduce to 3x3
/// maps). Identical to the default of the core stability experiment.
pub fn default_arch() -> Result<ArchitectureSpec> {
    Ok(ntk_core::deform::default_stability_arch()?)
}

/// Resolve an optional architecture file path to a spec.
pub fn resolve_arch(path: Option<&Path>) -> Result<ArchitectureSpec> {
    match path {
        Some(path) => arch_from_file(path),
        None => default_arch(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LAYER: &str = r#"{
        "layers": [
            {"patch": [3, 3], "pool": {"type": "gaussian", "subsample": 2}},
            {"patch": [3, 3], "pool": {"type": "gaussian", "subsample": 5}}
        ],
        "padding": "zero",
        "initial_pool": false
    }"#;

    #[test]
    fn two_layer_json_matches_default_arch() {
        let parsed = arch_from_json(TWO_LAYER).unwrap();
        let default = default_arch().unwrap();
        assert_eq!(parsed.depth(), 2);
        assert!(parsed.initial_pool().is_none());
        for (a, b) in parsed.layers().iter().zip(default.layers()) {
            assert_eq!(a.patch(), b.patch());
            assert_eq!(a.pooling().taps(), b.pooling().taps());
            assert_eq!(a.pooling().subsample(), b.pooling().subsample());
        }
    }

    #[test]
    fn gaussian_taps_follow_subsample_unless_overridden() {
        let arch = arch_from_json(
            r#"{"layers": [{"patch": [1, 1], "pool": {"type": "gaussian", "subsample": 4}}]}"#,
        )
        .unwrap();
        let expected = Pooling::gaussian(4).unwrap();
        assert_eq!(arch.layers()[0].pooling().taps(), expected.taps());

        let overridden = arch_from_json(
            r#"{"layers": [{"patch": [1, 1],
                "pool": {"type": "gaussian", "subsample": 4, "sigma": 1.0, "half_size": 2}}]}"#,
        )
        .unwrap();
        let expected = Pooling::gaussian_with(1.0, 2, 4).unwrap();
        assert_eq!(overridden.layers()[0].pooling().taps(), expected.taps());
        assert_eq!(overridden.layers()[0].pooling().half_size(), 2);
    }

    #[test]
    fn initial_pool_accepts_switch_and_explicit_pooling() {
        let none = arch_from_json(
            r#"{"layers": [{"patch": [1, 1], "pool": {"type": "dirac", "subsample": 1}}]}"#,
        )
        .unwrap();
        assert!(none.initial_pool().is_none());

        let switched = arch_from_json(
            r#"{"layers": [{"patch": [1, 1], "pool": {"type": "dirac", "subsample": 1}}],
                "initial_pool": true}"#,
        )
        .unwrap();
        let default_pool = Pooling::gaussian(2).unwrap();
        assert_eq!(switched.initial_pool().unwrap().taps(), default_pool.taps());

        let explicit = arch_from_json(
            r#"{"layers": [{"patch": [1, 1], "pool": {"type": "dirac", "subsample": 1}}],
                "initial_pool": {"type": "gaussian", "subsample": 3}}"#,
        )
        .unwrap();
        let expected = Pooling::gaussian(3).unwrap();
        assert_eq!(explicit.initial_pool().unwrap().taps(), expected.taps());
    }

    #[test]
    fn non_zero_padding_and_unknown_fields_are_rejected() {
        let err = arch_from_json(
            r#"{"layers": [{"patch": [1, 1], "pool": {"type": "dirac", "subsample": 1}}],
                "padding": "reflect"}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("zero"), "{err}");

        assert!(arch_from_json(r#"{"layers": [], "typo": 1}"#).is_err());
        assert!(arch_from_json(
            r#"{"layers": [{"patch": [1, 1], "pool": {"type": "median", "subsample": 1}}]}"#
        )
        .is_err());
    }
}
