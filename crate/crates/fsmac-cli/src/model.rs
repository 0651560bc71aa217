//! JSON model files: chain, channel, delays and solver blocks, parsed into
//! the library's domain types. Numbers are 64-bit floats throughout.
//!
//! ```json
//! {
//!   "chain":   {"two_state": {"g": 0.1, "b": 0.1}}
//!           or {"states": ["G","B"], "K": [[0.9,0.1],[0.1,0.9]]},
//!   "channel": {"gaussian": {"sigma2": {"G":1.0,"B":100.0},
//!                            "h1": {"G":1.0,"B":1.0}, "h2": {...},
//!                            "P1": 10.0, "P2": 10.0}}
//!           or {"discrete": {"x1_size":2, "x2_size":2, "y_size":2,
//!                            "law": [[[[...]]]]}},   // [x1][x2][s][y]
//!   "delays":  {"d1": 4, "d2": 0},                   // d1 may be "inf"
//!   "solver":  {"tolerance": 1e-8, "multistarts": 16, "seed": 7}
//! }
//! ```

use fsmac::channel::{DiscreteStateMac, GaussianStateMac};
use fsmac::inforate::InputPolicy;
use fsmac::markov::{Delay, DelayProfile, MarkovChain};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("model: {0}")]
    Invalid(String),
}

impl From<fsmac::markov::MarkovError> for ModelError {
    fn from(e: fsmac::markov::MarkovError) -> Self {
        ModelError::Invalid(format!("chain: {e}"))
    }
}

impl From<fsmac::channel::ChannelError> for ModelError {
    fn from(e: fsmac::channel::ChannelError) -> Self {
        ModelError::Invalid(format!("channel: {e}"))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    chain: ChainBlock,
    channel: ChannelBlock,
    #[serde(default)]
    delays: Option<DelaysBlock>,
    #[serde(default)]
    pub solver: SolverBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainBlock {
    #[serde(default)]
    two_state: Option<TwoStateBlock>,
    #[serde(default)]
    states: Option<Vec<String>>,
    #[serde(default, rename = "K")]
    k_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoStateBlock {
    g: f64,
    b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelBlock {
    #[serde(default)]
    discrete: Option<DiscreteBlock>,
    #[serde(default)]
    gaussian: Option<GaussianBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscreteBlock {
    x1_size: usize,
    x2_size: usize,
    y_size: usize,
    /// `law[x1][x2][s][y]`
    law: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianBlock {
    sigma2: BTreeMap<String, f64>,
    #[serde(default)]
    h1: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    h2: Option<BTreeMap<String, f64>>,
    #[serde(rename = "P1")]
    p1: f64,
    #[serde(rename = "P2")]
    p2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelaysBlock {
    d1: DelayValue,
    d2: u32,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DelayValue {
    Finite(u32),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub tolerance: Option<f64>,
    pub multistarts: Option<usize>,
    pub seed: Option<u64>,
}

/// Fully validated model: chain, channel variant, optional delays.
pub struct Model {
    pub chain: MarkovChain,
    pub channel: ChannelKind,
    pub delays: Option<DelayProfile>,
    pub solver: SolverBlock,
}

pub enum ChannelKind {
    Discrete(DiscreteStateMac),
    Gaussian(GaussianStateMac),
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    build(file)
}

fn build(file: ModelFile) -> Result<Model, ModelError> {
    let chain = match (&file.chain.two_state, &file.chain.states, &file.chain.k_matrix) {
        (Some(ts), None, None) => MarkovChain::two_state(ts.g, ts.b)?,
        (None, Some(states), Some(k)) => MarkovChain::validate_labeled(states.clone(), k)?,
        (None, None, Some(k)) => MarkovChain::validate(k)?,
        _ => {
            return Err(ModelError::Invalid(
                "chain block needs either two_state{g,b} or K (with optional states)".into(),
            ))
        }
    };
    let channel = match (file.channel.discrete, file.channel.gaussian) {
        (Some(d), None) => ChannelKind::Discrete(build_discrete(&chain, d)?),
        (None, Some(g)) => ChannelKind::Gaussian(build_gaussian(&chain, g)?),
        _ => {
            return Err(ModelError::Invalid(
                "channel block needs exactly one of discrete/gaussian".into(),
            ))
        }
    };
    let delays = file
        .delays
        .map(|d| -> Result<DelayProfile, ModelError> {
            let d1 = match d.d1 {
                DelayValue::Finite(v) => Delay::Finite(v),
                DelayValue::Named(s) if s == "inf" => Delay::Infinite,
                DelayValue::Named(s) => {
                    return Err(ModelError::Invalid(format!(
                        "d1 must be a nonnegative integer or \"inf\", got {s:?}"
                    )))
                }
            };
            Ok(DelayProfile::new(d1, d.d2)?)
        })
        .transpose()?;
    Ok(Model {
        chain,
        channel,
        delays,
        solver: file.solver,
    })
}

fn build_discrete(chain: &MarkovChain, block: DiscreteBlock) -> Result<DiscreteStateMac, ModelError> {
    let k = chain.k();
    let mut law = Vec::with_capacity(block.x1_size * block.x2_size * k * block.y_size);
    if block.law.len() != block.x1_size {
        return Err(ModelError::Invalid(format!(
            "law has {} x1 slices, expected {}",
            block.law.len(),
            block.x1_size
        )));
    }
    for x1 in &block.law {
        if x1.len() != block.x2_size {
            return Err(ModelError::Invalid("law x2 dimension mismatch".into()));
        }
        for x2 in x1 {
            if x2.len() != k {
                return Err(ModelError::Invalid(format!(
                    "law state dimension is {}, chain has {k} states",
                    x2.len()
                )));
            }
            for s in x2 {
                if s.len() != block.y_size {
                    return Err(ModelError::Invalid("law y dimension mismatch".into()));
                }
                law.extend_from_slice(s);
            }
        }
    }
    Ok(DiscreteStateMac::new(
        block.x1_size,
        block.x2_size,
        k,
        block.y_size,
        law,
    )?)
}

fn build_gaussian(chain: &MarkovChain, block: GaussianBlock) -> Result<GaussianStateMac, ModelError> {
    let per_state = |map: &BTreeMap<String, f64>, what: &str| -> Result<Vec<f64>, ModelError> {
        chain
            .states()
            .iter()
            .map(|label| {
                map.get(label).copied().ok_or_else(|| {
                    ModelError::Invalid(format!("{what} is missing state {label:?}"))
                })
            })
            .collect()
    };
    let sigma2 = per_state(&block.sigma2, "sigma2")?;
    let ones = vec![1.0; chain.k()];
    let h1 = match &block.h1 {
        Some(m) => per_state(m, "h1")?,
        None => ones.clone(),
    };
    let h2 = match &block.h2 {
        Some(m) => per_state(m, "h2")?,
        None => ones,
    };
    Ok(GaussianStateMac::new(
        chain.k(),
        sigma2,
        h1,
        h2,
        block.p1,
        block.p2,
    )?)
}

/// Optional policy file for `simulate` and `multiletter-check`:
/// `{"u_size": 1, "pu": [...], "px1": [...], "px2": [...]}` with the flat
/// layouts `[s̃1][u]`, `[s̃1][u][x1]`, `[s̃1][s̃2][u][x2]`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    u_size: usize,
    pu: Vec<f64>,
    px1: Vec<f64>,
    px2: Vec<f64>,
}

pub fn load_policy(
    path: &Path,
    k1: usize,
    k: usize,
    nx1: usize,
    nx2: usize,
) -> Result<InputPolicy, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: PolicyFile = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    InputPolicy::new(file.u_size, k1, k, nx1, nx2, file.pu, file.px1, file.px2)
        .map_err(|e| ModelError::Invalid(format!("policy: {e}")))
}
