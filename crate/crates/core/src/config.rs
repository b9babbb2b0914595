//! Scenario configuration: JSON schema, validation, dotted-path overrides and
//! the digest shared with external trainers.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adaptive::AdaptiveParams;
use crate::agents::{PersistentPolicy, RandomPolicy, SizeDist};
use crate::analytics::PenaltySpec;
use crate::error::{Result, SimError};
use crate::market::{LobModelParams, MidPriceParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvestorSpec {
    pub count: usize,
    pub arrival_prob: f64,
    pub size: SizeDist,
    /// Investors know the next mid move and trade against it.
    pub toxic: bool,
}

impl Default for InvestorSpec {
    fn default() -> Self {
        Self {
            count: 20,
            arrival_prob: 1.0,
            size: SizeDist::default(),
            toxic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Random {
        eps_min: f64,
        eps_max: f64,
    },
    Persistent {
        eps_b: f64,
        eps_s: f64,
        #[serde(default)]
        x: f64,
    },
    Adaptive {
        #[serde(default)]
        params: AdaptiveParams,
    },
    /// Driven over the environment protocol. `fallback` is used when the
    /// scenario is run offline without a trainer attached.
    External {
        #[serde(default = "external_fallback")]
        fallback: PersistentPolicy,
    },
}

fn external_fallback() -> PersistentPolicy {
    PersistentPolicy {
        eps_b: 0.0,
        eps_s: 0.0,
        x: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub mid_price: MidPriceParams,
    pub lob: LobModelParams,
    pub investors: InvestorSpec,
    pub agents: Vec<AgentSpec>,
    pub episode_length: u64,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub hedge_cost_multiplier: f64,
    pub s_ref_scale: f64,
    pub output: OutputSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            mid_price: MidPriceParams::default(),
            lob: LobModelParams::default(),
            investors: InvestorSpec::default(),
            agents: Vec::new(),
            episode_length: 200,
            total_steps: 5000,
            seeds: vec![1, 2, 3, 4, 5],
            hedge_cost_multiplier: 1.0,
            s_ref_scale: 1.0,
            output: OutputSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_overrides::<&str>(text, &[])
    }

    /// Parses `text`, applies `key.path=value` overrides, then validates.
    pub fn from_json_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o.as_ref())?;
        }
        let cfg: ScenarioConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>, S: AsRef<str>>(path: P, overrides: &[S]) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Compact JSON with sorted keys; the digest input.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn digest(&self) -> Result<String> {
        let hash = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(hex::encode(hash))
    }

    pub fn external_slots(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a.policy, PolicySpec::External { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.mid_price.validate()?;
        self.lob.validate()?;
        if self.agents.is_empty() {
            return Err(SimError::invalid(
                "agents",
                "need at least one market maker",
            ));
        }
        if self.seeds.is_empty() {
            return Err(SimError::invalid("seeds", "need at least one seed"));
        }
        if self.episode_length == 0 {
            return Err(SimError::invalid("episode_length", "must be >= 1"));
        }
        if self.total_steps < self.episode_length {
            return Err(SimError::invalid(
                "total_steps",
                format!(
                    "must be >= episode_length ({} < {})",
                    self.total_steps, self.episode_length
                ),
            ));
        }
        if !(self.hedge_cost_multiplier.is_finite() && self.hedge_cost_multiplier >= 0.0) {
            return Err(SimError::invalid("hedge_cost_multiplier", "must be >= 0"));
        }
        if !(self.s_ref_scale.is_finite() && self.s_ref_scale > 0.0) {
            return Err(SimError::invalid("s_ref_scale", "must be > 0"));
        }
        let inv = &self.investors;
        if !(0.0..=1.0).contains(&inv.arrival_prob) {
            return Err(SimError::invalid(
                "investors.arrival_prob",
                "must lie in [0, 1]",
            ));
        }
        inv.size.validate()?;

        let mut ids = HashSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let field = |f: &str| format!("agents[{i}].{f}");
            if agent.id.is_empty() {
                return Err(SimError::invalid(field("id"), "must not be empty"));
            }
            if !ids.insert(agent.id.as_str()) {
                return Err(SimError::invalid(
                    field("id"),
                    format!("duplicate id `{}`", agent.id),
                ));
            }
            let policy_check = match &agent.policy {
                PolicySpec::Random { eps_min, eps_max } => RandomPolicy {
                    eps_min: *eps_min,
                    eps_max: *eps_max,
                }
                .validate(),
                PolicySpec::Persistent { eps_b, eps_s, x } => PersistentPolicy {
                    eps_b: *eps_b,
                    eps_s: *eps_s,
                    x: *x,
                }
                .validate(),
                PolicySpec::Adaptive { params } => params.validate(),
                PolicySpec::External { fallback } => fallback.validate(),
            };
            policy_check.map_err(|e| SimError::invalid(field("policy"), e.to_string()))?;
            if let Some(p) = &agent.penalty {
                p.validate()
                    .map_err(|e| SimError::invalid(field("penalty"), e.to_string()))?;
            }
        }
        if self.external_slots().len() > 1 {
            return Err(SimError::invalid("agents", "at most one external agent"));
        }
        Ok(())
    }
}

/// Sets the value at a dotted path (`agents.0.policy.eps_b=-0.5`). The value
/// is read as JSON when it parses, otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SimError::Config(format!("override `{assignment}` is not key=value")))?;
    let new_value: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(SimError::Config(format!("bad override path `{path}`")));
    }
    let mut cur = root;
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_string(), new_value);
                    return Ok(());
                }
                map.entry((*key).to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| {
                    SimError::Config(format!("override path `{path}`: `{key}` is not an index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    SimError::Config(format!("override path `{path}`: index {idx} out of {len}"))
                })?;
                if last {
                    *slot = new_value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(SimError::Config(format!(
                    "override path `{path}`: `{key}` is not inside an object or array"
                )))
            }
        };
    }
    Ok(())
}
