//! Scenario configuration: TOML files with an explicit schema version,
//! dotted-path overrides and cross-field validation.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("invalid TOML: {0}")]
    Syntax(String),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid override `{0}` (expected dotted.path=value)")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkMode {
    /// Partial synchrony: arbitrary delays before GST, Δ-bounded afterwards.
    M1,
    /// Synchrony: every honest message arrives within Δ.
    M2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyModel {
    /// Uniform on (0, Δ].
    Uniform,
    /// Always exactly Δ.
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PreGstPolicy {
    /// Everything sent before GST lands at GST + Δ.
    Maximal,
    /// Uniform on (0, GST + Δ − send].
    Uniform,
    /// Normal latency inside each group, maximal delay across groups.
    /// Nodes missing from every group are isolated.
    Partition { groups: Vec<Vec<u32>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NetworkConfig {
    pub mode: NetworkMode,
    #[serde(default)]
    pub gst: f64,
    #[serde(default = "default_latency")]
    pub latency: LatencyModel,
    #[serde(default = "default_pre_gst")]
    pub pre_gst: PreGstPolicy,
}

fn default_latency() -> LatencyModel {
    LatencyModel::Uniform
}

fn default_pre_gst() -> PreGstPolicy {
    PreGstPolicy::Maximal
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParticipationMode {
    U1,
    U2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Churn {
    /// Minimum fraction of honest miners online at every instant.
    pub online_floor: f64,
    pub mean_online: f64,
    pub mean_offline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OfflineInterval {
    pub node: u32,
    pub from: f64,
    /// End of the outage; absent means for the rest of the run.
    #[serde(default)]
    pub to: Option<f64>,
}

impl OfflineInterval {
    pub fn until(&self) -> f64 {
        self.to.unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ParticipationConfig {
    pub mode: ParticipationMode,
    #[serde(default)]
    pub churn: Option<Churn>,
    #[serde(default)]
    pub offline: Vec<OfflineInterval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", rename_all_fields = "kebab-case", deny_unknown_fields)]
pub enum MinerStrategy {
    None,
    /// Mines on the public tip and publishes at once.
    Passive,
    PrivateChain {
        /// Honest blocks past the fork point required before a release.
        release_depth: u64,
        /// Abandon the fork once it trails the public chain by this many blocks.
        give_up: u64,
    },
    GrandpaRollback {
        give_up: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakPolicy {
    KeepIncumbent,
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScriptedVote {
    pub at: f64,
    pub kind: crate::ba::VoteKind,
    pub iteration: u64,
    pub period: u64,
    /// Tip of the voted chain; absent means ⊥.
    #[serde(default)]
    pub value: Option<u64>,
    /// Index among the byzantine checkpointers.
    pub voter: usize,
    /// Recipient node ids; empty means every honest checkpointer.
    #[serde(default)]
    pub to: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckpointerBehavior {
    Silent,
    Equivocate,
    Scripted { votes: Vec<ScriptedVote> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AdversaryConfig {
    pub miner: MinerStrategy,
    #[serde(default = "default_tie_break")]
    pub tie_break: TieBreakPolicy,
    #[serde(default = "default_behavior")]
    pub checkpointers: CheckpointerBehavior,
}

fn default_tie_break() -> TieBreakPolicy {
    TieBreakPolicy::KeepIncumbent
}

fn default_behavior() -> CheckpointerBehavior {
    CheckpointerBehavior::Silent
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            miner: MinerStrategy::None,
            tie_break: default_tie_break(),
            checkpointers: default_behavior(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct VariantFlags {
    #[serde(default = "yes")]
    pub enforce_p2: bool,
    #[serde(default = "yes")]
    pub enforce_p3: bool,
    #[serde(default)]
    pub checkpoint_depth_override: Option<u64>,
}

fn yes() -> bool {
    true
}

impl Default for VariantFlags {
    fn default() -> Self {
        VariantFlags { enforce_p2: true, enforce_p3: true, checkpoint_depth_override: None }
    }
}

impl VariantFlags {
    pub fn is_default(&self) -> bool {
        *self == VariantFlags::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Checker {
    Cp0,
    FinSafety,
    AdaSafety,
    CommonPrefix,
    ChainQuality,
    Nesting,
    FinLiveness,
    AdaLiveness,
    DeliveryBound,
    Capability,
    VoteMultiplicity,
    NextQuorumStructure,
    DeadlockFreedom,
}

impl Checker {
    pub const ALL: [Checker; 13] = [
        Checker::Cp0,
        Checker::FinSafety,
        Checker::AdaSafety,
        Checker::CommonPrefix,
        Checker::ChainQuality,
        Checker::Nesting,
        Checker::FinLiveness,
        Checker::AdaLiveness,
        Checker::DeliveryBound,
        Checker::Capability,
        Checker::VoteMultiplicity,
        Checker::NextQuorumStructure,
        Checker::DeadlockFreedom,
    ];

    /// The kebab-case name used in configs.
    pub fn name(self) -> &'static str {
        match self {
            Checker::Cp0 => "cp0",
            Checker::FinSafety => "fin-safety",
            Checker::AdaSafety => "ada-safety",
            Checker::CommonPrefix => "common-prefix",
            Checker::ChainQuality => "chain-quality",
            Checker::Nesting => "nesting",
            Checker::FinLiveness => "fin-liveness",
            Checker::AdaLiveness => "ada-liveness",
            Checker::DeliveryBound => "delivery-bound",
            Checker::Capability => "capability",
            Checker::VoteMultiplicity => "vote-multiplicity",
            Checker::NextQuorumStructure => "next-quorum-structure",
            Checker::DeadlockFreedom => "deadlock-freedom",
        }
    }
}

impl std::fmt::Display for Checker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Checker {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Checker::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown checker `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CheckerConfig {
    #[serde(default = "all_checkers")]
    pub enabled: Vec<Checker>,
    #[serde(default)]
    pub must_pass: Vec<Checker>,
    /// Liveness rate c (blocks per unit time) for the k′-deep rule.
    #[serde(default)]
    pub ada_rate: f64,
    /// Liveness slack c′ (blocks) for the k′-deep rule.
    #[serde(default)]
    pub ada_slack: f64,
    /// Liveness rate c for the checkpoint rule.
    #[serde(default)]
    pub fin_rate: f64,
    #[serde(default)]
    pub fin_slack: f64,
    /// Multiplier C on GST after which post-partition guarantees are checked.
    #[serde(default = "default_recovery")]
    pub recovery_factor: f64,
    /// Extra settling time added to C·GST.
    #[serde(default)]
    pub recovery_offset: f64,
    /// Chain-quality window length in blocks; defaults to k.
    #[serde(default)]
    pub quality_window: Option<u64>,
}

fn all_checkers() -> Vec<Checker> {
    Checker::ALL.to_vec()
}

fn default_recovery() -> f64 {
    4.0
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            enabled: all_checkers(),
            must_pass: Vec::new(),
            ada_rate: 0.0,
            ada_slack: 0.0,
            fin_rate: 0.0,
            fin_slack: 0.0,
            recovery_factor: default_recovery(),
            recovery_offset: 0.0,
            quality_window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    /// Horizon in units of Δ.
    pub duration: f64,
    #[serde(default = "one")]
    pub delta: f64,
    /// Total mining rate λ per unit time.
    pub lambda: f64,
    pub beta: f64,
    pub n_miners: usize,
    pub n_checkpointers: usize,
    pub t: usize,
    #[serde(default)]
    pub byzantine_checkpointers: usize,
    pub k: u64,
    pub k_prime: u64,
    #[serde(default = "default_kappa")]
    pub kappa_sim: u64,
    /// Recency parameter d; defaults to 8Δ·⌈√κ⌉.
    #[serde(default)]
    pub d_recency: Option<f64>,
    /// Inter-checkpoint interval e; defaults to 10·d.
    #[serde(default)]
    pub e: Option<f64>,
    pub network: NetworkConfig,
    pub participation: ParticipationConfig,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub variant: VariantFlags,
    /// Length of the post-horizon flush window (mining stops, every message lands).
    #[serde(default)]
    pub flush: Option<f64>,
    #[serde(default)]
    pub checkers: CheckerConfig,
    /// Permit configurations outside the protocol's fault model.
    #[serde(default)]
    pub out_of_model: bool,
}

fn one() -> f64 {
    1.0
}

fn default_kappa() -> u64 {
    16
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, ConfigError> {
        if let Some(v) = value.get("schema-version").and_then(toml::Value::as_integer) {
            if v != SCHEMA_VERSION as i64 {
                return Err(ConfigError::Schema(v as u32));
            }
        }
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| ConfigError::Field { path: e.path().to_string(), message: e.inner().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    /// Applies `a.b.c=value` overrides to an already parsed config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = toml::Value::try_from(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn quorum(&self) -> usize {
        2 * self.t + 1
    }

    pub fn d_recency(&self) -> f64 {
        self.d_recency.unwrap_or(8.0 * self.delta * (self.kappa_sim as f64).sqrt().ceil())
    }

    pub fn e(&self) -> f64 {
        self.e.unwrap_or(10.0 * self.d_recency())
    }

    pub fn horizon(&self) -> f64 {
        self.duration * self.delta
    }

    pub fn checkpoint_depth(&self) -> u64 {
        self.variant.checkpoint_depth_override.unwrap_or(self.k)
    }

    pub fn lambda_delta(&self) -> f64 {
        self.lambda * self.delta
    }

    /// Effective GST: zero under synchrony.
    pub fn gst(&self) -> f64 {
        match self.network.mode {
            NetworkMode::M1 => self.network.gst,
            NetworkMode::M2 => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        if !(self.delta > 0.0) || !(self.lambda > 0.0) || !(self.duration >= 0.0) {
            return bad("delta and lambda must be positive and duration non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta = {} must lie in [0, 1)", self.beta));
        }
        if self.n_miners == 0 {
            return bad("at least one honest miner is required".into());
        }
        if self.n_checkpointers < 3 * self.t + 1 {
            return bad(format!("n-checkpointers = {} is below 3t + 1 = {}", self.n_checkpointers, 3 * self.t + 1));
        }
        if self.byzantine_checkpointers > self.n_checkpointers {
            return bad("more byzantine checkpointers than checkpointers".into());
        }
        if self.byzantine_checkpointers > self.t && !self.out_of_model {
            return bad(format!(
                "byzantine-checkpointers = {} exceeds t = {} (set out-of-model = true to allow)",
                self.byzantine_checkpointers, self.t
            ));
        }
        if self.k == 0 || self.k_prime == 0 {
            return bad("k and k-prime must be at least 1".into());
        }
        if self.e() < 10.0 * self.d_recency() && !self.out_of_model {
            return bad(format!("e = {} must be at least 10·d = {}", self.e(), 10.0 * self.d_recency()));
        }
        if self.network.mode == NetworkMode::M1 && self.network.gst < 0.0 {
            return bad("gst must be non-negative".into());
        }
        let n_nodes = (self.n_miners + self.n_checkpointers) as u32;
        if let PreGstPolicy::Partition { groups } = &self.network.pre_gst {
            if groups.iter().flatten().any(|&n| n >= n_nodes) {
                return bad("partition group names an unknown node".into());
            }
        }
        if let Some(c) = &self.participation.churn {
            if self.participation.mode != ParticipationMode::U2 {
                return bad("churn requires participation mode u2".into());
            }
            if !(0.0..=1.0).contains(&c.online_floor) || !(c.mean_online > 0.0) || !(c.mean_offline > 0.0) {
                return bad("churn needs a floor in [0, 1] and positive mean durations".into());
            }
        }
        if self.participation.mode == ParticipationMode::U1 && !self.participation.offline.is_empty() {
            return bad("offline intervals require participation mode u2".into());
        }
        for o in &self.participation.offline {
            if o.node >= n_nodes || !(o.from < o.until()) {
                return bad(format!("bad offline interval for node {}", o.node));
            }
        }
        if let MinerStrategy::GrandpaRollback { .. } = self.adversary.miner {
            if self.variant.checkpoint_depth_override.is_none() {
                return bad("the rollback attack requires variant.checkpoint-depth-override".into());
            }
        }
        if self.flush.is_some_and(|f| !(f >= 0.0)) {
            return bad("flush window must be non-negative".into());
        }
        Ok(())
    }
}

/// Parses the right-hand side of an override as TOML, falling back to a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let mut cur = root;
    for key in &keys[..keys.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| ConfigError::Override(spec.to_string()))?;
        cur = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur.as_table_mut().ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    table.insert(keys[keys.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}
