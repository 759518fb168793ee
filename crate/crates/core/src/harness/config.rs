use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::SamplerKind;
use crate::env::{
    load_reward_table, BaseLandscape, GridReward, GridSpec, GridWorld, RewardFn, SeqSpec,
    SequenceReward, SequenceTask, TaskGraph, REWARD_FLOOR,
};
use crate::error::{Error, Result};
use crate::gfn::{ExplorationConfig, NetSpec};
use crate::nn::Activation;
use crate::ocgfn::{OcVariant, FAILURE_REWARD};

use super::metrics::{MetricsConfig, ModeRule};

/// Environment variable prefixed to relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "OCFLOW_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Finetune,
    Convert,
    Eval,
    OracleCheck,
    Mcmc,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Convert => "convert",
            Phase::Eval => "eval",
            Phase::OracleCheck => "oracle-check",
            Phase::Mcmc => "mcmc",
        }
    }
}

/// Task family. Each carries its own hyperparameter defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Hypergrid with the corner-mode reward.
    Grid,
    /// Bit strings built from `word_bits`-bit words.
    Bits,
    /// 4-symbol sequences (TF-binding-like).
    Tfbind,
    /// 20-symbol sequences (peptide-like).
    Amp,
}

/// Downstream learner of the finetune phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneModel {
    /// Amortized conversion of a pre-trained conditional model.
    Amortized,
    /// Trajectory-balance GFlowNet trained from scratch.
    Tb,
}

/// Everything a phase needs. Serialized as flat TOML keys; unknown keys are
/// rejected. Fields not relevant to the chosen task or phase are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub phase: Phase,
    pub task: TaskKind,

    pub side: usize,
    pub ndim: usize,
    pub n_bits: usize,
    pub word_bits: u32,
    pub vocab: usize,
    pub length: usize,

    pub reward_beta: f64,
    pub reward_floor: f64,
    pub landscape_seed: u64,
    pub landscape_modes: usize,
    pub landscape_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_table: Option<PathBuf>,

    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub rnd_hidden: Vec<usize>,
    pub rnd_embed: usize,
    pub rnd_coef: f64,
    pub log_z_lr: f64,
    /// Steps at which the trained model's lr is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,

    pub batch_size: usize,
    pub epsilon: f64,
    pub temperature: f64,
    pub q_epsilon: f64,
    pub q_temperature: f64,

    pub variant: OcVariant,
    pub failure_reward: f64,
    pub replay_capacity: usize,
    pub replay_transitions: usize,
    pub finetune_model: FinetuneModel,

    pub steps: usize,
    pub eval_every: usize,
    pub eval_outcomes: usize,
    pub samples: usize,
    pub eval_l1: bool,
    pub top_k: usize,
    /// Reward threshold for grid modes; for sequence landscapes, the fraction
    /// of the peak landscape value (before the exponent) a mode must reach.
    pub mode_threshold: f64,
    pub mode_radius: usize,

    pub mcmc_chains: usize,
    pub mcmc_burn_in: usize,

    /// Sanity bounds checked at the end of a phase.
    pub min_success_rate: f64,
    pub max_l1: f64,

    pub seeds: Vec<u64>,
    /// Pre-training artifact consumed by finetune, convert and eval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Defaults for a task family at its reference scale.
    pub fn defaults(task: TaskKind) -> Self {
        let mut c = Self {
            phase: Phase::Pretrain,
            task,
            side: 16,
            ndim: 2,
            n_bits: 16,
            word_bits: 2,
            vocab: 4,
            length: 8,
            reward_beta: 1.0,
            reward_floor: REWARD_FLOOR,
            landscape_seed: 0,
            landscape_modes: 8,
            landscape_decay: 0.5,
            reward_table: None,
            hidden: vec![256, 256],
            activation: Activation::LeakyRelu,
            lr: 1e-3,
            rnd_hidden: vec![256, 256],
            rnd_embed: 64,
            rnd_coef: 1.0,
            log_z_lr: 1e-1,
            lr_milestones: Vec::new(),
            lr_gamma: 0.1,
            batch_size: 16,
            epsilon: 0.0005,
            temperature: 1.0,
            q_epsilon: 0.05,
            q_temperature: 2.0,
            variant: OcVariant::Full,
            failure_reward: FAILURE_REWARD,
            replay_capacity: 4096,
            replay_transitions: 64,
            finetune_model: FinetuneModel::Amortized,
            steps: 20_000,
            eval_every: 500,
            eval_outcomes: 256,
            samples: 200_000,
            eval_l1: false,
            top_k: 100,
            mode_threshold: 2.0,
            mode_radius: 1,
            mcmc_chains: 16,
            mcmc_burn_in: 0,
            min_success_rate: 0.0,
            max_l1: 2.0,
            seeds: vec![0],
            pretrained: None,
            output_dir: PathBuf::from("runs"),
        };
        match task {
            TaskKind::Grid => {}
            TaskKind::Bits => {
                c.hidden = vec![2048, 2048];
                c.activation = Activation::Relu;
                c.lr = 5e-3;
                c.reward_beta = 3.0;
                c.steps = 50_000;
            }
            TaskKind::Tfbind => {
                c.hidden = vec![2048, 2048];
                c.activation = Activation::Relu;
                c.lr = 1e-4;
                c.epsilon = 0.001;
                c.batch_size = 32;
                c.reward_beta = 3.0;
                c.steps = 5000;
            }
            TaskKind::Amp => {
                c.vocab = 20;
                c.length = 50;
                c.hidden = vec![2048, 2048];
                c.activation = Activation::Relu;
                c.lr = 1e-3;
                c.epsilon = 0.01;
                c.reward_beta = 3.0;
            }
        }
        if task != TaskKind::Grid {
            c.mode_threshold = 0.5;
        }
        c
    }

    /// Reads flat TOML text: the `task` key picks the defaults, every other
    /// key overrides one field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::from_table(table, &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Merges `table` and then the `key=value` overrides onto the task
    /// defaults. Values are TOML literals; bare words are read as strings.
    pub fn from_table(mut table: toml::Table, overrides: &[(String, String)]) -> Result<Self> {
        for (key, raw) in overrides {
            table.insert(key.clone(), parse_value(raw)?);
        }
        let task: TaskKind = match table.get("task") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("task: {e}")))?,
            None => TaskKind::Grid,
        };
        let mut merged = toml::Table::try_from(Self::defaults(task))
            .map_err(|e| Error::Config(format!("defaults: {e}")))?;
        merged.extend(table);
        let config: Self = merged
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Names of every configurable key.
    pub fn keys() -> Vec<String> {
        let mut keys: Vec<String> = toml::Table::try_from(Self::defaults(TaskKind::Grid))
            .expect("defaults serialize")
            .keys()
            .cloned()
            .collect();
        keys.extend(["reward_table".to_string(), "pretrained".to_string()]);
        keys.sort();
        keys
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.build_env()?;
        if !(self.reward_beta >= 1.0) || !(self.reward_floor > 0.0) {
            return bad(format!(
                "reward exponent must be >= 1 and floor > 0 (got {}, {})",
                self.reward_beta, self.reward_floor
            ));
        }
        if self.hidden.is_empty()
            || self.hidden.contains(&0)
            || self.rnd_hidden.contains(&0)
            || self.rnd_embed == 0
        {
            return bad("layer widths must be positive".into());
        }
        for (what, lr) in [("lr", self.lr), ("log_z_lr", self.log_z_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{what} must be positive, got {lr}"));
            }
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad(format!("lr_gamma must be in (0,1], got {}", self.lr_gamma));
        }
        if !(self.rnd_coef >= 0.0) {
            return bad(format!(
                "intrinsic coefficient must be >= 0, got {}",
                self.rnd_coef
            ));
        }
        self.explore()?;
        self.q_explore()?;
        if !(self.failure_reward > 0.0 && self.failure_reward < 1.0) {
            return bad(format!(
                "failure reward must be in (0,1), got {}",
                self.failure_reward
            ));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.mcmc_chains == 0 {
            return bad("batch size, replay capacity and chain count must be positive".into());
        }
        if self.eval_outcomes == 0 || self.samples == 0 {
            return bad("evaluation sizes must be positive".into());
        }
        if self.steps > 0 && self.mcmc_burn_in >= self.steps && self.phase == Phase::Mcmc {
            return bad(format!(
                "burn-in {} must be below {} steps",
                self.mcmc_burn_in, self.steps
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(0.0..=1.0).contains(&self.min_success_rate) || !(self.max_l1 >= 0.0) {
            return bad("sanity bounds out of range".into());
        }
        if matches!(self.task, TaskKind::Grid) && self.reward_table.is_some() {
            return bad("reward tables apply to sequence tasks only".into());
        }
        if !(self.landscape_decay > 0.0 && self.landscape_decay < 1.0) {
            return bad(format!(
                "landscape decay must be in (0,1), got {}",
                self.landscape_decay
            ));
        }
        self.metrics_config_unchecked().validate()
    }

    /// Learning rate in effect at `step` (1-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| m <= step).count();
        self.lr * self.lr_gamma.powi(k as i32)
    }

    pub fn explore(&self) -> Result<ExplorationConfig> {
        ExplorationConfig::new(self.epsilon, self.temperature)
    }

    pub fn q_explore(&self) -> Result<ExplorationConfig> {
        ExplorationConfig::new(self.q_epsilon, self.q_temperature)
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec::new(self.hidden.clone(), self.activation, self.lr)
    }

    pub fn rnd_spec(&self) -> NetSpec {
        NetSpec::new(self.rnd_hidden.clone(), self.activation, self.lr)
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        match self.task {
            TaskKind::Grid => SamplerKind::Flat,
            _ => SamplerKind::Autoregressive,
        }
    }

    pub fn seq_spec(&self) -> Result<SeqSpec> {
        match self.task {
            TaskKind::Grid => Err(Error::Config("grid task has no sequence spec".into())),
            TaskKind::Bits => SeqSpec::bits(self.n_bits, self.word_bits),
            TaskKind::Tfbind | TaskKind::Amp => SeqSpec::new(self.vocab, self.length),
        }
    }

    pub fn build_env(&self) -> Result<Box<dyn TaskGraph>> {
        Ok(match self.task {
            TaskKind::Grid => Box::new(GridWorld::new(GridSpec::new(self.side, self.ndim)?)),
            _ => Box::new(SequenceTask::new(self.seq_spec()?)),
        })
    }

    /// Short task label, e.g. `grid-16x16` or `bits-16-k2`.
    pub fn task_label(&self) -> String {
        match self.task {
            TaskKind::Grid => format!("grid-{}", vec![self.side.to_string(); self.ndim].join("x")),
            TaskKind::Bits => format!("bits-{}-k{}", self.n_bits, self.word_bits),
            TaskKind::Tfbind | TaskKind::Amp => format!("seq-v{}-l{}", self.vocab, self.length),
        }
    }

    pub fn build_reward(&self) -> Result<Box<dyn RewardFn>> {
        if self.task == TaskKind::Grid {
            return Ok(Box::new(GridReward::with_beta(self.side, self.reward_beta)));
        }
        let spec = self.seq_spec()?;
        Ok(Box::new(match &self.reward_table {
            Some(path) => {
                let task = SequenceTask::new(spec);
                let table = load_reward_table(path, &task)?;
                SequenceReward::new(
                    BaseLandscape::Table(table),
                    self.reward_beta,
                    self.reward_floor,
                )
            }
            None => SequenceReward::landscape(
                &spec,
                self.landscape_seed,
                self.landscape_modes,
                self.landscape_decay,
                self.reward_beta,
                self.reward_floor,
            )?,
        }))
    }

    fn metrics_config_unchecked(&self) -> MetricsConfig {
        let mode_rule = match (self.task, &self.reward_table) {
            (TaskKind::Grid, _) | (_, Some(_)) => ModeRule::Threshold(self.mode_threshold),
            _ => {
                let centers = self
                    .seq_spec()
                    .and_then(|spec| {
                        SequenceReward::landscape(
                            &spec,
                            self.landscape_seed,
                            self.landscape_modes,
                            self.landscape_decay,
                            self.reward_beta,
                            self.reward_floor,
                        )
                    })
                    .map(|r| r.centers().map(<[_]>::to_vec).unwrap_or_default())
                    .unwrap_or_default();
                // Bumps peak at 1; the fraction applies before exponentiation.
                ModeRule::NearCenters {
                    centers,
                    radius: self.mode_radius,
                    min_reward: self.mode_threshold.powf(self.reward_beta),
                }
            }
        };
        MetricsConfig {
            mode_rule,
            top_k: self.top_k,
            eval_every: self.eval_every.max(1),
        }
    }

    pub fn metrics_config(&self) -> Result<MetricsConfig> {
        let m = self.metrics_config_unchecked();
        m.validate()?;
        Ok(m)
    }

    /// `output_dir`, prefixed with the output root when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }
}

fn parse_value(raw: &str) -> Result<toml::Value> {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("parsed key")),
        Err(_) => Ok(toml::Value::String(raw.to_string())),
    }
}
