use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FinetuneModel, Phase, RunConfig};
use super::metrics::{MetricsConfig, SampleLog};
use crate::adapt::{finetune_step, Amortized, FinetuneConfig, NumeratorNet, OutcomeSamplerNet};
use crate::baselines::run_chains;
use crate::env::{RewardFn, State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{
    rollout_batch, ExplorationConfig, FlowModel, ForwardPolicy, GafnModel, HeadLayout, RndPair,
    TbModel,
};
use crate::nn::{AdamConfig, NetCheckpoint};
use crate::ocgfn::{pretrain_step, success_rate, CondFlowModel, PretrainConfig, ReplayDataset};
use crate::oracle::{
    capture_forward, check_amortized_optimum, check_conversion_match, check_mc_consistency,
    check_reachability, check_reward_scale, empirical_distribution, exact_conversion_policy,
    exact_terminal_distribution, l1_distance, numerator_edge_probs, reward_distribution,
    AnalyticConditional, EnumeratedDag, OracleReport, DEFAULT_EDGE_CAP,
};

pub const ARTIFACT_FORMAT: &str = "ocflow-pretrain";
pub const ARTIFACT_VERSION: u32 = 1;

/// One line of a metrics file. Absent metrics serialize as empty cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub seed: u64,
    pub phase: String,
    pub success_rate: Option<f64>,
    pub num_modes: Option<usize>,
    pub top_k: Option<f64>,
    pub l1: Option<f64>,
    pub loss: Option<f64>,
}

/// Everything pre-training leaves behind for the downstream phases.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainArtifact {
    pub format: String,
    pub version: u32,
    pub task: String,
    pub seed: u64,
    pub step: usize,
    pub cond: NetCheckpoint,
    pub gafn: NetCheckpoint,
    pub rnd_target: NetCheckpoint,
    pub rnd_predictor: NetCheckpoint,
    pub rnd_coef: f64,
    pub replay: ReplayDataset,
}

impl PretrainArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let a: Self = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if a.format != ARTIFACT_FORMAT || a.version != ARTIFACT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported artifact {} v{} in {}",
                a.format,
                a.version,
                path.display()
            )));
        }
        Ok(a)
    }

    pub fn cond_model(&self, env: &dyn TaskGraph) -> Result<CondFlowModel> {
        CondFlowModel::restore(env, self.cond.clone())
    }

    pub fn gafn_model(&self, env: &dyn TaskGraph, lr: f64, floor: f64) -> Result<GafnModel> {
        let (net, adam) = self.gafn.clone().restore()?;
        let adam = adam.unwrap_or_else(|| crate::nn::Adam::for_net(AdamConfig::with_lr(lr), &net));
        let flow = FlowModel::from_parts(net, adam, HeadLayout::for_env(env))?;
        let (target, _) = self.rnd_target.clone().restore()?;
        let (predictor, _) = self.rnd_predictor.clone().restore()?;
        Ok(GafnModel {
            flow,
            rnd: RndPair::from_parts(target, predictor, self.rnd_coef, lr)?,
            log_floor: floor.ln(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics_file: PathBuf,
    pub last: Option<MetricsRow>,
    pub artifacts: Vec<PathBuf>,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Machine-readable record of a phase, written as `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub task: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<SeedSummary>,
    pub reports: Vec<String>,
    pub passed: bool,
    pub config: RunConfig,
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_file(path, text.as_bytes())
}

/// Appends rows to a metrics CSV, flushing after each.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    last: Option<MetricsRow>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
            last: None,
        })
    }

    pub fn write(&mut self, row: MetricsRow) -> Result<()> {
        self.inner
            .serialize(&row)
            .and_then(|_| self.inner.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Config(format!("metrics file: {e}")))?;
        self.last = Some(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.last.as_ref()
    }
}

/// Reads a metrics CSV back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics-seed{seed}.csv"))
}

/// Generator for evaluation draws, independent of the training stream.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Uniform evaluation outcomes for a seed.
pub fn eval_outcomes(env: &dyn TaskGraph, n: usize, seed: u64) -> Vec<State> {
    let mut rng = eval_rng(seed);
    rng.set_stream(2);
    (0..n).map(|_| env.random_terminal(&mut rng)).collect()
}

fn due(step: usize, every: usize, last: usize) -> bool {
    step % every == 0 || step == last
}

/// `pretrained` with `{seed}` replaced.
fn pretrained_path(config: &RunConfig, seed: u64) -> Result<PathBuf> {
    let p = config.pretrained.as_ref().ok_or_else(|| {
        Error::Config(format!("phase {} needs `pretrained`", config.phase.name()))
    })?;
    Ok(PathBuf::from(
        p.to_string_lossy().replace("{seed}", &seed.to_string()),
    ))
}

struct Ctx<'a> {
    config: &'a RunConfig,
    env: &'a dyn TaskGraph,
    reward: &'a dyn RewardFn,
    metrics: MetricsConfig,
    dir: PathBuf,
}

impl Ctx<'_> {
    fn row(&self, step: usize, seed: u64) -> MetricsRow {
        MetricsRow {
            step,
            seed,
            phase: self.config.phase.name().into(),
            ..Default::default()
        }
    }

    fn record(
        &self,
        log: &mut SampleLog,
        terminals: impl IntoIterator<Item = State>,
    ) -> Result<()> {
        for x in terminals {
            let r = self.reward.reward(&x)?;
            log.record(&x, r, &self.metrics.mode_rule);
        }
        Ok(())
    }

    fn dag(&self) -> Result<EnumeratedDag> {
        EnumeratedDag::build(self.env, DEFAULT_EDGE_CAP)
    }
}

/// Executes the configured phase for every seed, writing metrics CSVs,
/// checkpoints and `summary.json` under the resolved output directory.
pub fn run_phase(config: &RunConfig) -> Result<PhaseSummary> {
    config.validate()?;
    let env = config.build_env()?;
    let reward = config.build_reward()?;
    let ctx = Ctx {
        config,
        env: env.as_ref(),
        reward: reward.as_ref(),
        metrics: config.metrics_config()?,
        dir: config.resolved_output_dir(),
    };
    fs::create_dir_all(&ctx.dir).map_err(|e| io_error(&ctx.dir, e))?;
    let mut seeds = Vec::new();
    let mut reports = Vec::new();
    for &seed in &config.seeds {
        let path = metrics_path(&ctx.dir, seed);
        let mut out = MetricsWriter::create(&path)?;
        let mut summary = SeedSummary {
            seed,
            metrics_file: path,
            last: None,
            artifacts: Vec::new(),
            passed: true,
            notes: Vec::new(),
        };
        match config.phase {
            Phase::Pretrain => pretrain(&ctx, seed, &mut out, &mut summary)?,
            Phase::Finetune => finetune(&ctx, seed, &mut out, &mut summary)?,
            Phase::Convert => convert(&ctx, seed, &mut out, &mut summary)?,
            Phase::Eval => evaluate(&ctx, seed, &mut out, &mut summary)?,
            Phase::OracleCheck => reports.extend(oracle_check(&ctx, seed, &mut out, &mut summary)?),
            Phase::Mcmc => mcmc(&ctx, seed, &mut out, &mut summary)?,
        }
        summary.last = out.last().cloned();
        seeds.push(summary);
    }
    if !reports.is_empty() {
        write_file(
            &ctx.dir.join("oracle.txt"),
            (reports.join("\n") + "\n").as_bytes(),
        )?;
    }
    let summary = PhaseSummary {
        phase: config.phase,
        task: config.task_label(),
        output_dir: ctx.dir.clone(),
        passed: seeds.iter().all(|s| s.passed),
        seeds,
        reports,
        config: config.clone(),
    };
    write_json(&ctx.dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn check_success(ctx: &Ctx<'_>, rate: f64, summary: &mut SeedSummary) {
    if !(rate >= ctx.config.min_success_rate) {
        summary.passed = false;
        summary.notes.push(format!(
            "success rate {rate:.4} below {}",
            ctx.config.min_success_rate
        ));
    }
}

fn check_l1(ctx: &Ctx<'_>, l1: f64, summary: &mut SeedSummary) {
    if !(l1 <= ctx.config.max_l1) {
        summary.passed = false;
        summary
            .notes
            .push(format!("L1 {l1:.4} above {}", ctx.config.max_l1));
    }
}

fn pretrain(
    ctx: &Ctx<'_>,
    seed: u64,
    out: &mut MetricsWriter,
    summary: &mut SeedSummary,
) -> Result<()> {
    let c = ctx.config;
    let env = ctx.env;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cond = CondFlowModel::new(env, &c.net_spec(), &mut rng);
    let mut gafn = GafnModel::new(
        env,
        &c.net_spec(),
        &c.rnd_spec(),
        c.rnd_embed,
        c.rnd_coef,
        c.reward_floor,
        &mut rng,
    );
    let mut replay = ReplayDataset::new(c.replay_capacity)?;
    let pc = PretrainConfig {
        batch_size: c.batch_size,
        explore: c.explore()?,
        variant: c.variant,
        failure_reward: c.failure_reward,
    };
    let outcomes = eval_outcomes(env, c.eval_outcomes, seed);
    let mut erng = eval_rng(seed);
    let mut rate = success_rate(&cond, &outcomes, env, 1, &mut erng)?;
    if c.steps == 0 {
        out.write(MetricsRow {
            success_rate: Some(rate),
            ..ctx.row(0, seed)
        })?;
    }
    for step in 1..=c.steps {
        cond.set_lr(c.lr_at(step));
        let m = pretrain_step(&mut cond, &mut gafn, env, &mut replay, &pc, &mut rng)?;
        if due(step, ctx.metrics.eval_every, c.steps) {
            rate = success_rate(&cond, &outcomes, env, 1, &mut erng)?;
            out.write(MetricsRow {
                success_rate: Some(rate),
                loss: Some(m.negative_loss),
                ..ctx.row(step, seed)
            })?;
        }
    }
    let artifact = PretrainArtifact {
        format: ARTIFACT_FORMAT.into(),
        version: ARTIFACT_VERSION,
        task: c.task_label(),
        seed,
        step: c.steps,
        cond: cond.checkpoint(),
        gafn: NetCheckpoint::capture(gafn.flow.net(), Some(gafn.flow.adam())),
        rnd_target: NetCheckpoint::capture(gafn.rnd.target(), None),
        rnd_predictor: NetCheckpoint::capture(gafn.rnd.predictor(), None),
        rnd_coef: gafn.rnd.coef,
        replay,
    };
    let path = ctx.dir.join(format!("seed-{seed}")).join("pretrain.json");
    artifact.save(&path)?;
    summary.artifacts.push(path);
    check_success(ctx, rate, summary);
    Ok(())
}

fn load_artifact(ctx: &Ctx<'_>, seed: u64) -> Result<PretrainArtifact> {
    let a = PretrainArtifact::load(&pretrained_path(ctx.config, seed)?)?;
    if a.task != ctx.config.task_label() {
        return Err(Error::Config(format!(
            "artifact was trained on {}, config is {}",
            a.task,
            ctx.config.task_label()
        )));
    }
    Ok(a)
}

fn model_l1(ctx: &Ctx<'_>, dag: &EnumeratedDag, edge_log_probs: &[f64]) -> Result<f64> {
    let got = exact_terminal_distribution(dag, edge_log_probs)?;
    l1_distance(&got.probs, &reward_distribution(dag, ctx.reward)?)
}

fn finetune(
    ctx: &Ctx<'_>,
    seed: u64,
    out: &mut MetricsWriter,
    summary: &mut SeedSummary,
) -> Result<()> {
    let c = ctx.config;
    let env = ctx.env;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dag = if c.eval_l1 { Some(ctx.dag()?) } else { None };
    let mut log = SampleLog::default();
    let mut l1 = None;
    let seed_dir = ctx.dir.join(format!("seed-{seed}"));
    match c.finetune_model {
        FinetuneModel::Amortized => {
            let artifact = load_artifact(ctx, seed)?;
            let cond = artifact.cond_model(env)?;
            let mut model = Amortized {
                numerator: NumeratorNet::new(env, &c.net_spec(), &mut rng),
                sampler: OutcomeSamplerNet::new(env, c.sampler_kind(), &c.net_spec(), &mut rng)?,
            };
            let fc = FinetuneConfig {
                batch_size: c.batch_size,
                explore: c.explore()?,
                q_explore: c.q_explore()?,
                replay_transitions: c.replay_transitions,
            };
            for step in 1..=c.steps {
                model.set_lr(c.lr_at(step));
                let m = finetune_step(
                    &mut model,
                    &cond,
                    ctx.reward,
                    env,
                    Some(&artifact.replay),
                    &fc,
                    &mut rng,
                )?;
                ctx.record(
                    &mut log,
                    m.trajectories.iter().map(|t| t.terminal().clone()),
                )?;
                if due(step, ctx.metrics.eval_every, c.steps) {
                    if let Some(dag) = &dag {
                        l1 = Some(model_l1(
                            ctx,
                            dag,
                            &numerator_edge_probs(dag, env, &model.numerator)?,
                        )?);
                    }
                    out.write(finetune_row(ctx, step, seed, &log, l1, m.loss))?;
                }
            }
            for (name, ckpt) in [
                ("numerator", model.numerator.checkpoint()),
                ("sampler", model.sampler.checkpoint()),
            ] {
                let path = seed_dir.join(format!("{name}.json"));
                write_file(&path, ckpt.to_json()?.as_bytes())?;
                summary.artifacts.push(path);
            }
        }
        FinetuneModel::Tb => {
            let mut tb = TbModel::new(env, &c.net_spec(), c.log_z_lr, &mut rng);
            let explore = c.explore()?;
            for step in 1..=c.steps {
                tb.flow.set_lr(c.lr_at(step));
                let trajs = tb.sample(env, c.batch_size, &explore, &mut rng)?;
                let log_r = trajs
                    .iter()
                    .map(|t| ctx.reward.reward(t.terminal()).map(f64::ln))
                    .collect::<Result<Vec<f64>>>()?;
                let refs: Vec<_> = trajs.iter().collect();
                let loss = tb.update(env, &refs, &log_r)?;
                ctx.record(&mut log, trajs.iter().map(|t| t.terminal().clone()))?;
                if due(step, ctx.metrics.eval_every, c.steps) {
                    if let Some(dag) = &dag {
                        l1 = Some(model_l1(ctx, dag, &capture_forward(dag, env, &tb.flow)?)?);
                    }
                    out.write(finetune_row(ctx, step, seed, &log, l1, loss))?;
                }
            }
            let path = seed_dir.join("tb.json");
            write_file(
                &path,
                NetCheckpoint::capture(tb.flow.net(), Some(tb.flow.adam()))
                    .to_json()?
                    .as_bytes(),
            )?;
            summary.artifacts.push(path);
        }
    }
    if let Some(l1) = l1 {
        check_l1(ctx, l1, summary);
    }
    Ok(())
}

fn finetune_row(
    ctx: &Ctx<'_>,
    step: usize,
    seed: u64,
    log: &SampleLog,
    l1: Option<f64>,
    loss: f64,
) -> MetricsRow {
    MetricsRow {
        num_modes: Some(log.num_modes()),
        top_k: log.top_k(ctx.metrics.top_k),
        l1,
        loss: Some(loss),
        ..ctx.row(step, seed)
    }
}

/// Samples `n` terminals from a forward policy in chunks.
pub fn sample_terminals(
    env: &dyn TaskGraph,
    policy: &dyn ForwardPolicy,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<State>> {
    let mut xs = Vec::with_capacity(n);
    while xs.len() < n {
        let k = (n - xs.len()).min(4096);
        let trajs = rollout_batch(env, k, &ExplorationConfig::off(), rng, |_, states| {
            policy.log_probs(env, states)
        })?;
        xs.extend(trajs.into_iter().map(|t| t.terminal().clone()));
    }
    Ok(xs)
}

fn convert(
    ctx: &Ctx<'_>,
    seed: u64,
    out: &mut MetricsWriter,
    summary: &mut SeedSummary,
) -> Result<()> {
    let env = ctx.env;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let artifact = load_artifact(ctx, seed)?;
    let cond = artifact.cond_model(env)?;
    let dag = ctx.dag()?;
    let table = exact_conversion_policy(&dag, env, &cond, ctx.reward)?;
    let exact_l1 = model_l1(ctx, &dag, &numerator_edge_probs(&dag, env, &table)?)?;
    let xs = sample_terminals(env, &table, ctx.config.samples, &mut rng)?;
    let support: Vec<State> = dag
        .terminals()
        .iter()
        .map(|&t| dag.state(t).clone())
        .collect();
    let emp = empirical_distribution(&support, &xs)?;
    let l1 = l1_distance(&emp, &reward_distribution(&dag, ctx.reward)?)?;
    let mut log = SampleLog::default();
    ctx.record(&mut log, xs)?;
    out.write(MetricsRow {
        num_modes: Some(log.num_modes()),
        top_k: log.top_k(ctx.metrics.top_k),
        l1: Some(l1),
        ..ctx.row(ctx.config.samples, seed)
    })?;
    summary.notes.push(format!(
        "samples={} empirical_l1={l1:.6} exact_l1={exact_l1:.6}",
        ctx.config.samples
    ));
    check_l1(ctx, l1, summary);
    Ok(())
}

fn evaluate(
    ctx: &Ctx<'_>,
    seed: u64,
    out: &mut MetricsWriter,
    summary: &mut SeedSummary,
) -> Result<()> {
    let artifact = load_artifact(ctx, seed)?;
    let cond = artifact.cond_model(ctx.env)?;
    let outcomes = eval_outcomes(ctx.env, ctx.config.eval_outcomes, seed);
    let rate = success_rate(&cond, &outcomes, ctx.env, 1, &mut eval_rng(seed))?;
    out.write(MetricsRow {
        success_rate: Some(rate),
        ..ctx.row(artifact.step, seed)
    })?;
    check_success(ctx, rate, summary);
    Ok(())
}

/// Exact checks with analytic conditional flows. The deviation of each
/// report goes in the `loss` column, one row per check.
fn oracle_check(
    ctx: &Ctx<'_>,
    seed: u64,
    out: &mut MetricsWriter,
    summary: &mut SeedSummary,
) -> Result<Vec<String>> {
    let env = ctx.env;
    let task = ctx.config.task_label();
    let dag = ctx.dag()?;
    let cond = AnalyticConditional::indicator(&dag)?;
    let exact = exact_conversion_policy(&dag, env, &cond, ctx.reward)?;
    let reports: Vec<OracleReport> = vec![
        check_reachability(&dag, env, &task)?,
        check_conversion_match(&dag, env, &cond, ctx.reward, &exact, &task)?,
        check_amortized_optimum(&dag, env, &cond, ctx.reward, &exact, &task)?,
        check_mc_consistency(&dag, env, &cond, ctx.reward, &task)?,
        check_reward_scale(&dag, env, &cond, ctx.reward, 10.0, &task)?,
    ];
    for (i, r) in reports.iter().enumerate() {
        out.write(MetricsRow {
            loss: Some(r.max_deviation),
            ..ctx.row(i, seed)
        })?;
        if !r.passed() {
            summary.passed = false;
            summary.notes.push(r.to_string());
        }
    }
    Ok(reports.iter().map(ToString::to_string).collect())
}

fn mcmc(
    ctx: &Ctx<'_>,
    seed: u64,
    out: &mut MetricsWriter,
    summary: &mut SeedSummary,
) -> Result<()> {
    let c = ctx.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dag_support = if c.eval_l1 {
        let dag = ctx.dag()?;
        let support: Vec<State> = dag
            .terminals()
            .iter()
            .map(|&t| dag.state(t).clone())
            .collect();
        Some((support, reward_distribution(&dag, ctx.reward)?))
    } else {
        None
    };
    let mut log = SampleLog::default();
    let mut kept: Vec<State> = Vec::new();
    let mut rows = Vec::new();
    let mut failure = None;
    let chains = run_chains(
        ctx.env,
        ctx.reward,
        c.mcmc_chains,
        c.steps,
        &mut rng,
        |round, chains| {
            if failure.is_some() {
                return;
            }
            let step = round + 1;
            if round >= c.mcmc_burn_in {
                for ch in chains {
                    log.record(&ch.current, ch.current_reward, &ctx.metrics.mode_rule);
                    if dag_support.is_some() {
                        kept.push(ch.current.clone());
                    }
                }
            }
            if due(step, ctx.metrics.eval_every, c.steps) {
                let l1 = match &dag_support {
                    Some((support, target)) if !kept.is_empty() => {
                        match empirical_distribution(support, &kept)
                            .and_then(|e| l1_distance(&e, target))
                        {
                            Ok(v) => Some(v),
                            Err(e) => {
                                failure = Some(e);
                                return;
                            }
                        }
                    }
                    _ => None,
                };
                rows.push(MetricsRow {
                    num_modes: Some(log.num_modes()),
                    top_k: log.top_k(ctx.metrics.top_k),
                    l1,
                    ..ctx.row(step, seed)
                });
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    for row in rows {
        out.write(row)?;
    }
    let accept: f64 =
        chains.iter().map(|ch| ch.acceptance_rate()).sum::<f64>() / chains.len() as f64;
    summary
        .notes
        .push(format!("mean acceptance rate {accept:.4}"));
    if !(0.0..=1.0).contains(&accept) {
        summary.passed = false;
    }
    if let Some(l1) = out.last().and_then(|r| r.l1) {
        check_l1(ctx, l1, summary);
    }
    Ok(())
}
