//! Alternating critic/classifier training and test-set evaluation.

use std::time::Instant;

use advloss_autodiff::{Graph, Tensor, TensorError, Var};
use advloss_core::{epsilon_weighted, get_loss, ComponentLoss, CoreError, GeneratorVariant};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{make_variant, DataError, Dataset, Variant, CLASSES};
use crate::models::{BatchStats, Discriminator, Generator};
use crate::objective::{critic_objective, generator_objective, penalty_term, sample_penalty_points, split_halves, Pairs, PenaltySpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] CoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1_g: f64,
    pub beta1_d: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { alpha: 1e-3, beta1_g: 0.0, beta1_d: 0.0, beta2: 0.9, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DanConfig {
    pub loss: String,
    /// Replaces the loss's own `h` when set.
    pub generator: Option<GeneratorVariant>,
    pub epsilon: f64,
    pub penalty: PenaltySpec,
    pub spectral_norm: bool,
    pub optimizer: OptimizerConfig,
    pub batch: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub dataset: Variant,
    /// Train on a seeded uniform subset of this many samples.
    pub train_subset: Option<usize>,
    pub seed: u64,
}

impl Default for DanConfig {
    fn default() -> Self {
        Self {
            loss: "classic_nonsaturating".into(),
            generator: None,
            epsilon: 1.0,
            penalty: PenaltySpec::none(),
            spectral_norm: false,
            optimizer: OptimizerConfig::default(),
            batch: 64,
            steps: 100_000,
            eval_every: 100,
            dataset: Variant::Standard,
            train_subset: None,
            seed: 0,
        }
    }
}

// Independent random streams, one per purpose.
const STREAM_INIT: u64 = 1;
const STREAM_BATCHES: u64 = 2;
const STREAM_PENALTY: u64 = 3;
const STREAM_SUBSET: u64 = 4;
const STREAM_VARIANT: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn stream_seed(seed: u64, id: u64) -> u64 {
    use rand::RngCore;
    stream(seed, id).next_u64()
}

impl DanConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let p = &self.penalty;
        let checks = [
            (self.batch > 0, "batch must be positive"),
            (self.eval_every > 0, "eval_every must be positive"),
            (self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be positive"),
            (p.lambda >= 0.0, "lambda must be non-negative"),
            (p.k > 0.0, "k must be positive"),
            (p.c > 0.0, "c must be positive"),
            (self.optimizer.alpha > 0.0, "alpha must be positive"),
            ((0.0..1.0).contains(&self.optimizer.beta2), "beta2 must be in [0, 1)"),
            ((-1.0..1.0).contains(&self.optimizer.beta1_g), "beta1_g must be in (-1, 1)"),
            ((-1.0..1.0).contains(&self.optimizer.beta1_d), "beta1_d must be in (-1, 1)"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(TrainError::Config((*msg).into())),
            None => Ok(()),
        }
    }

    /// The catalog loss with the generator override and weight applied.
    pub fn resolve_loss(&self) -> Result<ComponentLoss, TrainError> {
        let mut loss = get_loss(&self.loss)?;
        if let Some(v) = self.generator {
            loss = loss.with_generator(v);
        }
        if self.epsilon != 1.0 {
            loss = epsilon_weighted(&loss, self.epsilon)?;
        }
        Ok(loss)
    }

    /// Hex SHA-256 of the config's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Builds the training set this config asks for from the standard one.
    pub fn training_set(&self, standard: &Dataset) -> Result<Dataset, TrainError> {
        let data = match self.dataset {
            Variant::Standard => standard.clone(),
            v => make_variant(standard, v, stream_seed(self.seed, STREAM_VARIANT))?,
        };
        Ok(match self.train_subset {
            Some(n) => data.subset(n, stream_seed(self.seed, STREAM_SUBSET)),
            None => data,
        })
    }
}

/// Adam with bias correction. `beta1` may be negative.
#[derive(Clone, Debug)]
pub struct Adam {
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], alpha: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { alpha, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.alpha * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Critic,
    Generator,
}

/// Where a run stopped on a non-finite value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultInfo {
    pub step: usize,
    pub phase: Phase,
    pub op: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub series: Vec<EvalPoint>,
    pub final_error: f64,
    pub wall_time_secs: f64,
    pub config_hash: String,
    pub fault: Option<FaultInfo>,
}

impl RunRecord {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.series == other.series && self.final_error == other.final_error && self.config_hash == other.config_hash && self.fault == other.fault
    }
}

/// Index of the first largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `probs` (`[N, 10]`) whose argmax differs from `labels`.
pub fn error_rate(probs: &Tensor, labels: &[u8]) -> f64 {
    let wrong = probs.data().chunks_exact(CLASSES).zip(labels).filter(|(row, &l)| argmax(row) != l as usize).count();
    wrong as f64 / labels.len().max(1) as f64
}

const EVAL_CHUNK: usize = 500;

/// Power iterations per critic update.
pub const SPECTRAL_ITERS: usize = 1;

/// Test error of `gen` in evaluation mode (running batch-norm statistics).
pub fn evaluate(gen: &Generator, test: &Dataset) -> Result<f64, TensorError> {
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let probs = gen.predict(test.image_batch(chunk))?;
        let labels: Vec<u8> = chunk.iter().map(|&i| test.label(i) as u8).collect();
        wrong += (error_rate(&probs, &labels) * chunk.len() as f64).round() as usize;
    }
    Ok(wrong as f64 / test.len().max(1) as f64)
}

/// The two networks and their optimisers.
pub struct DanState {
    pub gen: Generator,
    pub critic: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
}

impl DanState {
    pub fn new(config: &DanConfig) -> Self {
        let mut rng = stream(config.seed, STREAM_INIT);
        let gen = Generator::new(&mut rng);
        let critic = Discriminator::new(&mut rng, config.spectral_norm);
        let o = &config.optimizer;
        let opt_g = Adam::new(&gen.params.values, o.alpha, o.beta1_g, o.beta2, o.eps);
        let opt_d = Adam::new(&critic.params.values, o.alpha, o.beta1_d, o.beta2, o.eps);
        Self { gen, critic, opt_g, opt_d }
    }
}

/// Losses observed during one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub critic: f64,
    pub penalty: f64,
    pub generator: f64,
}

/// Locates the first non-finite node when the objective or a gradient is
/// non-finite. A NaN or infinity anywhere upstream reaches one of them.
fn fault_of(g: &Graph, objective: Var, grads: &[Var], step: usize, phase: Phase) -> Option<FaultInfo> {
    let clean = g.value(objective).is_finite() && grads.iter().all(|&v| g.value(v).is_finite());
    if clean {
        return None;
    }
    let op = g.fault().map_or_else(|| "unknown".to_string(), |f| f.op);
    Some(FaultInfo { step, phase, op })
}

fn values<'a>(g: &'a Graph, vars: &[Var]) -> Vec<&'a Tensor> {
    vars.iter().map(|&v| g.value(v)).collect()
}

/// One critic update followed by one classifier update on the same batch.
///
/// On a non-finite value the update of that phase is skipped and the fault
/// returned.
pub fn train_step(
    state: &mut DanState,
    loss: &ComponentLoss,
    penalty: &PenaltySpec,
    real: &Pairs,
    penalty_rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<Result<StepLosses, FaultInfo>, TensorError> {
    // Classifier forward, reused for the fake labels of the critic step.
    let mut ga = Graph::new();
    let gp = state.gen.params.attach(&mut ga, true);
    let x = ga.constant(real.images.clone());
    let out = state.gen.forward(&mut ga, &gp, x, true)?;
    let stats: BatchStats = out.stats.expect("training mode");
    let fake = Pairs { images: real.images.clone(), labels: ga.value(out.probs).clone() };

    // Critic step.
    let est = state.critic.refresh_spectral(SPECTRAL_ITERS)?;
    let mut gd = Graph::new();
    let dp = state.critic.params.attach(&mut gd, true);
    let b = real.labels.shape()[0];
    let both_x = Tensor::new(&[2 * b, 28, 28, 1], [real.images.data(), fake.images.data()].concat())?;
    let both_y = Tensor::new(&[2 * b, CLASSES], [real.labels.data(), fake.labels.data()].concat())?;
    let (xs, ys) = (gd.constant(both_x), gd.constant(both_y));
    let scores = state.critic.forward(&mut gd, &dp, xs, ys, est.as_deref())?;
    let (sr, sf) = split_halves(&mut gd, scores)?;
    let obj = critic_objective(&mut gd, loss, sr, sf)?;
    let points = sample_penalty_points(penalty.kind, real, &fake, penalty.c, penalty_rng);
    let pen = penalty_term(&mut gd, penalty, &state.critic, &dp, est.as_deref(), &points)?;
    let total = match pen {
        Some(p) => gd.add(obj, p)?,
        None => obj,
    };
    let grads = gd.grad(total, &dp, false)?;
    if let Some(f) = fault_of(&gd, total, &grads, step, Phase::Critic) {
        return Ok(Err(f));
    }
    let critic_loss = gd.value(obj).item();
    let penalty_value = pen.map_or(0.0, |p| gd.value(p).item());
    let grads = values(&gd, &grads);
    state.opt_d.step(&mut state.critic.params.values, &grads);
    drop(gd);

    // Classifier step against the updated critic. Spectral estimates come
    // from a throwaway copy of the power-iteration state.
    let est = match &state.critic.spectral {
        Some(_) => state.critic.clone().refresh_spectral(SPECTRAL_ITERS)?,
        None => None,
    };
    let dp = state.critic.params.attach(&mut ga, false);
    let real_scores = if loss.pointwise {
        None
    } else {
        let y = ga.constant(real.labels.clone());
        Some(state.critic.forward(&mut ga, &dp, x, y, est.as_deref())?)
    };
    let fake_scores = state.critic.forward(&mut ga, &dp, x, out.probs, est.as_deref())?;
    let obj = generator_objective(&mut ga, loss, real_scores.unwrap_or(fake_scores), fake_scores)?;
    let grads = ga.grad(obj, &gp, false)?;
    if let Some(f) = fault_of(&ga, obj, &grads, step, Phase::Generator) {
        return Ok(Err(f));
    }
    let generator_loss = ga.value(obj).item();
    let grads = values(&ga, &grads);
    state.opt_g.step(&mut state.gen.params.values, &grads);
    state.gen.update_running(&stats);

    Ok(Ok(StepLosses { critic: critic_loss, penalty: penalty_value, generator: generator_loss }))
}

/// Cycles through a dataset in seeded random order, reshuffling each epoch.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self { order: (0..n).collect(), pos: n, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Progress report passed to [`train_with`] observers.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub eval: EvalPoint,
    pub losses: StepLosses,
}

pub fn train(config: &DanConfig, data: &Dataset, test: &Dataset) -> Result<RunRecord, TrainError> {
    train_with(config, data, test, |_| {})
}

/// Trains on `data` (already the configured variant and subset, see
/// [`DanConfig::training_set`]) and evaluates on `test` every
/// `eval_every` steps.
pub fn train_with(config: &DanConfig, data: &Dataset, test: &Dataset, mut observe: impl FnMut(&Progress)) -> Result<RunRecord, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let loss = config.resolve_loss()?;
    let start = Instant::now();
    let mut state = DanState::new(config);
    let mut batches = BatchSampler::new(data.len(), stream(config.seed, STREAM_BATCHES));
    let mut penalty_rng = stream(config.seed, STREAM_PENALTY);
    let mut series = Vec::with_capacity(config.steps / config.eval_every);
    let mut fault = None;
    let mut last_eval = None;

    for step in 1..=config.steps {
        let idx = batches.next_batch(config.batch);
        let real = Pairs { images: data.image_batch(&idx), labels: data.onehot_batch(&idx) };
        match train_step(&mut state, &loss, &config.penalty, &real, &mut penalty_rng, step)? {
            Err(f) => {
                fault = Some(f);
                break;
            }
            Ok(losses) => {
                if step % config.eval_every == 0 {
                    let eval = EvalPoint { step, error: evaluate(&state.gen, test)? };
                    series.push(eval);
                    last_eval = Some(step);
                    observe(&Progress { eval, losses });
                }
            }
        }
    }

    let final_error = match (series.last(), last_eval == Some(config.steps)) {
        (Some(p), true) => p.error,
        _ => evaluate(&state.gen, test)?,
    };
    Ok(RunRecord { series, final_error, wall_time_secs: start.elapsed().as_secs_f64(), config_hash: config.hash(), fault })
}
