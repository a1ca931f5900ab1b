//! Training protocol: early-stopped mini-batch Adam, random hyperparameter
//! search with repeated fits, and a learning-rate range test.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{bce, Activation, AdamState, Arch, InputShape, Mode, Model, ModelSpec, Params, DROP_GRID, HIDDEN_GRID};
use crate::rng;
use crate::session::Label;
use crate::stats::roc_auc;

pub const BATCH_SIZES: [usize; 3] = [16, 32, 64];
pub const ETA_GRID: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
/// Samples per gradient shard; fixed so results do not depend on thread count.
pub const SHARD: usize = 8;
pub const LR_SMOOTHING: f64 = 0.98;
pub const LR_DIVERGENCE: f64 = 4.0;

/// One encoded input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: Label,
}

/// Runs `jobs` independent closures and returns their results in index order.
pub trait Executor: Sync {
    fn run<R: Send>(&self, jobs: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R>;
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn run<R: Send>(&self, jobs: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..jobs).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAuc,
}

impl Monitor {
    fn improves(self, value: f64, best: f64) -> bool {
        match self {
            Monitor::ValLoss => value < best,
            Monitor::ValAuc => value > best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub monitor: Monitor,
}

impl TrainConfig {
    /// 90 epochs, patience 20 on validation loss.
    pub fn recurrent(eta: f64, batch_size: usize, seed: u64) -> TrainConfig {
        TrainConfig { eta, batch_size, max_epochs: 90, patience: 20, seed, monitor: Monitor::ValLoss }
    }

    /// 300 epochs, patience 30 on validation AUC.
    pub fn conv(eta: f64, batch_size: usize, seed: u64) -> TrainConfig {
        TrainConfig { eta, batch_size, max_epochs: 300, patience: 30, seed, monitor: Monitor::ValAuc }
    }

    pub fn for_arch(arch: Arch, eta: f64, batch_size: usize, seed: u64) -> TrainConfig {
        if arch.is_recurrent() {
            TrainConfig::recurrent(eta, batch_size, seed)
        } else {
            TrainConfig::conv(eta, batch_size, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(alloc::format!("learning rate {} must be positive", self.eta)));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return Err(invalid(alloc::format!("batch size {} not in {{16, 32, 64}}", self.batch_size)));
        }
        if self.patience >= self.max_epochs {
            return Err(invalid(alloc::format!(
                "patience {} must be below max_epochs {}",
                self.patience,
                self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Patience-based stopping rule; epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub monitor: Monitor,
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopStep {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(monitor: Monitor, patience: usize) -> EarlyStopping {
        EarlyStopping { monitor, patience, best: None, best_epoch: 0, epoch: 0 }
    }

    /// Record the metric of the next epoch. Non-finite values never improve.
    pub fn observe(&mut self, value: f64) -> StopStep {
        self.epoch += 1;
        let improved = value.is_finite() && self.best.is_none_or(|b| self.monitor.improves(value, b));
        if improved {
            self.best = Some(value);
            self.best_epoch = self.epoch;
        }
        StopStep { improved, stop: self.epoch - self.best_epoch >= self.patience }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 0 until a finite value has been observed.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replay a metric sequence through the stopping rule.
/// Returns `(epochs run, best epoch, stopped early)`.
pub fn trace_stopping(monitor: Monitor, patience: usize, max_epochs: usize, values: &[f64]) -> (usize, usize, bool) {
    let mut es = EarlyStopping::new(monitor, patience);
    for (i, &v) in values.iter().take(max_epochs).enumerate() {
        if es.observe(v).stop {
            return (i + 1, es.best_epoch(), i + 1 < max_epochs);
        }
    }
    (values.len().min(max_epochs), es.best_epoch(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_auc: Vec<Option<f64>>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub monitor: Monitor,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }

    pub fn best_val_auc(&self) -> Option<f64> {
        self.val_auc[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub auc: Option<f64>,
    pub scores: Vec<f64>,
}

/// Dropout-free scores, mean cross-entropy and AUC (when both classes occur).
pub fn evaluate<E: Executor>(model: &Model, set: &[Example], exec: &E) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    let chunks = set.len().div_ceil(SHARD);
    let parts = exec.run(chunks, &|c| {
        set[c * SHARD..((c + 1) * SHARD).min(set.len())]
            .iter()
            .map(|e| model.probability(&e.input))
            .collect::<Result<Vec<f64>>>()
    });
    let mut scores = Vec::with_capacity(set.len());
    for part in parts {
        scores.extend(part?);
    }
    let loss = scores.iter().zip(set).map(|(&p, e)| bce(p, e.label.as_f64())).sum::<f64>() / set.len() as f64;
    let labels: Vec<Label> = set.iter().map(|e| e.label).collect();
    let auc = match roc_auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation { loss, auc, scores })
}

/// One Adam step on a mini-batch; gradient shards may run in parallel.
fn train_step<E: Executor>(model: &mut Model, adam: &mut AdamState, batch: &[&Example], exec: &E) -> Result<f64> {
    let masks = model.draw_masks(batch.len());
    let scale = 1.0 / batch.len() as f64;
    let shards = batch.len().div_ceil(SHARD);
    let frozen: &Model = model;
    let parts = exec.run(shards, &|s| {
        let range = s * SHARD..((s + 1) * SHARD).min(batch.len());
        let inputs: Vec<&[f64]> = batch[range.clone()].iter().map(|e| e.input.as_slice()).collect();
        let labels: Vec<f64> = batch[range.clone()].iter().map(|e| e.label.as_f64()).collect();
        frozen.loss_and_grads_with_masks(&inputs, &labels, &masks[range], scale)
    });
    let mut loss = 0.0;
    let mut grads: Option<Params> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        match grads.as_mut() {
            Some(acc) => acc.add_assign(&g)?,
            None => grads = Some(g),
        }
    }
    adam.step(model, &grads.expect("nonempty batch"))?;
    Ok(loss)
}

fn check_set(model: &Model, set: &[Example], name: &'static str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptySet(name));
    }
    let expected = model.spec.input_shape.len();
    if let Some(e) = set.iter().find(|e| e.input.len() != expected) {
        return Err(Error::ShapeMismatch { expected, got: e.input.len() });
    }
    Ok(())
}

/// Train with per-epoch seeded shuffling and early stopping, then restore the
/// best epoch's parameters.
pub fn fit<E: Executor>(
    mut model: Model,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    exec: &E,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    check_set(&model, train, "train set")?;
    check_set(&model, val, "validation set")?;
    if config.monitor == Monitor::ValAuc {
        let pos = val.iter().filter(|e| e.label.is_positive()).count();
        if pos == 0 || pos == val.len() {
            return Err(Error::SingleClass);
        }
    }
    model.reseed_dropout(config.seed);
    let mut adam = AdamState::new(&model.params, config.eta)?;
    let mut stopper = EarlyStopping::new(config.monitor, config.patience);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_auc: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        monitor: config.monitor,
    };
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = rng::stream(config.seed, "fit/shuffle", &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        model.set_mode(Mode::Train);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            epoch_loss += train_step(&mut model, &mut adam, &batch, exec)? * batch.len() as f64;
        }
        model.set_mode(Mode::Infer);
        let eval = evaluate(&model, val, exec)?;
        history.train_loss.push(epoch_loss / train.len() as f64);
        history.val_loss.push(eval.loss);
        history.val_auc.push(eval.auc);
        let metric = match config.monitor {
            Monitor::ValLoss => eval.loss,
            Monitor::ValAuc => eval.auc.unwrap_or(f64::NAN),
        };
        let step = stopper.observe(metric);
        if step.improved {
            best_params = model.params.clone();
        }
        if step.stop {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    // a run that never saw a finite metric keeps epoch 1
    history.best_epoch = stopper.best_epoch().max(1);
    if stopper.best_epoch() > 0 {
        model.params = best_params;
    }
    model.set_mode(Mode::Infer);
    Ok((model, history))
}

/// Grids sampled by the random search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub eta_grid: Vec<f64>,
    pub hidden_grid: Vec<usize>,
    pub drop_grid: Vec<f64>,
    pub batch_grid: Vec<usize>,
    pub budget: usize,
}

impl SearchSpace {
    pub fn recurrent(budget: usize) -> SearchSpace {
        SearchSpace {
            eta_grid: ETA_GRID.to_vec(),
            hidden_grid: HIDDEN_GRID.to_vec(),
            drop_grid: DROP_GRID.to_vec(),
            batch_grid: BATCH_SIZES.to_vec(),
            budget,
        }
    }

    /// Convnet search around a fixed learning rate (usually a range-test suggestion).
    pub fn conv(eta: f64, budget: usize) -> SearchSpace {
        SearchSpace {
            eta_grid: vec![eta],
            hidden_grid: vec![HIDDEN_GRID[0]],
            drop_grid: DROP_GRID.to_vec(),
            batch_grid: BATCH_SIZES.to_vec(),
            budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::EmptySpace("budget"));
        }
        if self.eta_grid.is_empty() {
            return Err(Error::EmptySpace("eta grid"));
        }
        if self.hidden_grid.is_empty() {
            return Err(Error::EmptySpace("hidden grid"));
        }
        if self.drop_grid.is_empty() {
            return Err(Error::EmptySpace("dropout grid"));
        }
        if self.batch_grid.is_empty() {
            return Err(Error::EmptySpace("batch grid"));
        }
        Ok(())
    }
}

/// One sampled configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial: usize,
    pub eta: f64,
    pub hidden_n: usize,
    pub drop_rate: f64,
    pub batch_size: usize,
}

/// Draw `budget` configurations uniformly from the grids.
pub fn plan_search(space: &SearchSpace, master_seed: u64) -> Result<Vec<TrialConfig>> {
    space.validate()?;
    let mut rng = rng::stream(master_seed, "search/sample", &[]);
    Ok((0..space.budget)
        .map(|trial| TrialConfig {
            trial,
            eta: space.eta_grid[rng.random_range(0..space.eta_grid.len())],
            hidden_n: space.hidden_grid[rng.random_range(0..space.hidden_grid.len())],
            drop_rate: space.drop_grid[rng.random_range(0..space.drop_grid.len())],
            batch_size: space.batch_grid[rng.random_range(0..space.batch_grid.len())],
        })
        .collect())
}

/// Fixed parts of every model and fit in a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBase {
    pub arch: Arch,
    pub input_shape: InputShape,
    pub activation: Activation,
    pub max_epochs: usize,
    pub patience: usize,
    pub monitor: Monitor,
}

impl SearchBase {
    /// Epoch cap, patience and monitor for the architecture family.
    pub fn for_arch(arch: Arch, input_shape: InputShape) -> SearchBase {
        let c = TrainConfig::for_arch(arch, 1e-3, 32, 0);
        SearchBase {
            arch,
            input_shape,
            activation: Activation::default(),
            max_epochs: c.max_epochs,
            patience: c.patience,
            monitor: c.monitor,
        }
    }

    pub fn model_spec(&self, trial: &TrialConfig, seed: u64) -> ModelSpec {
        ModelSpec {
            arch: self.arch,
            hidden_n: trial.hidden_n,
            drop_rate: trial.drop_rate,
            input_shape: self.input_shape,
            seed,
            activation: self.activation,
        }
    }

    pub fn train_config(&self, trial: &TrialConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            eta: trial.eta,
            batch_size: trial.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            monitor: self.monitor,
        }
    }
}

pub fn fit_seed(master_seed: u64, trial: usize, repeat: usize) -> u64 {
    rng::derive_seed(master_seed, "search/fit", &[trial as u64, repeat as u64])
}

/// Millisecond wall clock for trial logs; `&|| 0.0` when timing is not wanted.
pub type Clock = dyn Fn() -> f64 + Sync;

/// One fit of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub trial: usize,
    pub repeat: usize,
    pub seed: u64,
    pub config: TrialConfig,
    pub history: TrainHistory,
    pub best_val_loss: f64,
    pub best_val_auc: Option<f64>,
    pub wall_ms: f64,
}

/// Train repeat `repeat` of a trial with its derived seed.
#[allow(clippy::too_many_arguments)]
pub fn run_fit<E: Executor>(
    base: &SearchBase,
    trial: &TrialConfig,
    repeat: usize,
    master_seed: u64,
    train: &[Example],
    val: &[Example],
    exec: &E,
    clock: &Clock,
) -> Result<(FitRecord, Model)> {
    let start = clock();
    let seed = fit_seed(master_seed, trial.trial, repeat);
    let model = Model::new(base.model_spec(trial, seed))?;
    let (model, history) = fit(model, train, val, &base.train_config(trial, seed), exec)?;
    let record = FitRecord {
        trial: trial.trial,
        repeat,
        seed,
        config: trial.clone(),
        best_val_loss: history.best_val_loss(),
        best_val_auc: history.best_val_auc(),
        history,
        wall_ms: clock() - start,
    };
    Ok((record, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub config: TrialConfig,
    pub mean_val_loss: f64,
}

/// Average best-epoch validation loss per trial, in trial order.
pub fn summarize_trials(trials: &[TrialConfig], records: &[FitRecord]) -> Vec<TrialSummary> {
    trials
        .iter()
        .map(|t| {
            let losses: Vec<f64> = records.iter().filter(|r| r.trial == t.trial).map(|r| r.best_val_loss).collect();
            let mean = if losses.is_empty() { f64::NAN } else { losses.iter().sum::<f64>() / losses.len() as f64 };
            TrialSummary { config: t.clone(), mean_val_loss: mean }
        })
        .collect()
}

/// Minimum mean validation loss; ties go to smaller eta, then smaller n,
/// then the earlier trial. Non-finite means rank last.
pub fn select_best(summaries: &[TrialSummary]) -> Result<usize> {
    let key = |s: &TrialSummary| if s.mean_val_loss.is_finite() { s.mean_val_loss } else { f64::INFINITY };
    (0..summaries.len())
        .min_by(|&a, &b| {
            let (sa, sb) = (&summaries[a], &summaries[b]);
            key(sa)
                .total_cmp(&key(sb))
                .then(sa.config.eta.total_cmp(&sb.config.eta))
                .then(sa.config.hidden_n.cmp(&sb.config.hidden_n))
                .then(sa.config.trial.cmp(&sb.config.trial))
        })
        .ok_or(Error::EmptySpace("no trials"))
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: TrialSummary,
    /// Model of the winning trial's repeat with the lowest validation loss.
    pub best_model: Model,
    pub best_record: FitRecord,
    pub trials: Vec<TrialSummary>,
    /// `budget * k` records ordered by (trial, repeat).
    pub records: Vec<FitRecord>,
}

/// Random search: `budget` sampled configurations, each fitted `k` times.
/// Fits are independent jobs on the executor; the outcome does not depend on
/// execution order.
#[allow(clippy::too_many_arguments)]
pub fn random_search<E: Executor>(
    base: &SearchBase,
    space: &SearchSpace,
    k: usize,
    master_seed: u64,
    train: &[Example],
    val: &[Example],
    exec: &E,
    clock: &Clock,
) -> Result<SearchOutcome> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let trials = plan_search(space, master_seed)?;
    let jobs = trials.len() * k;
    let results = exec.run(jobs, &|j| run_fit(base, &trials[j / k], j % k, master_seed, train, val, exec, clock));
    let mut records = Vec::with_capacity(jobs);
    let mut models = Vec::with_capacity(jobs);
    for r in results {
        let (rec, model) = r?;
        records.push(rec);
        models.push(model);
    }
    let summaries = summarize_trials(&trials, &records);
    let winner = select_best(&summaries)?;
    let (idx, _) = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.trial == winner)
        .min_by(|a, b| a.1.best_val_loss.total_cmp(&b.1.best_val_loss).then(a.1.repeat.cmp(&b.1.repeat)))
        .expect("winner has records");
    Ok(SearchOutcome {
        best: summaries[winner].clone(),
        best_model: models.swap_remove(idx),
        best_record: records[idx].clone(),
        trials: summaries,
        records,
    })
}

/// Loss curve of a learning-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSweep {
    pub etas: Vec<f64>,
    pub raw_loss: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub diverged: bool,
    pub suggestion: f64,
}

/// Exponential learning-rate sweep driven by `step`, which trains one
/// mini-batch at the given rate and returns its loss.
///
/// Stops early once the smoothed loss exceeds four times its running minimum
/// and suggests one tenth of the rate at the steepest smoothed descent,
/// or `eta_min` when the curve never descends. The first tenth of the sweep
/// is EMA warm-up and is not searched.
pub fn run_lr_sweep(
    eta_min: f64,
    eta_max: f64,
    steps: usize,
    mut step: impl FnMut(f64) -> Result<f64>,
) -> Result<LrSweep> {
    if !(eta_min > 0.0 && eta_min < eta_max && eta_max.is_finite()) {
        return Err(invalid(alloc::format!("need 0 < eta_min < eta_max, got {eta_min} and {eta_max}")));
    }
    if steps < 2 {
        return Err(invalid("range test needs at least 2 steps"));
    }
    let ratio = libm::log(eta_max / eta_min);
    let mut sweep =
        LrSweep { etas: Vec::new(), raw_loss: Vec::new(), smoothed: Vec::new(), diverged: false, suggestion: eta_min };
    let mut avg = 0.0;
    let mut min = f64::INFINITY;
    for i in 0..steps {
        let eta = eta_min * libm::exp(ratio * i as f64 / (steps - 1) as f64);
        let loss = step(eta)?;
        avg = LR_SMOOTHING * avg + (1.0 - LR_SMOOTHING) * loss;
        let smooth = avg / (1.0 - libm::pow(LR_SMOOTHING, (i + 1) as f64));
        if !smooth.is_finite() || (i > 0 && smooth > LR_DIVERGENCE * min) {
            sweep.diverged = true;
            break;
        }
        min = min.min(smooth);
        sweep.etas.push(eta);
        sweep.raw_loss.push(loss);
        sweep.smoothed.push(smooth);
    }
    let mut steepest = 0.0;
    for i in steps.div_ceil(10)..sweep.smoothed.len().saturating_sub(1) {
        let slope = (sweep.smoothed[i + 1] - sweep.smoothed[i]) / libm::log(sweep.etas[i + 1] / sweep.etas[i]);
        // ignore rounding drift of the bias-corrected average
        if slope < steepest && slope < -1e-9 * sweep.smoothed[i].abs() {
            steepest = slope;
            sweep.suggestion = (sweep.etas[i] / 10.0).clamp(eta_min, eta_max);
        }
    }
    Ok(sweep)
}

/// Range test on a fresh model with Adam, cycling through seeded shuffles of
/// the training set.
pub fn lr_range_test<E: Executor>(
    spec: &ModelSpec,
    train: &[Example],
    eta_min: f64,
    eta_max: f64,
    steps: usize,
    batch_size: usize,
    exec: &E,
) -> Result<LrSweep> {
    let mut model = Model::new(spec.clone())?;
    check_set(&model, train, "train set")?;
    if batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    model.set_mode(Mode::Train);
    let mut adam = AdamState::new(&model.params, eta_min)?;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut pass = 0u64;
    run_lr_sweep(eta_min, eta_max, steps, |eta| {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size.min(train.len()) {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng::stream(spec.seed, "lr/shuffle", &[pass]));
                pass += 1;
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        adam.eta = eta;
        train_step(&mut model, &mut adam, &batch, exec)
    })
}
