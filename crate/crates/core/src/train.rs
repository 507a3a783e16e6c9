//! Loss, Adam optimization, the full-batch training loop, and random search.
//!
//! Training is transductive full batch: every epoch runs a forward pass on
//! all nodes, takes the loss on the train mask, applies one Adam step, and
//! evaluates on the validation mask. Early stopping watches validation
//! accuracy (ties keep the earlier epoch) and the best parameters are
//! restored at the end. All stochasticity flows from the single seed in
//! [`TrainConfig`].

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptKind;
use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::model::{Grads, Model, ModelConfig, ModelInputs, ModelParams, RegTerms, Variant};
use crate::rng::{derive_seed, rng_for, stream};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Everything a model variant needs from a dataset, computed once and shared
/// read-only across trials.
pub struct Prepared<'a> {
    pub basis: Option<crate::spectral::SpectralBasis>,
    pub featspec: Option<crate::spectral::FeatureSpectral>,
    pub reduced: Option<Array2<f64>>,
    pub labels: &'a [usize],
    pub classes: usize,
    raw: Option<&'a Array2<f64>>,
}

impl<'a> Prepared<'a> {
    /// Assemble inputs for `cfg`, reusing `basis_full` / `featspec_full`
    /// (computed at some larger component count) by truncation when given.
    pub fn new(
        bundle: &'a crate::dataset::DatasetBundle,
        cfg: &ModelConfig,
        basis_full: Option<&crate::spectral::SpectralBasis>,
        featspec_full: Option<&crate::spectral::FeatureSpectral>,
    ) -> Result<Prepared<'a>> {
        cfg.validate()?;
        let basis = if cfg.variant.uses_basis() {
            Some(match basis_full {
                Some(b) => b.truncate(cfg.d)?,
                None => {
                    let a = crate::graph::sym_normalize(&bundle.labeled.graph);
                    crate::spectral::truncated_spectrum(&a, cfg.d)?
                }
            })
        } else {
            None
        };
        let featspec = if cfg.variant.uses_feature_spectrum() {
            Some(match featspec_full {
                Some(f) => f.truncate(cfg.k)?,
                None => crate::spectral::feature_spectrum(&bundle.features, cfg.k)?,
            })
        } else {
            None
        };
        let reduced = if cfg.variant == Variant::EigenConcat || cfg.use_order0 {
            Some(crate::model::reduced_features(
                featspec.as_ref().expect("feature spectrum present"),
                cfg.cx_mode,
            ))
        } else {
            None
        };
        let raw = if cfg.variant.uses_basis() {
            None
        } else {
            Some(&bundle.features.x)
        };
        Ok(Prepared {
            basis,
            featspec,
            reduced,
            labels: &bundle.labeled.labels,
            classes: bundle.classes(),
            raw,
        })
    }

    pub fn inputs(&self) -> ModelInputs<'_> {
        ModelInputs {
            basis: self.basis.as_ref(),
            featspec: self.featspec.as_ref(),
            reduced: self.reduced.as_ref(),
            raw_features: self.raw,
        }
    }
}

/// Optimization schedule and regularization strengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub l1_lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 0.0,
            l1_lambda: 0.0,
            max_epochs: 300,
            patience: 30,
            lr_decay: 0.99,
            decay_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate at a 0-based epoch: `lr * decay^(epoch / every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Masked mean cross-entropy. Probabilities are clamped below at 1e-12
/// before the log.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("cross-entropy needs a nonempty mask"));
    }
    let mut total = 0.0;
    for &i in mask {
        if i >= probs.nrows() {
            return Err(Error::invalid(format!("mask index {i} out of range")));
        }
        let p = probs[[i, labels[i]]].max(1e-12);
        total -= p.ln();
    }
    Ok(total / mask.len() as f64)
}

/// Fraction of argmax-correct rows over the mask; argmax ties resolve to the
/// lowest class id.
pub fn accuracy(probs: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("accuracy needs a nonempty mask"));
    }
    let mut correct = 0usize;
    for &i in mask {
        if i >= probs.nrows() {
            return Err(Error::invalid(format!("mask index {i} out of range")));
        }
        let row = probs.row(i);
        let mut arg = 0usize;
        let mut best = row[0];
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > best {
                best = p;
                arg = j;
            }
        }
        correct += usize::from(arg == labels[i]);
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// Accuracy of a parameter set on a fixed embedding (evaluation pass, no
/// dropout).
pub fn evaluate(
    params: &ModelParams,
    embedding: &Array2<f64>,
    labels: &[usize],
    mask: &[usize],
) -> Result<f64> {
    let cache = crate::model::head_forward(embedding, &params.head, 0.0, None, false, None)?;
    accuracy(&cache.probs, labels, mask)
}

/// One bias-corrected Adam update over a flat parameter slice. Weight decay
/// is L2-coupled: added to the gradient before the moment updates. `t` is
/// the 1-based step count.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    lr: f64,
    weight_decay: f64,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Adam moment accumulators, flat, mirroring [`ModelParams::flatten`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let len = params.flatten().len();
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step_count(&self) -> usize {
        self.t
    }
}

/// One Adam step on a full parameter set. Aborts on non-finite gradients.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let g = grads.flatten();
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let mut p = params.flatten();
    if p.len() != g.len() || p.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "parameter/gradient/state length mismatch ({} / {} / {})",
            p.len(),
            g.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    adam_update(&mut p, &g, &mut state.m, &mut state.v, state.t, lr, weight_decay);
    params.assign_flat(&p)
}

/// Accuracy and loss track of one epoch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Outcome of one training run. Test accuracy is reported at the epoch that
/// achieved the best validation accuracy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitReport {
    pub best_val_acc: f64,
    pub test_acc_at_best_val: f64,
    /// Validation accuracy re-measured after the best parameters were
    /// restored; equals `best_val_acc` by construction.
    pub restored_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub curve: Vec<EpochStat>,
    pub seed: u64,
    /// Final (restored) adaptation parameters, for the analysis tooling.
    pub adaptation: crate::adaptation::AdaptationParams,
}

/// Validation-accuracy early stopping: strict improvement resets the
/// counter, so ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping { patience, best: f64::NEG_INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Record one epoch's validation accuracy; true when it improved the best.
    pub fn observe(&mut self, epoch: usize, val_acc: f64) -> bool {
        if val_acc > self.best {
            self.best = val_acc;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Full-batch training with early stopping and best-checkpoint restore.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    inputs: ModelInputs<'_>,
    labels: &[usize],
    classes: usize,
    split: &SplitSpec,
) -> Result<FitReport> {
    fit_with_params(model_cfg, train_cfg, inputs, labels, classes, split).map(|(r, _)| r)
}

/// [`fit`], additionally returning the restored best parameters (for
/// checkpointing and probes).
pub fn fit_with_params(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    inputs: ModelInputs<'_>,
    labels: &[usize],
    classes: usize,
    split: &SplitSpec,
) -> Result<(FitReport, ModelParams)> {
    let mut init_rng = rng_for(train_cfg.seed, stream::INIT, 0);
    let mut model = Model::new(model_cfg.clone(), inputs, classes, &mut init_rng)?;
    split.validate(model.n())?;
    // Canonical mask order: summation order must not depend on how a splits
    // file happens to list its indices.
    let split = split.sorted();
    let split = &split;

    let reg = RegTerms {
        weight_decay: train_cfg.weight_decay,
        l1_lambda: if model_cfg.adapt_kind == AdaptKind::Frozen {
            0.0
        } else {
            train_cfg.l1_lambda
        },
    };
    let mut dropout_rng = rng_for(train_cfg.seed, stream::DROPOUT, 0);
    let mut state = AdamState::new(&model.params);

    let mut curve = Vec::new();
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut best_params: Option<ModelParams> = None;
    let mut epochs_run = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        epochs_run = epoch + 1;
        let lr = train_cfg.lr_at(epoch);

        let fwd = model.forward(true, None, Some(&mut dropout_rng))?;
        let loss = model.loss(&fwd, labels, &split.train, reg)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let grads = model.backward(&fwd, labels, &split.train, reg)?;
        adam_step(&mut model.params, &grads, &mut state, lr, 0.0)?;

        // Evaluate the updated parameters without dropout.
        let eval = model.forward(false, None, None)?;
        let train_acc = accuracy(&eval.head.probs, labels, &split.train)?;
        let val_acc = accuracy(&eval.head.probs, labels, &split.val)?;
        curve.push(EpochStat { epoch, lr, loss, train_acc, val_acc });

        if stopper.observe(epoch, val_acc) {
            best_params = Some(model.params.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }

    model.params = best_params.expect("at least one epoch ran");
    let final_eval = model.forward(false, None, None)?;
    let restored_val_acc = accuracy(&final_eval.head.probs, labels, &split.val)?;
    let test_acc = accuracy(&final_eval.head.probs, labels, &split.test)?;

    let report = FitReport {
        best_val_acc: stopper.best(),
        test_acc_at_best_val: test_acc,
        restored_val_acc,
        best_epoch: stopper.best_epoch(),
        epochs_run,
        curve,
        seed: train_cfg.seed,
        adaptation: model.params.adaptation.clone(),
    };
    Ok((report, model.params))
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// Accuracy summary in the conventional percent form, e.g. `57.11 (1.94)`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2} ({:.2})", 100.0 * mean, 100.0 * std)
}

/// Hyperparameter grid. Empty dimensions keep the base configuration value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub hidden: Vec<usize>,
    pub adapt_kinds: Vec<AdaptKind>,
    pub l1: Vec<f64>,
    pub bins: Vec<usize>,
}

impl SearchSpace {
    /// Default grid for a variant: shared rates/widths everywhere,
    /// adaptation kind for the eigen variants, L1 strengths and bin counts
    /// (10%..90% of the node count, clamped to the component count) for the
    /// bin-tied variant.
    pub fn defaults(variant: Variant, n: usize, d: usize) -> SearchSpace {
        let lr = vec![0.001, 0.003, 0.005, 0.008, 0.01];
        let dropout = vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let weight_decay = vec![1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1];
        let hidden = match variant {
            Variant::Lr => vec![],
            _ => vec![16, 32, 64],
        };
        let adapt_kinds = match variant {
            Variant::Lr | Variant::Mlp => vec![],
            _ => vec![AdaptKind::C1, AdaptKind::C2],
        };
        let (l1, bins) = if variant == Variant::Regeigen {
            let l1 = vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
            let mut bins: Vec<usize> = (1..=9)
                .map(|t| ((0.1 * t as f64 * n as f64).round() as usize).clamp(1, d))
                .collect();
            bins.dedup();
            (l1, bins)
        } else {
            (vec![], vec![])
        };
        SearchSpace { lr, dropout, weight_decay, hidden, adapt_kinds, l1, bins }
    }

    fn dims(&self) -> [usize; 7] {
        [
            self.lr.len().max(1),
            self.dropout.len().max(1),
            self.weight_decay.len().max(1),
            self.hidden.len().max(1),
            self.adapt_kinds.len().max(1),
            self.l1.len().max(1),
            self.bins.len().max(1),
        ]
    }

    /// Total number of grid points.
    pub fn size(&self) -> usize {
        self.dims().iter().product()
    }

    /// Materialize grid point `index` onto base configurations.
    pub fn instantiate(
        &self,
        index: usize,
        base_model: &ModelConfig,
        base_train: &TrainConfig,
    ) -> (ModelConfig, TrainConfig) {
        let dims = self.dims();
        let mut rest = index;
        let mut coord = [0usize; 7];
        for (c, dim) in coord.iter_mut().zip(dims.iter()) {
            *c = rest % dim;
            rest /= dim;
        }
        let mut model = base_model.clone();
        let mut train = base_train.clone();
        if !self.lr.is_empty() {
            train.lr = self.lr[coord[0]];
        }
        if !self.dropout.is_empty() {
            model.dropout = self.dropout[coord[1]];
        }
        if !self.weight_decay.is_empty() {
            train.weight_decay = self.weight_decay[coord[2]];
        }
        if !self.hidden.is_empty() {
            model.hidden = self.hidden[coord[3]];
        }
        if !self.adapt_kinds.is_empty() {
            model.adapt_kind = self.adapt_kinds[coord[4]];
        }
        if !self.l1.is_empty() {
            train.l1_lambda = self.l1[coord[5]];
        }
        if !self.bins.is_empty() {
            model.num_bins = Some(self.bins[coord[6]]);
        }
        (model, train)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub grid_index: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub summary: String,
}

/// Search report: the winning configuration with its per-split reports, plus
/// a summary row for every evaluated grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub best: TrialOutcome,
    pub best_reports: Vec<FitReport>,
    pub evaluated: Vec<TrialOutcome>,
}

/// Seeded random search over the grid: `trials` distinct points (the whole
/// grid when `trials` covers it), each evaluated on every split; the winner
/// maximizes mean validation accuracy, ties broken toward the lower grid
/// index. Per-trial seeds depend only on (seed, grid index, split index), so
/// parallel and serial execution agree.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    space: &SearchSpace,
    inputs: ModelInputs<'_>,
    labels: &[usize],
    classes: usize,
    splits: &[SplitSpec],
    trials: usize,
    seed: u64,
) -> Result<SweepReport> {
    if splits.is_empty() {
        return Err(Error::invalid("sweep needs at least one split"));
    }
    if trials == 0 {
        return Err(Error::invalid("sweep needs at least one trial"));
    }
    let total = space.size();
    let chosen: Vec<usize> = if trials >= total {
        (0..total).collect()
    } else {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(seed, stream::SEARCH, 0);
        let mut all: Vec<usize> = (0..total).collect();
        all.shuffle(&mut rng);
        let mut picked: Vec<usize> = all.into_iter().take(trials).collect();
        picked.sort_unstable();
        picked
    };

    let results: Result<Vec<(TrialOutcome, Vec<FitReport>)>> = chosen
        .par_iter()
        .map(|&grid_index| {
            let (model, mut train) = space.instantiate(grid_index, base_model, base_train);
            let combo_seed = derive_seed(seed, stream::SEARCH, grid_index as u64 + 1);
            let reports: Result<Vec<FitReport>> = splits
                .par_iter()
                .enumerate()
                .map(|(si, split)| {
                    let mut t = train.clone();
                    t.seed = derive_seed(combo_seed, stream::SPLITS, si as u64);
                    fit(&model, &t, inputs, labels, classes, split)
                })
                .collect();
            let reports = reports?;
            let vals: Vec<f64> = reports.iter().map(|r| r.best_val_acc).collect();
            let tests: Vec<f64> = reports.iter().map(|r| r.test_acc_at_best_val).collect();
            let (mean_val, _) = mean_std(&vals);
            let (mean_test, std_test) = mean_std(&tests);
            train.seed = seed;
            Ok((
                TrialOutcome {
                    grid_index,
                    model,
                    train,
                    mean_val_acc: mean_val,
                    mean_test_acc: mean_test,
                    std_test_acc: std_test,
                    summary: format_mean_std(mean_test, std_test),
                },
                reports,
            ))
        })
        .collect();
    let mut results = results?;

    let winner = results
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.0.mean_val_acc
                .partial_cmp(&b.0.mean_val_acc)
                .unwrap()
                .then(b.0.grid_index.cmp(&a.0.grid_index))
        })
        .map(|(i, _)| i)
        .expect("nonempty results");
    let (best, best_reports) = results.swap_remove(winner);
    let mut evaluated: Vec<TrialOutcome> = results.into_iter().map(|(t, _)| t).collect();
    evaluated.push(best.clone());
    evaluated.sort_by_key(|t| t.grid_index);

    Ok(SweepReport { best, best_reports, evaluated })
}
