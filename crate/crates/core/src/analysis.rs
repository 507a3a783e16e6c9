//! Diagnostic studies: the eigenvector-weight probe, adapted/original
//! eigenvalue ratios, varying-components and varying-labels curves, and
//! model rank tables.
//!
//! Every study emits a common plot-data shape (`x`, `mean`, `std`, `meta`)
//! so any plotting tool can consume the JSON directly.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adaptation::{adapt, AdaptationParams};
use crate::dataset::{DatasetBundle, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{head_backward, head_forward, masked_ce_dlogits, Head, Layer, ModelConfig};
use crate::rng::{derive_seed, rng_for, stream};
use crate::spectral::SpectralBasis;
use crate::train::{fit, mean_std, FitReport, Prepared, TrainConfig};

/// Common plot-data payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotSeries {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub meta: serde_json::Value,
}

/// Moving average with the window clamped to the series length; output
/// length is `len - window + 1`.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let w = window.clamp(1, x.len());
    let mut out = Vec::with_capacity(x.len() - w + 1);
    let mut sum: f64 = x[..w].iter().sum();
    out.push(sum / w as f64);
    for i in w..x.len() {
        sum += x[i] - x[i - w];
        out.push(sum / w as f64);
    }
    out
}

/// Ratio of adapted to original eigenvalues, smoothed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSeries {
    /// `adapt(sigma)[i] / sigma[i]` for every index with sigma above the
    /// cutoff, in spectrum order.
    pub raw: Vec<f64>,
    /// Indices whose sigma fell below the cutoff and were omitted.
    pub omitted_indices: Vec<usize>,
    /// Smoothing window actually used (requested 100, clamped to length).
    pub window: usize,
    pub smoothed: Vec<f64>,
}

const RATIO_SIGMA_CUTOFF: f64 = 1e-12;
const RATIO_WINDOW: usize = 100;

/// Per-eigenvalue adaptation ratios with a window-100 moving average.
pub fn eig_ratio(params: &AdaptationParams, sigma: &Array1<f64>) -> Result<RatioSeries> {
    let adapted = adapt(sigma, params)?;
    let mut raw = Vec::with_capacity(sigma.len());
    let mut omitted = Vec::new();
    for (i, (&s, &a)) in sigma.iter().zip(adapted.iter()).enumerate() {
        if s >= RATIO_SIGMA_CUTOFF {
            raw.push(a / s);
        } else {
            omitted.push(i);
        }
    }
    let window = RATIO_WINDOW.clamp(1, raw.len().max(1));
    let smoothed = moving_average(&raw, window);
    Ok(RatioSeries { raw, omitted_indices: omitted, window, smoothed })
}

/// Probe hyperparameters; fixed, and echoed in the result metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { lr: 0.01, weight_decay: 5e-4, epochs: 300 }
    }
}

/// Per-class weights over eigen components learned by the probe classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightProbeResult {
    /// `classes x d`, component order = descending sigma.
    pub weights: Vec<Vec<f64>>,
    pub probe: ProbeConfig,
}

/// Train a linear-softmax probe on the features `U diag(sigma^(1/2))` and
/// return its weights by descending eigenvalue.
///
/// The probe starts from zero weights, which makes it exactly equivariant
/// under class relabeling; this is the property the weight plots rely on.
pub fn eigenweight_probe(
    basis: &SpectralBasis,
    labels: &[usize],
    classes: usize,
    split: &SplitSpec,
) -> Result<WeightProbeResult> {
    if labels.len() != basis.n() {
        return Err(Error::invalid("label count must match basis rows"));
    }
    split.validate(basis.n())?;
    let probe = ProbeConfig::default();

    let mut features = basis.u.clone();
    for (mut col, &s) in features.columns_mut().into_iter().zip(basis.sigma.iter()) {
        col.mapv_inplace(|v| v * s.sqrt());
    }

    let d = basis.d();
    let mut head = Head {
        layers: vec![Layer { w: Array2::zeros((d, classes)), b: Array1::zeros(classes) }],
    };
    // Plain full-batch gradient descent: the objective is convex, and unlike
    // adaptive schemes GD respects the sigma^(1/2) feature scaling, which is
    // what makes the per-component weights readable as importance.
    for _ in 0..probe.epochs {
        let cache = head_forward(&features, &head, 0.0, None, false, None)?;
        let dlogits = masked_ce_dlogits(&cache.probs, labels, &split.train);
        let (mut grads, _) = head_backward(&features, &head, &cache, &dlogits);
        grads[0].w.scaled_add(probe.weight_decay, &head.layers[0].w);
        head.layers[0].w.scaled_add(-probe.lr, &grads[0].w);
        head.layers[0].b.scaled_add(-probe.lr, &grads[0].b);
    }

    // Transpose to classes x components.
    let w = &head.layers[0].w;
    let weights = (0..classes)
        .map(|c| (0..d).map(|i| w[[i, c]]).collect())
        .collect();
    Ok(WeightProbeResult { weights, probe })
}

/// Test accuracy as a function of the eigen component count: one fit per
/// (d, split) cell, mean and deviation per d.
pub fn vary_components_study(
    bundle: &DatasetBundle,
    splits: &[SplitSpec],
    d_list: &[usize],
    base_model: &ModelConfig,
    base_train: &TrainConfig,
) -> Result<PlotSeries> {
    if d_list.is_empty() || splits.is_empty() {
        return Err(Error::invalid("component study needs components and splits"));
    }
    let max_d = *d_list.iter().max().unwrap();
    if max_d > bundle.n() {
        return Err(Error::invalid(format!(
            "component count {max_d} exceeds node count {}",
            bundle.n()
        )));
    }
    let a = crate::graph::sym_normalize(&bundle.labeled.graph);
    let basis_full = crate::spectral::truncated_spectrum(&a, max_d)?;
    let featspec_full = if base_model.variant.uses_feature_spectrum() {
        Some(crate::spectral::feature_spectrum(&bundle.features, base_model.k)?)
    } else {
        None
    };

    let per_d: Result<Vec<(f64, f64)>> = d_list
        .par_iter()
        .enumerate()
        .map(|(di, &d)| {
            let mut cfg = base_model.clone();
            cfg.d = d;
            if let Some(b) = cfg.num_bins {
                cfg.num_bins = Some(b.min(d));
            }
            let prepared = Prepared::new(bundle, &cfg, Some(&basis_full), featspec_full.as_ref())?;
            let reports: Result<Vec<FitReport>> = splits
                .par_iter()
                .enumerate()
                .map(|(si, split)| {
                    let mut tc = base_train.clone();
                    tc.seed = derive_seed(
                        derive_seed(base_train.seed, stream::STUDY, di as u64),
                        stream::SPLITS,
                        si as u64,
                    );
                    fit(&cfg, &tc, prepared.inputs(), prepared.labels, prepared.classes, split)
                })
                .collect();
            let tests: Vec<f64> = reports?.iter().map(|r| r.test_acc_at_best_val).collect();
            Ok(mean_std(&tests))
        })
        .collect();
    let per_d = per_d?;

    Ok(PlotSeries {
        x: d_list.iter().map(|&d| d as f64).collect(),
        mean: per_d.iter().map(|p| p.0).collect(),
        std: per_d.iter().map(|p| p.1).collect(),
        meta: json!({
            "study": "components",
            "dataset": bundle.name,
            "variant": base_model.variant.to_string(),
            "splits": splits.len(),
            "seed": base_train.seed,
        }),
    })
}

/// Per-split nested subsample of the train pool: a seeded permutation of the
/// pool, sliced to `floor(fraction * pool)`. Smaller fractions are prefixes
/// of larger ones.
pub fn subsample_train(
    split: &SplitSpec,
    fraction: f64,
    seed: u64,
    split_index: usize,
) -> Result<SplitSpec> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let take = (fraction * split.train.len() as f64).floor() as usize;
    if take == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} train nodes leaves an empty train set",
            split.train.len()
        )));
    }
    let mut pool = split.train.clone();
    let mut rng = rng_for(seed, stream::LABEL_FRACTION, split_index as u64);
    pool.shuffle(&mut rng);
    pool.truncate(take);
    Ok(SplitSpec {
        train: pool,
        val: split.val.clone(),
        test: split.test.clone(),
        seed: Some(seed),
    })
}

/// Test accuracy as a function of the labeled-training fraction, validation
/// and test sets held fixed.
pub fn vary_labels_study(
    bundle: &DatasetBundle,
    splits: &[SplitSpec],
    fractions: &[f64],
    base_model: &ModelConfig,
    base_train: &TrainConfig,
) -> Result<PlotSeries> {
    if fractions.is_empty() || splits.is_empty() {
        return Err(Error::invalid("label study needs fractions and splits"));
    }
    let prepared = Prepared::new(bundle, base_model, None, None)?;

    let per_f: Result<Vec<(f64, f64)>> = fractions
        .par_iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let reports: Result<Vec<FitReport>> = splits
                .par_iter()
                .enumerate()
                .map(|(si, split)| {
                    let sub = subsample_train(split, fraction, base_train.seed, si)?;
                    let mut tc = base_train.clone();
                    tc.seed = derive_seed(
                        derive_seed(base_train.seed, stream::STUDY, 1_000_000 + fi as u64),
                        stream::SPLITS,
                        si as u64,
                    );
                    fit(base_model, &tc, prepared.inputs(), prepared.labels, prepared.classes, &sub)
                })
                .collect();
            let tests: Vec<f64> = reports?.iter().map(|r| r.test_acc_at_best_val).collect();
            Ok(mean_std(&tests))
        })
        .collect();
    let per_f = per_f?;

    Ok(PlotSeries {
        x: fractions.to_vec(),
        mean: per_f.iter().map(|p| p.0).collect(),
        std: per_f.iter().map(|p| p.1).collect(),
        meta: json!({
            "study": "labels",
            "dataset": bundle.name,
            "variant": base_model.variant.to_string(),
            "splits": splits.len(),
            "seed": base_train.seed,
        }),
    })
}

/// One dataset column of a model-comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankColumn {
    pub name: String,
    pub homophily: f64,
    /// One accuracy per model, aligned with `RankTable::models`; `None`
    /// marks a missing cell (ranked last and flagged).
    pub accuracies: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankTable {
    pub models: Vec<String>,
    pub datasets: Vec<RankColumn>,
}

/// Average per-group ranks. Groups follow the homophily-score convention:
/// at most 0.5 is heterophilic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    pub models: Vec<String>,
    pub heterophilic: Option<Vec<f64>>,
    pub homophilic: Option<Vec<f64>>,
    /// (model, dataset) pairs that had no accuracy and were ranked last.
    pub missing: Vec<(String, String)>,
}

/// Ranks for one column: 1 is best, exact ties share the mean of their
/// positions, missing cells are tied at the bottom.
fn column_ranks(acc: &[Option<f64>]) -> Vec<f64> {
    let m = acc.len();
    let mut order: Vec<usize> = (0..m).collect();
    // Present cells first, by accuracy descending; missing cells last.
    order.sort_by(|&i, &j| match (acc[i], acc[j]) {
        (Some(a), Some(b)) => b.partial_cmp(&a).unwrap().then(i.cmp(&j)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => i.cmp(&j),
    });
    let mut ranks = vec![0.0; m];
    let mut pos = 0usize;
    while pos < m {
        let mut end = pos + 1;
        while end < m && acc[order[end]] == acc[order[pos]] {
            end += 1;
        }
        // Positions pos+1 ..= end share their mean rank.
        let mean_rank = (pos + 1 + end) as f64 / 2.0;
        for &idx in &order[pos..end] {
            ranks[idx] = mean_rank;
        }
        pos = end;
    }
    ranks
}

/// Average model rank within the heterophilic and homophilic dataset groups.
pub fn rank_models(table: &RankTable) -> Result<RankReport> {
    if table.datasets.is_empty() || table.models.is_empty() {
        return Err(Error::invalid("rank table needs models and datasets"));
    }
    for col in &table.datasets {
        if col.accuracies.len() != table.models.len() {
            return Err(Error::invalid(format!(
                "dataset {} has {} cells for {} models",
                col.name,
                col.accuracies.len(),
                table.models.len()
            )));
        }
    }
    let m = table.models.len();
    let mut missing = Vec::new();
    let mut hetero_sum = vec![0.0; m];
    let mut homo_sum = vec![0.0; m];
    let mut hetero_count = 0usize;
    let mut homo_count = 0usize;
    for col in &table.datasets {
        let ranks = column_ranks(&col.accuracies);
        for (mi, acc) in col.accuracies.iter().enumerate() {
            if acc.is_none() {
                missing.push((table.models[mi].clone(), col.name.clone()));
            }
        }
        if col.homophily <= 0.5 {
            hetero_count += 1;
            for (s, r) in hetero_sum.iter_mut().zip(&ranks) {
                *s += r;
            }
        } else {
            homo_count += 1;
            for (s, r) in homo_sum.iter_mut().zip(&ranks) {
                *s += r;
            }
        }
    }
    let average = |sum: Vec<f64>, count: usize| {
        (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
    };
    Ok(RankReport {
        models: table.models.clone(),
        heterophilic: average(hetero_sum, hetero_count),
        homophilic: average(homo_sum, homo_count),
        missing,
    })
}
