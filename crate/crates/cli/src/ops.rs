//! Command implementations.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use spectral_adapt_core::analysis::{
    eig_ratio, eigenweight_probe, rank_models, vary_components_study, vary_labels_study,
    RankTable,
};
use spectral_adapt_core::cache::{
    hash_file, read_basis, read_feature_spectral, write_basis, write_feature_spectral,
};
use spectral_adapt_core::dataset::{
    generate_splits, load_dataset, load_splits, save_dataset, synth_heterophily, DatasetBundle,
    SplitSpec, SynthConfig,
};
use spectral_adapt_core::model::{save_checkpoint, ModelConfig};
use spectral_adapt_core::rng::{derive_seed, stream};
use spectral_adapt_core::spectral::{
    feature_spectrum_with, truncated_spectrum_with, EigsOptions, FeatureSpectral, SpectralBasis,
};
use spectral_adapt_core::train::{
    fit, format_mean_std, mean_std, sweep, FitReport, Prepared, SearchSpace, TrainConfig,
};
use spectral_adapt_core::{Error, Result};

use crate::manifest::ManifestBuilder;

pub const DEFAULT_COMPONENT_CAP: usize = 2048;

pub fn default_d(n: usize) -> usize {
    n.min(DEFAULT_COMPONENT_CAP)
}

pub fn default_k(n: usize, m: usize) -> usize {
    n.min(m).min(DEFAULT_COMPONENT_CAP)
}

/// Cache directory resolution: explicit flag, then the SPECTRAL_ADAPT_CACHE
/// environment variable, then `./spectral-adapt-cache`.
pub fn resolve_cache_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("SPECTRAL_ADAPT_CACHE") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("spectral-adapt-cache")
}

fn features_file(dir: &Path) -> PathBuf {
    let tsv = dir.join("features.tsv");
    if tsv.exists() {
        tsv
    } else {
        dir.join("features.bin")
    }
}

pub struct CachedBasis {
    pub basis: SpectralBasis,
    pub path: PathBuf,
    pub cache_hit: bool,
}

pub struct CachedFeatureSpectral {
    pub featspec: FeatureSpectral,
    pub path: PathBuf,
    pub cache_hit: bool,
}

/// Basis cache keyed by the content of `edges.tsv` and the component count.
pub fn ensure_basis(
    data_dir: &Path,
    bundle: &DatasetBundle,
    d: usize,
    cache_dir: &Path,
    opts: &EigsOptions,
) -> Result<CachedBasis> {
    let key = hash_file(&data_dir.join("edges.tsv"))?;
    let path = cache_dir.join(format!("basis-{key:016x}-d{d}.bin"));
    if path.exists() {
        let basis = read_basis(&path)?;
        if basis.n() == bundle.n() && basis.d() == d {
            return Ok(CachedBasis { basis, path, cache_hit: true });
        }
        log::warn!("cache file {} has stale shape; recomputing", path.display());
    }
    let a = spectral_adapt_core::sym_normalize(&bundle.labeled.graph);
    let basis = truncated_spectrum_with(&a, d, opts)?;
    write_basis(&path, &basis)?;
    Ok(CachedBasis { basis, path, cache_hit: false })
}

/// Feature-spectrum cache keyed by the features file content and `k`.
pub fn ensure_feature_spectral(
    data_dir: &Path,
    bundle: &DatasetBundle,
    k: usize,
    cache_dir: &Path,
    opts: &EigsOptions,
) -> Result<CachedFeatureSpectral> {
    let key = hash_file(&features_file(data_dir))?;
    let path = cache_dir.join(format!("features-{key:016x}-k{k}.bin"));
    if path.exists() {
        let featspec = read_feature_spectral(&path)?;
        if featspec.n() == bundle.n() && featspec.k() == k {
            return Ok(CachedFeatureSpectral { featspec, path, cache_hit: true });
        }
        log::warn!("cache file {} has stale shape; recomputing", path.display());
    }
    let featspec = feature_spectrum_with(&bundle.features, k, opts)?;
    write_feature_spectral(&path, &featspec)?;
    Ok(CachedFeatureSpectral { featspec, path, cache_hit: false })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text)?;
    Ok(())
}

pub fn resolve_splits(
    splits_file: Option<&Path>,
    gen_splits: Option<usize>,
    split_seed: u64,
    n: usize,
) -> Result<Vec<SplitSpec>> {
    match (splits_file, gen_splits) {
        (Some(path), None) => load_splits(path, n),
        (None, Some(count)) => {
            if count == 0 {
                return Err(Error::invalid("--gen-splits needs at least one split"));
            }
            generate_splits(n, (0.48, 0.32, 0.20), split_seed, count)
        }
        (None, None) => Err(Error::invalid("provide --splits FILE or --gen-splits N")),
        (Some(_), Some(_)) => Err(Error::invalid("--splits and --gen-splits are exclusive")),
    }
}

fn sigma_summary(sigma: &Array1<f64>) -> serde_json::Value {
    let head: Vec<f64> = sigma.iter().take(10).copied().collect();
    let tail: Vec<f64> = if sigma.len() > 10 {
        sigma.iter().skip(sigma.len() - 3).copied().collect()
    } else {
        Vec::new()
    };
    json!({ "head": head, "tail": tail, "count": sigma.len() })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_spectra(
    data: &Path,
    d: Option<usize>,
    k: Option<usize>,
    out: &Path,
    cache_flag: Option<&Path>,
    opts: &EigsOptions,
) -> Result<()> {
    let bundle = load_dataset(data)?;
    let n = bundle.n();
    let d = match d {
        Some(0) => return Err(Error::invalid("--d must be at least 1")),
        Some(d) => d,
        None => default_d(n),
    };
    let k = match k {
        Some(0) => return Err(Error::invalid("--k must be at least 1")),
        Some(k) => k,
        None => default_k(n, bundle.feature_width()),
    };
    let cache_dir = resolve_cache_dir(cache_flag);

    let mut manifest = ManifestBuilder::new(
        "spectra",
        json!({ "data": data.display().to_string(), "d": d, "k": k }),
        opts.seed,
    );
    manifest.hash_dataset_dir(data)?;

    let cb = ensure_basis(data, &bundle, d, &cache_dir, opts)?;
    let cf = ensure_feature_spectral(data, &bundle, k, &cache_dir, opts)?;

    // Cache status goes to the console, not the report, so reruns stay
    // byte-identical.
    let report = json!({
        "manifest": manifest.finish(),
        "dataset": { "name": bundle.name, "nodes": n, "features": bundle.feature_width(),
                     "classes": bundle.classes() },
        "sigma": sigma_summary(&cb.basis.sigma),
        "sigma_x": sigma_summary(&cf.featspec.sigma_x),
        "rank_deficient": cf.featspec.rank_deficient,
        "basis_cache": cb.path.display().to_string(),
        "feature_cache": cf.path.display().to_string(),
    });
    write_json(out, &report)?;
    println!(
        "spectra: n={n} d={d} k={k} sigma[0]={:.6} (cache {})",
        cb.basis.sigma[0],
        if cb.cache_hit && cf.cache_hit { "hit" } else { "miss" }
    );
    Ok(())
}

pub struct ResolvedModel {
    pub cfg: ModelConfig,
    pub warnings: Vec<String>,
}

/// Fill derived defaults: component counts from the dataset size, the
/// documented half-of-d bin default for the bin-tied variant.
pub fn resolve_model_config(mut cfg: ModelConfig, n: usize, m: usize) -> ResolvedModel {
    let mut warnings = Vec::new();
    if cfg.variant.uses_basis() && cfg.d == 0 {
        cfg.d = default_d(n);
    }
    if cfg.variant.uses_feature_spectrum() && cfg.k == 0 {
        cfg.k = default_k(n, m);
    }
    if cfg.variant == spectral_adapt_core::Variant::Regeigen && cfg.num_bins.is_none() {
        let b = (cfg.d / 2).max(1);
        warnings.push(format!("regeigen without --bins: defaulting to 50% of d ({b})"));
        cfg.num_bins = Some(b);
    }
    if let Some(b) = cfg.num_bins {
        let clamped = b.clamp(1, cfg.d.max(1));
        if clamped != b {
            warnings.push(format!("bin count {b} clamped to {clamped}"));
            cfg.num_bins = Some(clamped);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    ResolvedModel { cfg, warnings }
}

/// Build prepared inputs, pulling spectra through the cache.
pub fn prepare_cached<'a>(
    data: &Path,
    bundle: &'a DatasetBundle,
    cfg: &ModelConfig,
    cache_dir: &Path,
    opts: &EigsOptions,
) -> Result<Prepared<'a>> {
    let basis = if cfg.variant.uses_basis() {
        Some(ensure_basis(data, bundle, cfg.d, cache_dir, opts)?.basis)
    } else {
        None
    };
    let featspec = if cfg.variant.uses_feature_spectrum() {
        Some(ensure_feature_spectral(data, bundle, cfg.k, cache_dir, opts)?.featspec)
    } else {
        None
    };
    Prepared::new(bundle, cfg, basis.as_ref(), featspec.as_ref())
}

#[derive(Serialize)]
struct TrainOutput<M: Serialize> {
    manifest: M,
    model_config: ModelConfig,
    train_config: TrainConfig,
    warnings: Vec<String>,
    reports: Vec<FitReport>,
    summary: serde_json::Value,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    data: &Path,
    splits_file: Option<&Path>,
    gen_splits: Option<usize>,
    split_seed: u64,
    cfg: ModelConfig,
    tc: TrainConfig,
    out: &Path,
    save_model: Option<&Path>,
    cache_flag: Option<&Path>,
    opts: &EigsOptions,
) -> Result<()> {
    let bundle = load_dataset(data)?;
    let n = bundle.n();
    let resolved = resolve_model_config(cfg, n, bundle.feature_width());
    let cfg = resolved.cfg;
    cfg.validate()?;
    let splits = resolve_splits(splits_file, gen_splits, split_seed, n)?;
    let cache_dir = resolve_cache_dir(cache_flag);

    let mut manifest = ManifestBuilder::new(
        "train",
        json!({
            "data": data.display().to_string(),
            "model": cfg,
            "train": tc,
            "splits": splits.len(),
        }),
        tc.seed,
    );
    manifest.hash_dataset_dir(data)?;
    if let Some(p) = splits_file {
        manifest.hash_input(p)?;
    }

    let prepared = prepare_cached(data, &bundle, &cfg, &cache_dir, opts)?;
    let reports: Result<Vec<FitReport>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let mut t = tc.clone();
            t.seed = derive_seed(tc.seed, stream::SPLITS, i as u64);
            fit(&cfg, &t, prepared.inputs(), prepared.labels, prepared.classes, split)
        })
        .collect();
    let reports = reports?;

    let tests: Vec<f64> = reports.iter().map(|r| r.test_acc_at_best_val).collect();
    let vals: Vec<f64> = reports.iter().map(|r| r.best_val_acc).collect();
    let (mean_test, std_test) = mean_std(&tests);
    let (mean_val, _) = mean_std(&vals);
    let formatted = format_mean_std(mean_test, std_test);

    if let Some(path) = save_model {
        // Persist the parameters of the first split's best model by retraining
        // deterministically; fit reports do not carry head weights.
        let mut t = tc.clone();
        t.seed = derive_seed(tc.seed, stream::SPLITS, 0);
        let (_, params) = spectral_adapt_core::train::fit_with_params(
            &cfg,
            &t,
            prepared.inputs(),
            prepared.labels,
            prepared.classes,
            &splits[0],
        )?;
        save_checkpoint(path, &cfg, &params)?;
    }

    let output = TrainOutput {
        manifest: manifest.finish(),
        model_config: cfg.clone(),
        train_config: tc,
        warnings: resolved.warnings,
        reports,
        summary: json!({
            "mean_test_acc": mean_test,
            "std_test_acc": std_test,
            "mean_val_acc": mean_val,
            "formatted": formatted,
        }),
    };
    write_json(out, &output)?;
    println!("{} on {}: {formatted}", cfg.variant, bundle.name);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    data: &Path,
    splits_file: Option<&Path>,
    gen_splits: Option<usize>,
    split_seed: u64,
    cfg: ModelConfig,
    base_tc: TrainConfig,
    trials: usize,
    seed: u64,
    out: &Path,
    cache_flag: Option<&Path>,
    opts: &EigsOptions,
) -> Result<()> {
    let bundle = load_dataset(data)?;
    let n = bundle.n();
    let resolved = resolve_model_config(cfg, n, bundle.feature_width());
    let cfg = resolved.cfg;
    cfg.validate()?;
    let splits = resolve_splits(splits_file, gen_splits, split_seed, n)?;
    let cache_dir = resolve_cache_dir(cache_flag);

    let mut manifest = ManifestBuilder::new(
        "sweep",
        json!({
            "data": data.display().to_string(),
            "model": cfg,
            "trials": trials,
            "splits": splits.len(),
        }),
        seed,
    );
    manifest.hash_dataset_dir(data)?;
    if let Some(p) = splits_file {
        manifest.hash_input(p)?;
    }

    let prepared = prepare_cached(data, &bundle, &cfg, &cache_dir, opts)?;
    let space = SearchSpace::defaults(cfg.variant, n, cfg.d.max(1));
    let report = sweep(
        &cfg,
        &base_tc,
        &space,
        prepared.inputs(),
        prepared.labels,
        prepared.classes,
        &splits,
        trials,
        seed,
    )?;

    let row = report.best.summary.clone();
    let output = json!({
        "manifest": manifest.finish(),
        "base_model": cfg,
        "search_space": space,
        "sweep": report,
    });
    write_json(out, &output)?;
    println!("{} on {}: best {row}", cfg.variant, bundle.name);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze_weights(
    data: &Path,
    splits_file: Option<&Path>,
    gen_splits: Option<usize>,
    split_seed: u64,
    split_index: usize,
    d: Option<usize>,
    out: &Path,
    cache_flag: Option<&Path>,
    opts: &EigsOptions,
) -> Result<()> {
    let bundle = load_dataset(data)?;
    let n = bundle.n();
    let d = d.unwrap_or_else(|| default_d(n));
    let splits = resolve_splits(splits_file, gen_splits, split_seed, n)?;
    let split = splits
        .get(split_index)
        .ok_or_else(|| Error::invalid(format!("split index {split_index} out of range")))?;
    let cache_dir = resolve_cache_dir(cache_flag);

    let mut manifest = ManifestBuilder::new(
        "analyze-weights",
        json!({ "data": data.display().to_string(), "d": d, "split_index": split_index }),
        split_seed,
    );
    manifest.hash_dataset_dir(data)?;

    let basis = ensure_basis(data, &bundle, d, &cache_dir, opts)?.basis;
    let probe = eigenweight_probe(&basis, &bundle.labeled.labels, bundle.classes(), split)?;
    let output = json!({
        "manifest": manifest.finish(),
        "sigma": basis.sigma.to_vec(),
        "probe": probe,
    });
    write_json(out, &output)?;
    println!("analyze weights: {} classes x {d} components", bundle.classes());
    Ok(())
}

pub fn cmd_analyze_ratio(
    report_path: &Path,
    data: &Path,
    report_index: usize,
    out: &Path,
    cache_flag: Option<&Path>,
    opts: &EigsOptions,
) -> Result<()> {
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", report_path.display())))?;
    let train_output: serde_json::Value = serde_json::from_str(&text)?;
    let cfg: ModelConfig = serde_json::from_value(
        train_output
            .get("model_config")
            .cloned()
            .ok_or_else(|| Error::data("report JSON lacks model_config"))?,
    )?;
    let reports = train_output
        .get("reports")
        .and_then(|r| r.as_array())
        .ok_or_else(|| Error::data("report JSON lacks reports"))?;
    let fit_report: FitReport = serde_json::from_value(
        reports
            .get(report_index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("report index {report_index} out of range")))?,
    )?;

    let bundle = load_dataset(data)?;
    let cache_dir = resolve_cache_dir(cache_flag);
    let basis = ensure_basis(data, &bundle, cfg.d, &cache_dir, opts)?.basis;

    let mut manifest = ManifestBuilder::new(
        "analyze-ratio",
        json!({ "report": report_path.display().to_string(), "index": report_index, "d": cfg.d }),
        fit_report.seed,
    );
    manifest.hash_dataset_dir(data)?;
    manifest.hash_input(report_path)?;

    let ratio = eig_ratio(&fit_report.adaptation, &basis.sigma)?;
    let output = json!({
        "manifest": manifest.finish(),
        "ratio": ratio,
    });
    write_json(out, &output)?;
    println!("analyze ratio: {} entries, window {}", ratio.raw.len(), ratio.window);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze_components(
    data: &Path,
    splits_file: Option<&Path>,
    gen_splits: Option<usize>,
    split_seed: u64,
    cfg: ModelConfig,
    tc: TrainConfig,
    d_list: &[usize],
    out: &Path,
) -> Result<()> {
    let bundle = load_dataset(data)?;
    let resolved = resolve_model_config(cfg, bundle.n(), bundle.feature_width());
    let cfg = resolved.cfg;
    let splits = resolve_splits(splits_file, gen_splits, split_seed, bundle.n())?;

    let mut manifest = ManifestBuilder::new(
        "analyze-components",
        json!({ "data": data.display().to_string(), "model": cfg, "d_list": d_list }),
        tc.seed,
    );
    manifest.hash_dataset_dir(data)?;

    let series = vary_components_study(&bundle, &splits, d_list, &cfg, &tc)?;
    let output = json!({ "manifest": manifest.finish(), "series": series });
    write_json(out, &output)?;
    println!("analyze components: {} points", d_list.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze_labels(
    data: &Path,
    splits_file: Option<&Path>,
    gen_splits: Option<usize>,
    split_seed: u64,
    cfg: ModelConfig,
    tc: TrainConfig,
    fractions: &[f64],
    out: &Path,
) -> Result<()> {
    let bundle = load_dataset(data)?;
    let resolved = resolve_model_config(cfg, bundle.n(), bundle.feature_width());
    let cfg = resolved.cfg;
    let splits = resolve_splits(splits_file, gen_splits, split_seed, bundle.n())?;

    let mut manifest = ManifestBuilder::new(
        "analyze-labels",
        json!({ "data": data.display().to_string(), "model": cfg, "fractions": fractions }),
        tc.seed,
    );
    manifest.hash_dataset_dir(data)?;

    let series = vary_labels_study(&bundle, &splits, fractions, &cfg, &tc)?;
    let output = json!({ "manifest": manifest.finish(), "series": series });
    write_json(out, &output)?;
    println!("analyze labels: {} points", fractions.len());
    Ok(())
}

pub fn cmd_analyze_rank(table_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(table_path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", table_path.display())))?;
    let table: RankTable = serde_json::from_str(&text)?;

    let mut manifest = ManifestBuilder::new(
        "analyze-rank",
        json!({ "table": table_path.display().to_string() }),
        0,
    );
    manifest.hash_input(table_path)?;

    let report = rank_models(&table)?;
    let output = json!({ "manifest": manifest.finish(), "rank": report });
    write_json(out, &output)?;
    println!("analyze rank: {} models over {} datasets", table.models.len(), table.datasets.len());
    Ok(())
}

pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    let manifest = ManifestBuilder::new("synth", serde_json::to_value(cfg)?, cfg.seed);
    let bundle = synth_heterophily(cfg)?;
    save_dataset(out_dir, &bundle)?;
    let run = json!({ "manifest": manifest.finish(), "dataset": {
        "name": bundle.name,
        "nodes": bundle.n(),
        "edges": bundle.labeled.graph.edge_count(),
        "homophily": spectral_adapt_core::homophily_score(&bundle.labeled).ok(),
    }});
    write_json(&out_dir.join("run-manifest.json"), &run)?;
    println!(
        "synth: wrote {} nodes, {} edges to {}",
        bundle.n(),
        bundle.labeled.graph.edge_count(),
        out_dir.display()
    );
    Ok(())
}
