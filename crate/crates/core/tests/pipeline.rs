//! End-to-end flows through the library API: generate, persist, reload,
//! decompose, train each variant, and checkpoint.

use spectral_adapt_core::adaptation::AdaptKind;
use spectral_adapt_core::dataset::{
    generate_splits, load_dataset, save_dataset, synth_heterophily, SynthConfig,
};
use spectral_adapt_core::model::{
    load_checkpoint, save_checkpoint, CxMode, Model, ModelConfig, ModelInputs,
};
use spectral_adapt_core::train::{evaluate, fit, fit_with_params, Prepared, TrainConfig};
use spectral_adapt_core::Variant;

fn cfg(variant: Variant, kind: AdaptKind) -> ModelConfig {
    ModelConfig {
        variant,
        d: 6,
        k: 8,
        hidden: if variant == Variant::Lr { 0 } else { 8 },
        dropout: 0.0,
        scale_s: 1.0,
        use_order0: false,
        adapt_kind: if variant.uses_basis() { kind } else { AdaptKind::Frozen },
        num_bins: if variant == Variant::Regeigen { Some(3) } else { None },
        cx_mode: CxMode::default(),
    }
}

#[test]
fn every_variant_trains_through_a_persisted_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synth_heterophily(&SynthConfig {
        n: 120,
        classes: 3,
        p_intra: 0.02,
        p_inter: 0.2,
        informative: true,
        feature_noise: 0.3,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    save_dataset(dir.path(), &bundle).unwrap();
    let bundle = load_dataset(dir.path()).unwrap();
    let split = generate_splits(bundle.n(), (0.48, 0.32, 0.20), 5, 1).unwrap().remove(0);
    let tc = TrainConfig { lr: 0.05, max_epochs: 120, seed: 7, ..TrainConfig::default() };

    for variant in [
        Variant::Eigen,
        Variant::EigenEigen,
        Variant::EigenConcat,
        Variant::Regeigen,
        Variant::Lr,
        Variant::Mlp,
    ] {
        let cfg = cfg(variant, AdaptKind::C2);
        let prepared = Prepared::new(&bundle, &cfg, None, None).unwrap();
        let report =
            fit(&cfg, &tc, prepared.inputs(), prepared.labels, prepared.classes, &split).unwrap();
        // Informative features + strong heterophilic structure: every
        // variant must beat 3-class chance comfortably.
        assert!(
            report.test_acc_at_best_val > 0.5,
            "{variant} reached only {:.3}",
            report.test_acc_at_best_val
        );
        assert_eq!(report.restored_val_acc, report.best_val_acc);
    }
}

#[test]
fn order0_flag_widens_head_input_only() {
    let bundle = synth_heterophily(&SynthConfig {
        n: 60,
        classes: 2,
        seed: 23,
        ..SynthConfig::default()
    })
    .unwrap();
    let base = cfg(Variant::EigenEigen, AdaptKind::C2);
    let with = ModelConfig { use_order0: true, ..base.clone() };
    let prep_base = Prepared::new(&bundle, &base, None, None).unwrap();
    let prep_with = Prepared::new(&bundle, &with, None, None).unwrap();
    let mut rng = spectral_adapt_core::rng::rng_for(1, spectral_adapt_core::rng::stream::INIT, 0);
    let m_base = Model::new(base, prep_base.inputs(), 2, &mut rng).unwrap();
    let m_with = Model::new(with, prep_with.inputs(), 2, &mut rng).unwrap();
    assert_eq!(m_base.input_width() + 8, m_with.input_width());
}

#[test]
fn checkpoint_restores_a_trained_model_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synth_heterophily(&SynthConfig {
        n: 80,
        classes: 2,
        seed: 29,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = cfg(Variant::Regeigen, AdaptKind::C2);
    let prepared = Prepared::new(&bundle, &cfg, None, None).unwrap();
    let split = generate_splits(80, (0.5, 0.25, 0.25), 3, 1).unwrap().remove(0);
    let tc = TrainConfig { lr: 0.03, max_epochs: 40, seed: 11, ..TrainConfig::default() };
    let (report, params) =
        fit_with_params(&cfg, &tc, prepared.inputs(), prepared.labels, prepared.classes, &split)
            .unwrap();

    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &cfg, &params).unwrap();
    let (cfg2, params2) = load_checkpoint(&path).unwrap();
    assert_eq!(params2, params);

    // The reloaded parameters reproduce the recorded test accuracy.
    let mut rng = spectral_adapt_core::rng::rng_for(0, spectral_adapt_core::rng::stream::INIT, 0);
    let inputs = ModelInputs {
        basis: prepared.basis.as_ref(),
        featspec: prepared.featspec.as_ref(),
        reduced: prepared.reduced.as_ref(),
        raw_features: None,
    };
    let mut model = Model::new(cfg2, inputs, 2, &mut rng).unwrap();
    model.params = params2;
    let embedding = model.embedding().unwrap();
    let acc = evaluate(&model.params, &embedding, prepared.labels, &split.test).unwrap();
    assert_eq!(acc, report.test_acc_at_best_val);
}
