//! Model variants and their differentiable forward/backward passes.
//!
//! Every variant materializes an n-by-q embedding and feeds it to a small
//! head (linear, or one hidden ReLU layer) with a softmax output. The eigen
//! variants keep the basis fixed and differentiate through the adapted
//! spectrum only; the classifier head absorbs the trailing basis projection
//! so no dense n-by-n product is ever formed.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt, adapt_grad, l1_penalty, make_bins, AdaptKind, AdaptationParams};
use crate::error::{Error, Result};
use crate::spectral::{FeatureSpectral, SpectralBasis};

/// Which embedding the model builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Graph-only: scaled basis columns weighted by the adapted spectrum.
    Eigen,
    /// Graph basis combined with the feature eigenspace.
    EigenEigen,
    /// Reduced raw features concatenated with the adapted eigen block.
    EigenConcat,
    /// Eigen-eigen with bin-tied adaptation parameters.
    Regeigen,
    /// Logistic regression on raw features (linear head).
    Lr,
    /// One-hidden-layer network on raw features.
    Mlp,
}

impl Variant {
    pub fn uses_basis(&self) -> bool {
        !matches!(self, Variant::Lr | Variant::Mlp)
    }

    pub fn uses_feature_spectrum(&self) -> bool {
        matches!(self, Variant::EigenEigen | Variant::Regeigen | Variant::EigenConcat)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Eigen => "eigen",
            Variant::EigenEigen => "eigen-eigen",
            Variant::EigenConcat => "eigen-concat",
            Variant::Regeigen => "regeigen",
            Variant::Lr => "lr",
            Variant::Mlp => "mlp",
        };
        write!(f, "{name}")
    }
}

/// How the fixed feature-side diagonal is derived from the Gram eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CxMode {
    /// Square roots of the Gram eigenvalues, i.e. the singular values of X;
    /// reduced features then reproduce the row geometry of X.
    #[default]
    SqrtEigenvalues,
    /// The Gram eigenvalues themselves.
    Eigenvalues,
}

/// Full model description; everything needed to rebuild a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Eigen components of the graph (ignored by LR/MLP).
    pub d: usize,
    /// Feature components (eigen-eigen and concat variants).
    pub k: usize,
    /// Hidden width; 0 means a linear head.
    pub hidden: usize,
    pub dropout: f64,
    /// Scale applied to the eigen embedding block.
    pub scale_s: f64,
    /// Concatenate reduced raw features to the eigen-eigen embedding.
    pub use_order0: bool,
    pub adapt_kind: AdaptKind,
    /// Bin count for tied adaptation parameters (required for `Regeigen`).
    pub num_bins: Option<usize>,
    #[serde(default)]
    pub cx_mode: CxMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.scale_s.is_finite() || self.scale_s <= 0.0 {
            return Err(Error::invalid(format!("scale {} must be positive", self.scale_s)));
        }
        if self.variant.uses_basis() && self.d == 0 {
            return Err(Error::invalid("eigen variants need at least one component"));
        }
        if self.variant.uses_feature_spectrum() && self.k == 0 {
            return Err(Error::invalid("feature-aware variants need at least one feature component"));
        }
        if self.variant == Variant::Regeigen && self.num_bins.is_none() {
            return Err(Error::invalid("regeigen requires a bin count"));
        }
        if let Some(b) = self.num_bins {
            if b == 0 || b > self.d {
                return Err(Error::invalid(format!("bin count {b} outside 1..={}", self.d)));
            }
        }
        if self.use_order0 && !matches!(self.variant, Variant::EigenEigen | Variant::Regeigen) {
            return Err(Error::invalid("order-0 augmentation applies to eigen-eigen variants only"));
        }
        if self.variant == Variant::Lr && self.hidden != 0 {
            return Err(Error::invalid("lr uses a linear head; hidden width must be 0"));
        }
        if self.variant == Variant::Mlp && self.hidden == 0 {
            return Err(Error::invalid("mlp needs a nonzero hidden width"));
        }
        Ok(())
    }
}

/// Fixed feature-side diagonal `c_x`.
pub fn fixed_feature_adaptation(featspec: &FeatureSpectral, mode: CxMode) -> Array1<f64> {
    match mode {
        CxMode::SqrtEigenvalues => featspec.sigma_x.mapv(f64::sqrt),
        CxMode::Eigenvalues => featspec.sigma_x.clone(),
    }
}

/// Reduced node features `Q diag(c_x)`, one row per node.
pub fn reduced_features(featspec: &FeatureSpectral, mode: CxMode) -> Array2<f64> {
    let cx = fixed_feature_adaptation(featspec, mode);
    let mut r = featspec.q.clone();
    for (mut col, &c) in r.columns_mut().into_iter().zip(cx.iter()) {
        col.mapv_inplace(|v| v * c);
    }
    r
}

/// The d-by-k eigen-eigen operator `(U^T Q) .* c_x^T`; precomputed once, the
/// adapted spectrum then scales its rows each forward pass.
pub fn eigen_eigen_operator(
    basis: &SpectralBasis,
    featspec: &FeatureSpectral,
    mode: CxMode,
) -> Result<Array2<f64>> {
    if featspec.n() != basis.n() {
        return Err(Error::invalid(format!(
            "basis has {} rows but feature spectrum has {}",
            basis.n(),
            featspec.n()
        )));
    }
    let mut m = crate::spectral::project(basis, &featspec.q)?;
    let cx = fixed_feature_adaptation(featspec, mode);
    for (mut col, &c) in m.columns_mut().into_iter().zip(cx.iter()) {
        col.mapv_inplace(|v| v * c);
    }
    Ok(m)
}

/// Graph-only embedding `s * U diag(adapt(sigma))`.
pub fn embed_eigen(
    basis: &SpectralBasis,
    p: &AdaptationParams,
    scale_s: f64,
) -> Result<Array2<f64>> {
    let c = adapt(&basis.sigma, p)?;
    let mut e = basis.u.clone();
    for (mut col, &ci) in e.columns_mut().into_iter().zip(c.iter()) {
        col.mapv_inplace(|v| v * ci * scale_s);
    }
    Ok(e)
}

/// Eigen-eigen embedding `s * U (M .* c 1^T)` with `M` from
/// [`eigen_eigen_operator`].
pub fn embed_eigen_eigen(
    basis: &SpectralBasis,
    featspec: &FeatureSpectral,
    p: &AdaptationParams,
    mode: CxMode,
    scale_s: f64,
) -> Result<Array2<f64>> {
    let m = eigen_eigen_operator(basis, featspec, mode)?;
    embed_eigen_eigen_with_operator(basis, &m, p, scale_s)
}

pub fn embed_eigen_eigen_with_operator(
    basis: &SpectralBasis,
    m: &Array2<f64>,
    p: &AdaptationParams,
    scale_s: f64,
) -> Result<Array2<f64>> {
    if m.nrows() != basis.d() {
        return Err(Error::invalid(format!(
            "operator has {} rows but basis holds {} components",
            m.nrows(),
            basis.d()
        )));
    }
    let c = adapt(&basis.sigma, p)?;
    let mut f = m.clone();
    for (mut row, &ci) in f.rows_mut().into_iter().zip(c.iter()) {
        row.mapv_inplace(|v| v * ci);
    }
    Ok(crate::linalg::par_matmul(basis.u.view(), f.view()) * scale_s)
}

/// Concatenation embedding `[reduced | s * U diag(adapt(sigma))]`.
pub fn embed_eigen_concat(
    basis: &SpectralBasis,
    reduced: &Array2<f64>,
    p: &AdaptationParams,
    scale_s: f64,
) -> Result<Array2<f64>> {
    if reduced.nrows() != basis.n() {
        return Err(Error::invalid("reduced feature rows must match node count"));
    }
    let eig = embed_eigen(basis, p, scale_s)?;
    Ok(concatenate![Axis(1), reduced.view(), eig.view()])
}

/// Append the aggregation-free feature block to an embedding.
pub fn augment_order0(e: &Array2<f64>, reduced: &Array2<f64>) -> Result<Array2<f64>> {
    if e.nrows() != reduced.nrows() {
        return Err(Error::invalid("row counts must match for order-0 augmentation"));
    }
    Ok(concatenate![Axis(1), e.view(), reduced.view()])
}

/// One affine layer of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Classifier head: one or two affine layers with ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub layers: Vec<Layer>,
}

impl Head {
    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
    pub fn init(input: usize, hidden: usize, classes: usize, rng: &mut ChaCha20Rng) -> Head {
        let widths: Vec<(usize, usize)> = if hidden == 0 {
            vec![(input, classes)]
        } else {
            vec![(input, hidden), (hidden, classes)]
        };
        let layers = widths
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                    (rng.random::<f64>() * 2.0 - 1.0) * bound
                });
                Layer { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Head { layers }
    }

    pub fn weight_sq_sum(&self) -> f64 {
        self.layers.iter().map(|l| l.w.iter().map(|x| x * x).sum::<f64>()).sum()
    }
}

/// All learnable state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub adaptation: AdaptationParams,
    pub head: Head,
}

impl ModelParams {
    /// Canonical flat order: alpha1, alpha2, then each layer's weights
    /// row-major followed by its bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.adaptation.alpha1.to_vec();
        out.extend(self.adaptation.alpha2.iter());
        for layer in &self.head.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }

    /// Inverse of [`flatten`]; shapes must match exactly.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flatten().len();
        if flat.len() != expected {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut at = 0;
        for v in self.adaptation.alpha1.iter_mut() {
            *v = flat[at];
            at += 1;
        }
        for v in self.adaptation.alpha2.iter_mut() {
            *v = flat[at];
            at += 1;
        }
        for layer in self.head.layers.iter_mut() {
            for v in layer.w.iter_mut() {
                *v = flat[at];
                at += 1;
            }
            for v in layer.b.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        Ok(())
    }
}

/// Cached activations from one head pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Pre-activation of the hidden layer, when present.
    pub pre_hidden: Option<Array2<f64>>,
    /// Post-ReLU, post-dropout hidden activations.
    pub hidden: Option<Array2<f64>>,
    /// The 0/1 dropout mask actually applied (None when dropout was off).
    pub dropout_mask: Option<Array2<f64>>,
    pub probs: Array2<f64>,
    dropout: f64,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// Head forward pass. Dropout (inverted scaling) is applied to hidden
/// activations only and only when `train` is set; a caller-supplied mask
/// overrides sampling, which keeps gradient checks deterministic.
pub fn head_forward(
    e: &Array2<f64>,
    head: &Head,
    dropout: f64,
    fixed_mask: Option<&Array2<f64>>,
    train: bool,
    rng: Option<&mut ChaCha20Rng>,
) -> Result<HeadCache> {
    match head.layers.len() {
        1 => {
            let logits = e.dot(&head.layers[0].w) + &head.layers[0].b;
            check_finite(&logits, "output layer")?;
            Ok(HeadCache {
                pre_hidden: None,
                hidden: None,
                dropout_mask: None,
                probs: softmax_rows(&logits),
                dropout: 0.0,
            })
        }
        2 => {
            let z1 = e.dot(&head.layers[0].w) + &head.layers[0].b;
            check_finite(&z1, "hidden layer")?;
            let mut h = z1.mapv(|v| v.max(0.0));
            let mut applied_mask = None;
            if train && dropout > 0.0 {
                let mask = match fixed_mask {
                    Some(m) => m.clone(),
                    None => {
                        let rng = rng.ok_or_else(|| {
                            Error::invalid("dropout sampling needs a generator in training mode")
                        })?;
                        Array2::from_shape_fn(h.raw_dim(), |_| {
                            f64::from(rng.random::<f64>() >= dropout)
                        })
                    }
                };
                let keep = 1.0 - dropout;
                h = h * &mask / keep;
                applied_mask = Some(mask);
            }
            let logits = h.dot(&head.layers[1].w) + &head.layers[1].b;
            check_finite(&logits, "output layer")?;
            Ok(HeadCache {
                pre_hidden: Some(z1),
                hidden: Some(h),
                dropout_mask: applied_mask,
                probs: softmax_rows(&logits),
                dropout,
            })
        }
        k => Err(Error::invalid(format!("unsupported head depth {k}"))),
    }
}

/// Gradients mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub alpha1: Array1<f64>,
    pub alpha2: Array1<f64>,
    pub layers: Vec<Layer>,
}

impl Grads {
    /// Same flat order as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.alpha1.to_vec();
        out.extend(self.alpha2.iter());
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }
}

/// Mean masked cross-entropy gradient at the logits: `(p - y) / |T|` on
/// masked rows, zero elsewhere.
pub(crate) fn masked_ce_dlogits(
    probs: &Array2<f64>,
    labels: &[usize],
    mask: &[usize],
) -> Array2<f64> {
    let mut dlogits = Array2::<f64>::zeros(probs.raw_dim());
    let inv = if mask.is_empty() { 0.0 } else { 1.0 / mask.len() as f64 };
    for &i in mask {
        for j in 0..probs.ncols() {
            let y = f64::from(labels[i] == j);
            dlogits[[i, j]] = (probs[[i, j]] - y) * inv;
        }
    }
    dlogits
}

pub(crate) fn head_backward(
    e: &Array2<f64>,
    head: &Head,
    cache: &HeadCache,
    dlogits: &Array2<f64>,
) -> (Vec<Layer>, Array2<f64>) {
    match head.layers.len() {
        1 => {
            let dw = e.t().dot(dlogits);
            let db = dlogits.sum_axis(Axis(0));
            let de = dlogits.dot(&head.layers[0].w.t());
            (vec![Layer { w: dw, b: db }], de)
        }
        _ => {
            let h = cache.hidden.as_ref().expect("two-layer cache");
            let z1 = cache.pre_hidden.as_ref().expect("two-layer cache");
            let dw2 = h.t().dot(dlogits);
            let db2 = dlogits.sum_axis(Axis(0));
            let mut dh = dlogits.dot(&head.layers[1].w.t());
            if let Some(mask) = &cache.dropout_mask {
                let keep = 1.0 - cache.dropout;
                dh = dh * mask / keep;
            }
            let dz1 = &dh * &z1.mapv(|v| f64::from(v > 0.0));
            let dw1 = e.t().dot(&dz1);
            let db1 = dz1.sum_axis(Axis(0));
            let de = dz1.dot(&head.layers[0].w.t());
            (
                vec![Layer { w: dw1, b: db1 }, Layer { w: dw2, b: db2 }],
                de,
            )
        }
    }
}

/// Regularization settings that enter the optimized loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegTerms {
    /// L2 coefficient on head weight matrices (biases and adaptation excluded).
    pub weight_decay: f64,
    /// L1 coefficient on the realized adaptation scales.
    pub l1_lambda: f64,
}

/// Read-only per-dataset inputs a model is built against.
#[derive(Clone, Copy)]
pub struct ModelInputs<'a> {
    pub basis: Option<&'a SpectralBasis>,
    pub featspec: Option<&'a FeatureSpectral>,
    /// Reduced features `Q diag(c_x)`; required by concat/order-0 paths.
    pub reduced: Option<&'a Array2<f64>>,
    /// Raw feature matrix; required by LR/MLP.
    pub raw_features: Option<&'a Array2<f64>>,
}

/// A model bound to its dataset inputs, owning its learnable parameters.
pub struct Model<'a> {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    basis: Option<&'a SpectralBasis>,
    op: Option<Array2<f64>>,
    reduced: Option<&'a Array2<f64>>,
    raw: Option<&'a Array2<f64>>,
    n: usize,
    classes: usize,
}

/// One full forward pass: the embedding that entered the head plus the head
/// cache. Kept for the matching backward call.
pub struct Forward {
    pub embedding: Array2<f64>,
    pub head: HeadCache,
}

impl<'a> Model<'a> {
    pub fn new(
        cfg: ModelConfig,
        inputs: ModelInputs<'a>,
        classes: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Model<'a>> {
        cfg.validate()?;
        let basis = if cfg.variant.uses_basis() {
            let b = inputs
                .basis
                .ok_or_else(|| Error::invalid("variant needs a spectral basis"))?;
            if b.d() != cfg.d {
                return Err(Error::invalid(format!(
                    "basis holds {} components but config asks for {}",
                    b.d(),
                    cfg.d
                )));
            }
            Some(b)
        } else {
            None
        };

        let mut op = None;
        if matches!(cfg.variant, Variant::EigenEigen | Variant::Regeigen) {
            let fs = inputs
                .featspec
                .ok_or_else(|| Error::invalid("variant needs a feature spectrum"))?;
            if fs.k() != cfg.k {
                return Err(Error::invalid(format!(
                    "feature spectrum holds {} components but config asks for {}",
                    fs.k(),
                    cfg.k
                )));
            }
            op = Some(eigen_eigen_operator(basis.unwrap(), fs, cfg.cx_mode)?);
        }

        let reduced = if cfg.variant == Variant::EigenConcat || cfg.use_order0 {
            let r = inputs
                .reduced
                .ok_or_else(|| Error::invalid("variant needs reduced features"))?;
            if r.ncols() != cfg.k {
                return Err(Error::invalid(format!(
                    "reduced features have width {} but config asks for {}",
                    r.ncols(),
                    cfg.k
                )));
            }
            Some(r)
        } else {
            None
        };

        let raw = if cfg.variant.uses_basis() {
            None
        } else {
            Some(
                inputs
                    .raw_features
                    .ok_or_else(|| Error::invalid("lr/mlp need raw features"))?,
            )
        };

        let n = basis
            .map(|b| b.n())
            .or(raw.map(|r| r.nrows()))
            .expect("either basis or raw features present");

        let input_width = match cfg.variant {
            Variant::Eigen => cfg.d,
            Variant::EigenEigen | Variant::Regeigen => cfg.k + if cfg.use_order0 { cfg.k } else { 0 },
            Variant::EigenConcat => cfg.k + cfg.d,
            Variant::Lr | Variant::Mlp => raw.unwrap().ncols(),
        };

        let bins = match cfg.num_bins {
            Some(b) if cfg.adapt_kind != AdaptKind::Frozen => Some(make_bins(cfg.d, b)?),
            _ => None,
        };
        let adaptation = if cfg.variant.uses_basis() {
            AdaptationParams::init(cfg.adapt_kind, cfg.d, bins)?
        } else {
            AdaptationParams::init(AdaptKind::Frozen, 0, None)?
        };
        let head = Head::init(input_width, cfg.hidden, classes, rng);

        Ok(Model {
            cfg,
            params: ModelParams { adaptation, head },
            basis,
            op,
            reduced,
            raw,
            n,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_width(&self) -> usize {
        self.params.head.layers[0].w.nrows()
    }

    /// Build the embedding under the current adaptation parameters.
    pub fn embedding(&self) -> Result<Array2<f64>> {
        let e = match self.cfg.variant {
            Variant::Eigen => {
                embed_eigen(self.basis.unwrap(), &self.params.adaptation, self.cfg.scale_s)?
            }
            Variant::EigenEigen | Variant::Regeigen => {
                let base = embed_eigen_eigen_with_operator(
                    self.basis.unwrap(),
                    self.op.as_ref().unwrap(),
                    &self.params.adaptation,
                    self.cfg.scale_s,
                )?;
                if self.cfg.use_order0 {
                    augment_order0(&base, self.reduced.unwrap())?
                } else {
                    base
                }
            }
            Variant::EigenConcat => embed_eigen_concat(
                self.basis.unwrap(),
                self.reduced.unwrap(),
                &self.params.adaptation,
                self.cfg.scale_s,
            )?,
            Variant::Lr | Variant::Mlp => self.raw.unwrap().clone(),
        };
        Ok(e)
    }

    pub fn forward(
        &self,
        train: bool,
        fixed_mask: Option<&Array2<f64>>,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Forward> {
        let embedding = self.embedding()?;
        let head = head_forward(
            &embedding,
            &self.params.head,
            self.cfg.dropout,
            fixed_mask,
            train,
            rng,
        )?;
        Ok(Forward { embedding, head })
    }

    /// Evaluation probabilities for an already-built embedding (no dropout).
    pub fn eval_probs(&self, embedding: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(head_forward(embedding, &self.params.head, 0.0, None, false, None)?.probs)
    }

    /// Scalar loss the gradients correspond to: masked mean cross-entropy
    /// plus L2 weight decay on head weights plus the L1 scale penalty.
    pub fn loss(
        &self,
        fwd: &Forward,
        labels: &[usize],
        mask: &[usize],
        reg: RegTerms,
    ) -> Result<f64> {
        let mut total = crate::train::cross_entropy(&fwd.head.probs, labels, mask)?;
        if reg.weight_decay > 0.0 {
            total += 0.5 * reg.weight_decay * self.params.head.weight_sq_sum();
        }
        if reg.l1_lambda > 0.0 && self.params.adaptation.kind != AdaptKind::Frozen {
            total += l1_penalty(&self.params.adaptation, reg.l1_lambda)?.0;
        }
        Ok(total)
    }

    /// Exact analytic gradients of [`Model::loss`] for every parameter,
    /// chained through the embedding into the adaptation. An empty mask
    /// leaves only the regularizer terms.
    pub fn backward(
        &self,
        fwd: &Forward,
        labels: &[usize],
        mask: &[usize],
        reg: RegTerms,
    ) -> Result<Grads> {
        if let Some(&bad) = mask.iter().find(|&&i| i >= self.n) {
            return Err(Error::invalid(format!(
                "mask index {bad} out of range for {} nodes",
                self.n
            )));
        }
        let dlogits = masked_ce_dlogits(&fwd.head.probs, labels, mask);

        let (mut layer_grads, de) =
            head_backward(&fwd.embedding, &self.params.head, &fwd.head, &dlogits);
        if reg.weight_decay > 0.0 {
            for (g, p) in layer_grads.iter_mut().zip(&self.params.head.layers) {
                g.w.scaled_add(reg.weight_decay, &p.w);
            }
        }

        let (mut g1, mut g2) = (Array1::zeros(0), Array1::zeros(0));
        if self.cfg.variant.uses_basis() {
            let basis = self.basis.unwrap();
            let dc = match self.cfg.variant {
                Variant::Eigen => eigen_block_dc(&basis.u, &de.view(), self.cfg.scale_s),
                Variant::EigenConcat => {
                    let block = de.slice(s![.., self.cfg.k..]);
                    eigen_block_dc(&basis.u, &block, self.cfg.scale_s)
                }
                Variant::EigenEigen | Variant::Regeigen => {
                    let main = de.slice(s![.., ..self.cfg.k]);
                    let df = crate::linalg::par_matmul(basis.u.t(), main) * self.cfg.scale_s;
                    let op = self.op.as_ref().unwrap();
                    Array1::from_iter(
                        df.rows()
                            .into_iter()
                            .zip(op.rows())
                            .map(|(dr, mr)| dr.dot(&mr)),
                    )
                }
                _ => unreachable!(),
            };
            let ag = adapt_grad(&basis.sigma, &self.params.adaptation, &dc)?;
            g1 = ag.alpha1;
            g2 = ag.alpha2;
            if reg.l1_lambda > 0.0 && self.params.adaptation.kind != AdaptKind::Frozen {
                let (_, l1g) = l1_penalty(&self.params.adaptation, reg.l1_lambda)?;
                g1 += &l1g;
            }
        }

        Ok(Grads { alpha1: g1, alpha2: g2, layers: layer_grads })
    }
}

/// dLoss/dc for an embedding block of the form `s * U diag(c)`: per-component
/// dot product of the basis column with the upstream gradient column.
fn eigen_block_dc(
    u: &Array2<f64>,
    de_block: &ndarray::ArrayView2<'_, f64>,
    scale_s: f64,
) -> Array1<f64> {
    Array1::from_iter(
        u.columns()
            .into_iter()
            .zip(de_block.columns())
            .map(|(uc, dc)| scale_s * uc.dot(&dc)),
    )
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    bins: Option<crate::adaptation::BinSpec>,
    layer_shapes: Vec<(usize, usize)>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPADCKP1";

/// Write a checkpoint: JSON header (config and shapes) followed by the flat
/// parameter blob as little-endian f64 and an FNV-1a trailer.
pub fn save_checkpoint(path: &std::path::Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let header = CheckpointHeader {
        version: 1,
        config: cfg.clone(),
        bins: params.adaptation.bins.clone(),
        layer_shapes: params
            .head
            .layers
            .iter()
            .map(|l| (l.w.nrows(), l.w.ncols()))
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for v in params.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&crate::cache::fnv1a64(&buf).to_le_bytes());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a checkpoint back into a config and parameter set.
pub fn load_checkpoint(path: &std::path::Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::data(format!("{}: not a checkpoint file", path.display())));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if crate::cache::fnv1a64(body) != u64::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::data(format!("{}: checkpoint checksum mismatch", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if body.len() < 16 + header_len {
        return Err(Error::data(format!("{}: checkpoint truncated", path.display())));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[16..16 + header_len])?;
    if header.version != 1 {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.version
        )));
    }
    let cfg = header.config;
    let adaptation = if cfg.variant.uses_basis() {
        AdaptationParams::init(cfg.adapt_kind, cfg.d, header.bins)?
    } else {
        AdaptationParams::init(AdaptKind::Frozen, 0, None)?
    };
    let layers = header
        .layer_shapes
        .iter()
        .map(|&(rows, cols)| Layer {
            w: Array2::zeros((rows, cols)),
            b: Array1::zeros(cols),
        })
        .collect();
    let mut params = ModelParams { adaptation, head: Head { layers } };

    let blob = &body[16 + header_len..];
    let expected = params.flatten().len();
    if blob.len() != expected * 8 {
        return Err(Error::data(format!(
            "{}: blob holds {} values, header implies {expected}",
            path.display(),
            blob.len() / 8
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("{}: checkpoint holds non-finite values", path.display())));
    }
    params.assign_flat(&flat)?;
    Ok((cfg, params))
}
