//! Learnable eigenvalue adaptation.
//!
//! Each singular value is reweighted by `C(sigma; alpha) = g_s(a1) *
//! sigma^(g_e(a2))`. Two parameterizations are supported: `C1` uses a
//! per-value sigmoid scale with one shared exponent, `C2` uses per-value
//! rectified scales and exponents. `Frozen` is the identity and carries no
//! parameters. Contiguous bins over the sorted spectrum can tie parameters
//! for regularization; gradients are analytic, with kink subgradients fixed
//! at zero and the conventions `0^0 = 1` and `d(sigma^e)/de = 0` at
//! `sigma = 0`.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which adaptation function a parameter set realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptKind {
    /// Sigmoid scale per value, one shared rectified exponent.
    C1,
    /// Rectified scale and exponent per value.
    C2,
    /// Identity; no learnable parameters.
    Frozen,
}

impl std::fmt::Display for AdaptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdaptKind::C1 => write!(f, "c1"),
            AdaptKind::C2 => write!(f, "c2"),
            AdaptKind::Frozen => write!(f, "frozen"),
        }
    }
}

/// Contiguous, equal-count bins over the sorted spectrum indices `0..d`.
///
/// `boundaries` has `num_bins + 1` ascending entries starting at 0 and ending
/// at `d`; sizes differ by at most one, with the remainder going to the
/// earliest bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    d: usize,
    boundaries: Vec<usize>,
}

impl BinSpec {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_bins(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Bin that spectrum index `i` belongs to.
    pub fn bin_of(&self, i: usize) -> usize {
        debug_assert!(i < self.d);
        self.boundaries.partition_point(|&b| b <= i) - 1
    }
}

/// Partition `0..d` into `num_bins` contiguous bins, remainder to the front.
pub fn make_bins(d: usize, num_bins: usize) -> Result<BinSpec> {
    if num_bins == 0 || num_bins > d {
        return Err(Error::invalid(format!(
            "bin count {num_bins} outside valid range 1..={d}"
        )));
    }
    let base = d / num_bins;
    let remainder = d % num_bins;
    let mut boundaries = Vec::with_capacity(num_bins + 1);
    let mut at = 0;
    boundaries.push(0);
    for b in 0..num_bins {
        at += base + usize::from(b < remainder);
        boundaries.push(at);
    }
    Ok(BinSpec { d, boundaries })
}

/// Learnable adaptation parameters, optionally bin-tied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    pub kind: AdaptKind,
    /// Scale parameters: `num_bins` (or `d`) entries; empty for `Frozen`.
    pub alpha1: Array1<f64>,
    /// Exponent parameters: one entry for `C1`, same length as `alpha1` for
    /// `C2`, empty for `Frozen`.
    pub alpha2: Array1<f64>,
    pub bins: Option<BinSpec>,
}

impl AdaptationParams {
    /// Identity-biased initialization: `C2` starts at an exact identity
    /// (`a1 = a2 = 1`); `C1` starts at scale one-half (`a1 = 0`) with unit
    /// exponent.
    pub fn init(kind: AdaptKind, d: usize, bins: Option<BinSpec>) -> Result<Self> {
        if let Some(b) = &bins {
            if b.d() != d {
                return Err(Error::invalid(format!(
                    "bin spec covers {} values but d = {d}",
                    b.d()
                )));
            }
        }
        let p1 = bins.as_ref().map_or(d, |b| b.num_bins());
        let (alpha1, alpha2) = match kind {
            AdaptKind::Frozen => (Array1::zeros(0), Array1::zeros(0)),
            AdaptKind::C1 => (Array1::zeros(p1), Array1::ones(1)),
            AdaptKind::C2 => (Array1::ones(p1), Array1::ones(p1)),
        };
        Ok(AdaptationParams { kind, alpha1, alpha2, bins })
    }

    /// Number of learnable reals: `2B` for binned `C2`, `B + 1` for binned
    /// `C1`, zero for `Frozen`.
    pub fn num_learnable(&self) -> usize {
        self.alpha1.len() + self.alpha2.len()
    }

    fn param_index(&self, i: usize) -> usize {
        match &self.bins {
            Some(b) => b.bin_of(i),
            None => i,
        }
    }

    fn check_shapes(&self, d: usize) -> Result<()> {
        let p1 = self.bins.as_ref().map_or(d, |b| b.num_bins());
        let ok = match self.kind {
            AdaptKind::Frozen => self.alpha1.is_empty() && self.alpha2.is_empty(),
            AdaptKind::C1 => self.alpha1.len() == p1 && self.alpha2.len() == 1,
            AdaptKind::C2 => self.alpha1.len() == p1 && self.alpha2.len() == p1,
        };
        if !ok || self.bins.as_ref().is_some_and(|b| b.d() != d) {
            return Err(Error::invalid(format!(
                "adaptation parameter shapes ({}, {}) inconsistent with d = {d}",
                self.alpha1.len(),
                self.alpha2.len()
            )));
        }
        Ok(())
    }
}

fn sigmoid_scale(a: f64) -> f64 {
    1.0 / (1.0 + a.exp())
}

/// Apply the adaptation function to a nonnegative, non-increasing spectrum.
pub fn adapt(sigma: &Array1<f64>, p: &AdaptationParams) -> Result<Array1<f64>> {
    if let Some(&bad) = sigma.iter().find(|&&s| s < 0.0) {
        return Err(Error::invalid(format!(
            "adaptation requires nonnegative singular values, got {bad}"
        )));
    }
    p.check_shapes(sigma.len())?;
    let out = match p.kind {
        AdaptKind::Frozen => sigma.clone(),
        AdaptKind::C1 => {
            let exponent = p.alpha2[0].max(0.0);
            Array1::from_iter(sigma.iter().enumerate().map(|(i, &s)| {
                sigmoid_scale(p.alpha1[p.param_index(i)]) * s.powf(exponent)
            }))
        }
        AdaptKind::C2 => Array1::from_iter(sigma.iter().enumerate().map(|(i, &s)| {
            let b = p.param_index(i);
            p.alpha1[b].max(0.0) * s.powf(p.alpha2[b].max(0.0))
        })),
    };
    Ok(out)
}

/// Gradients of the adapted values with respect to the parameters, given the
/// upstream gradient on each adapted value. Bin-tied parameters accumulate
/// over their members.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptGrad {
    pub alpha1: Array1<f64>,
    pub alpha2: Array1<f64>,
}

pub fn adapt_grad(
    sigma: &Array1<f64>,
    p: &AdaptationParams,
    upstream: &Array1<f64>,
) -> Result<AdaptGrad> {
    if sigma.len() != upstream.len() {
        return Err(Error::invalid(format!(
            "upstream gradient length {} does not match spectrum length {}",
            upstream.len(),
            sigma.len()
        )));
    }
    p.check_shapes(sigma.len())?;
    let mut g1 = Array1::<f64>::zeros(p.alpha1.len());
    let mut g2 = Array1::<f64>::zeros(p.alpha2.len());
    match p.kind {
        AdaptKind::Frozen => {}
        AdaptKind::C1 => {
            let a2 = p.alpha2[0];
            let exponent = a2.max(0.0);
            for (i, (&s, &up)) in sigma.iter().zip(upstream.iter()).enumerate() {
                let b = p.param_index(i);
                let scale = sigmoid_scale(p.alpha1[b]);
                let pow = s.powf(exponent);
                // d(sigmoid_scale)/da = -scale * (1 - scale)
                g1[b] += up * pow * (-scale * (1.0 - scale));
                if a2 > 0.0 && s > 0.0 {
                    g2[0] += up * scale * pow * s.ln();
                }
            }
        }
        AdaptKind::C2 => {
            for (i, (&s, &up)) in sigma.iter().zip(upstream.iter()).enumerate() {
                let b = p.param_index(i);
                let a1 = p.alpha1[b];
                let a2 = p.alpha2[b];
                let pow = s.powf(a2.max(0.0));
                if a1 > 0.0 {
                    g1[b] += up * pow;
                }
                if a2 > 0.0 && s > 0.0 {
                    g2[b] += up * a1.max(0.0) * pow * s.ln();
                }
            }
        }
    }
    Ok(AdaptGrad { alpha1: g1, alpha2: g2 })
}

/// L1 penalty on the realized scales `|g_s(a1)|`, with its gradient in the
/// raw `alpha1` parameters. The subgradient at zero is zero.
pub fn l1_penalty(p: &AdaptationParams, lambda: f64) -> Result<(f64, Array1<f64>)> {
    if p.kind == AdaptKind::Frozen {
        return Err(Error::invalid("L1 penalty undefined for frozen adaptation"));
    }
    let mut value = 0.0;
    let mut grad = Array1::<f64>::zeros(p.alpha1.len());
    for (i, &a) in p.alpha1.iter().enumerate() {
        match p.kind {
            AdaptKind::C1 => {
                // g_s is a positive sigmoid, so |g_s| = g_s.
                let s = sigmoid_scale(a);
                value += s;
                grad[i] = lambda * (-s * (1.0 - s));
            }
            AdaptKind::C2 => {
                value += a.max(0.0);
                grad[i] = if a > 0.0 { lambda } else { 0.0 };
            }
            AdaptKind::Frozen => unreachable!(),
        }
    }
    Ok((lambda * value, grad))
}
