//! Loss functions and their gradients.
//!
//! `senone_loss` is the frame-averaged cross-entropy between predicted
//! posteriors and senone labels; its gradient is returned w.r.t. the
//! pre-softmax logits (the fused `posterior - target` form, exact for a
//! softmax head). `disc_loss` is the SD/SI discrimination cross-entropy; it
//! returns gradients w.r.t. both discriminator output vectors. `kld_target`
//! builds the interpolated soft targets that realize the KL-regularized
//! adaptation baseline.

use crate::error::{Error, Result};
use crate::nn::PROB_EPS;
use crate::tensor::Tensor2D;

/// Aligned senone labels for a batch of frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeq(Vec<u32>);

impl LabelSeq {
    pub fn new(labels: Vec<u32>) -> Self {
        LabelSeq(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, t: usize) -> u32 {
        self.0[t]
    }

    /// Labels at the given positions, in order.
    pub fn select(&self, indices: &[usize]) -> LabelSeq {
        LabelSeq(indices.iter().map(|&i| self.0[i]).collect())
    }

    /// Checks every label against the senone-set size.
    pub fn validate(&self, num_senones: usize) -> Result<()> {
        for (t, &y) in self.0.iter().enumerate() {
            if y as usize >= num_senones {
                return Err(Error::invalid(format!(
                    "label {y} at frame {t} is outside the senone set of size {num_senones}"
                )));
            }
        }
        Ok(())
    }
}

impl From<Vec<u32>> for LabelSeq {
    fn from(v: Vec<u32>) -> Self {
        LabelSeq(v)
    }
}

/// A scalar loss plus the gradient w.r.t. the loss's input batch.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor2D,
}

/// Discrimination loss with gradients w.r.t. both output vectors.
#[derive(Debug, Clone)]
pub struct DiscLossValue {
    pub value: f64,
    pub grad_sd: Vec<f64>,
    pub grad_si: Vec<f64>,
}

/// Frame-averaged cross-entropy against hard labels:
/// `-(1/T) * sum_t log p(y_t)`.
///
/// The returned gradient is w.r.t. the pre-softmax logits of the classifier
/// head, `(posterior - onehot) / T`.
pub fn senone_loss(posteriors: &Tensor2D, labels: &LabelSeq) -> Result<LossValue> {
    if posteriors.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} posterior rows but {} labels",
            posteriors.rows(),
            labels.len()
        )));
    }
    if posteriors.rows() == 0 {
        return Err(Error::invalid("cannot average a loss over zero frames"));
    }
    labels.validate(posteriors.cols())?;
    let t_count = posteriors.rows() as f64;
    let mut sum = 0.0;
    let mut grad = posteriors.clone();
    for t in 0..posteriors.rows() {
        let y = labels.get(t) as usize;
        sum += posteriors.get(t, y).max(PROB_EPS).ln();
        let row = grad.row_mut(t);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= t_count;
        }
    }
    Ok(LossValue {
        value: -sum / t_count,
        grad,
    })
}

/// Cross-entropy against arbitrary soft target rows (each summing to one):
/// `-(1/T) * sum_t sum_s target[t,s] * log p[t,s]`.
///
/// Gradient is the fused form `(posterior - target) / T`, w.r.t. logits.
pub fn soft_target_loss(posteriors: &Tensor2D, targets: &Tensor2D) -> Result<LossValue> {
    if posteriors.rows() != targets.rows() || posteriors.cols() != targets.cols() {
        return Err(Error::invalid(format!(
            "posteriors are {}x{} but targets are {}x{}",
            posteriors.rows(),
            posteriors.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if posteriors.rows() == 0 {
        return Err(Error::invalid("cannot average a loss over zero frames"));
    }
    let t_count = posteriors.rows() as f64;
    let mut sum = 0.0;
    let mut grad = Tensor2D::zeros(posteriors.rows(), posteriors.cols());
    for t in 0..posteriors.rows() {
        let p = posteriors.row(t);
        let tg = targets.row(t);
        let g = grad.row_mut(t);
        for s in 0..p.len() {
            sum += tg[s] * p[s].max(PROB_EPS).ln();
            g[s] = (p[s] - tg[s]) / t_count;
        }
    }
    Ok(LossValue {
        value: -sum / t_count,
        grad,
    })
}

/// SD/SI discrimination cross-entropy:
/// `-(1/T) * sum_t [log p_sd(t) + log(1 - p_si(t))]`,
/// where `p_sd` is the discriminator on SD-origin inputs and `p_si` on
/// SI-origin inputs. Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`
/// before any logarithm or reciprocal.
pub fn disc_loss(p_sd: &[f64], p_si: &[f64]) -> Result<DiscLossValue> {
    if p_sd.len() != p_si.len() {
        return Err(Error::invalid(format!(
            "p_sd has {} entries but p_si has {}",
            p_sd.len(),
            p_si.len()
        )));
    }
    if p_sd.is_empty() {
        return Err(Error::invalid("cannot average a loss over zero frames"));
    }
    for (t, &p) in p_sd.iter().chain(p_si.iter()).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "probability {p} at position {t} is outside [0, 1]"
            )));
        }
    }
    let t_count = p_sd.len() as f64;
    let mut sum = 0.0;
    let mut grad_sd = Vec::with_capacity(p_sd.len());
    let mut grad_si = Vec::with_capacity(p_si.len());
    for (&a, &b) in p_sd.iter().zip(p_si) {
        let pa = a.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let pb = b.clamp(PROB_EPS, 1.0 - PROB_EPS);
        sum += pa.ln() + (1.0 - pb).ln();
        grad_sd.push(-1.0 / (t_count * pa));
        grad_si.push(1.0 / (t_count * (1.0 - pb)));
    }
    Ok(DiscLossValue {
        value: -sum / t_count,
        grad_sd,
        grad_si,
    })
}

/// Discrimination loss over senone posterior vectors. The functional form is
/// identical to `disc_loss`; only the discriminator inputs differ, so this
/// delegates to the same implementation.
pub fn disc_loss_sp(p_sd: &[f64], p_si: &[f64]) -> Result<DiscLossValue> {
    disc_loss(p_sd, p_si)
}

/// Interpolated adaptation targets:
/// `row t = (1 - rho) * onehot(y_t) + rho * si_posteriors[t]`.
///
/// Training against these targets with cross-entropy realizes the
/// KL-regularized baseline; `rho = 0` is plain fine-tuning and `rho = 1`
/// pins the targets to the frozen SI posteriors.
pub fn kld_target(labels: &LabelSeq, si_posteriors: &Tensor2D, rho: f64) -> Result<Tensor2D> {
    if !(rho.is_finite() && (0.0..=1.0).contains(&rho)) {
        return Err(Error::invalid(format!(
            "regularization weight rho must lie in [0, 1], got {rho}"
        )));
    }
    if labels.len() != si_posteriors.rows() {
        return Err(Error::invalid(format!(
            "{} labels but {} posterior rows",
            labels.len(),
            si_posteriors.rows()
        )));
    }
    labels.validate(si_posteriors.cols())?;
    let mut targets = Tensor2D::zeros(si_posteriors.rows(), si_posteriors.cols());
    for t in 0..si_posteriors.rows() {
        let y = labels.get(t) as usize;
        let si = si_posteriors.row(t);
        let row = targets.row_mut(t);
        for s in 0..row.len() {
            let hard = if s == y { 1.0 } else { 0.0 };
            row[s] = (1.0 - rho) * hard + rho * si[s];
        }
    }
    Ok(targets)
}

/// Kullback-Leibler divergence `sum_i p_i * ln(p_i / q_i)` between two
/// categorical distributions. `q` entries are clamped to at least
/// `PROB_EPS` inside the logarithm.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::invalid(
            "KL divergence needs two equal-length nonempty distributions",
        ));
    }
    for dist in [p, q] {
        let mut sum = 0.0;
        for &v in dist {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "distribution entry {v} is not a probability"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            kl += pi * (pi / qi.max(PROB_EPS)).ln();
        }
    }
    Ok(kl)
}
