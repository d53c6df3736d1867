//! Detection loss formulas as plain numeric kernels, with analytic gradients.
//!
//! Natural logarithms throughout. A logarithm of zero is reported as
//! [`LossError::Domain`], never clamped.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("log of zero: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

fn lit<T: Float>(v: f64) -> T {
    T::from(v).expect("literal fits")
}

fn ln_checked<T: Float>(x: T, what: impl FnOnce() -> String) -> Result<T, LossError> {
    if x <= T::zero() {
        Err(LossError::Domain(what()))
    } else {
        Ok(x.ln())
    }
}

/// `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1<T: Float>(x: T) -> T {
    if x.abs() < T::one() {
        lit::<T>(0.5) * x * x
    } else {
        x.abs() - lit(0.5)
    }
}

/// Derivative of [`smooth_l1`]: `x` inside the unit interval, `sign(x)` outside.
pub fn smooth_l1_grad<T: Float>(x: T) -> T {
    if x.abs() < T::one() {
        x
    } else {
        x.signum()
    }
}

/// Probabilities over `C + 1` classes, index 0 being background.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution<T> {
    probs: Vec<T>,
}

impl<T: Float> ClassDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self, LossError> {
        if probs.is_empty() {
            return Err(LossError::Invalid("empty class distribution".into()));
        }
        if probs.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(LossError::Invalid("probability outside [0, 1]".into()));
        }
        let sum = probs.iter().fold(T::zero(), |a, &b| a + b);
        if (sum - T::one()).abs() > lit(1e-9) {
            return Err(LossError::Invalid(format!(
                "probabilities sum to {}",
                sum.to_f64().unwrap_or(f64::NAN)
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len() - 1
    }
}

/// Predicted offsets `t` and ground-truth offsets `v`, both `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTarget<T> {
    pub predicted: [T; 4],
    pub target: [T; 4],
}

impl<T: Float> RegressionTarget<T> {
    pub fn new(predicted: [T; 4], target: [T; 4]) -> Result<Self, LossError> {
        if predicted.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(LossError::Invalid("non-finite regression offset".into()));
        }
        Ok(Self { predicted, target })
    }

    pub fn localization_loss(&self) -> T {
        self.predicted
            .iter()
            .zip(&self.target)
            .fold(T::zero(), |acc, (&t, &v)| acc + smooth_l1(t - v))
    }
}

/// Fast R-CNN multi-task loss: `-ln p_u + lambda [u >= 1] sum smooth_l1(t_i - v_i)`.
pub fn frcnn_loss<T: Float>(
    p: &ClassDistribution<T>,
    u: usize,
    t: &RegressionTarget<T>,
    lambda: T,
) -> Result<T, LossError> {
    let pu = *p
        .probs
        .get(u)
        .ok_or_else(|| LossError::Invalid(format!("class {u} outside 0..={}", p.class_count())))?;
    let cls = -ln_checked(pu, || format!("p_{u} = 0"))?;
    let loc = if u >= 1 { lambda * t.localization_loss() } else { T::zero() };
    Ok(cls + loc)
}

/// Gradient of [`frcnn_loss`]: `(d/dp_u, d/dt)`.
pub fn frcnn_loss_grad<T: Float>(
    p: &ClassDistribution<T>,
    u: usize,
    t: &RegressionTarget<T>,
    lambda: T,
) -> Result<(T, [T; 4]), LossError> {
    frcnn_loss(p, u, t, lambda)?;
    let d_pu = -T::one() / p.probs[u];
    let mut d_t = [T::zero(); 4];
    if u >= 1 {
        for (g, (&ti, &vi)) in d_t.iter_mut().zip(t.predicted.iter().zip(&t.target)) {
            *g = lambda * smooth_l1_grad(ti - vi);
        }
    }
    Ok((d_pu, d_t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpnAnchor<T> {
    /// Predicted objectness.
    pub prob: T,
    pub positive: bool,
    pub coords: [T; 4],
    pub target_coords: [T; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnBatchInput<T> {
    pub anchors: Vec<RpnAnchor<T>>,
    pub n_cls: T,
    pub n_reg: T,
    pub lambda: T,
}

impl<T: Float> RpnBatchInput<T> {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.n_cls > T::zero() && self.n_reg > T::zero()) {
            return Err(LossError::Invalid("normalizers must be positive".into()));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if !(a.prob >= T::zero() && a.prob <= T::one()) {
                return Err(LossError::Invalid(format!("anchor {i}: probability outside [0, 1]")));
            }
            if a.coords.iter().chain(&a.target_coords).any(|v| !v.is_finite()) {
                return Err(LossError::Invalid(format!("anchor {i}: non-finite coordinate")));
            }
        }
        Ok(())
    }
}

fn rpn_log_term<T: Float>(i: usize, a: &RpnAnchor<T>) -> Result<T, LossError> {
    if a.positive {
        ln_checked(a.prob, || format!("anchor {i}: p = 0 with positive label"))
    } else {
        ln_checked(T::one() - a.prob, || format!("anchor {i}: p = 1 with negative label"))
    }
}

/// Region proposal loss: mean binary log loss over `n_cls` plus
/// `lambda / n_reg` times the smooth-L1 regression of positive anchors.
pub fn rpn_loss<T: Float>(batch: &RpnBatchInput<T>) -> Result<T, LossError> {
    batch.validate()?;
    let mut cls = T::zero();
    let mut reg = T::zero();
    for (i, a) in batch.anchors.iter().enumerate() {
        cls = cls - rpn_log_term(i, a)?;
        if a.positive {
            reg = reg
                + a.coords
                    .iter()
                    .zip(&a.target_coords)
                    .fold(T::zero(), |acc, (&t, &s)| acc + smooth_l1(t - s));
        }
    }
    Ok(cls / batch.n_cls + batch.lambda * reg / batch.n_reg)
}

/// Per-anchor gradient of [`rpn_loss`]: `(d/dp_i, d/dt_i)`.
pub fn rpn_loss_grad<T: Float>(batch: &RpnBatchInput<T>) -> Result<Vec<(T, [T; 4])>, LossError> {
    rpn_loss(batch)?;
    Ok(batch
        .anchors
        .iter()
        .map(|a| {
            let d_p = if a.positive {
                -T::one() / (a.prob * batch.n_cls)
            } else {
                T::one() / ((T::one() - a.prob) * batch.n_cls)
            };
            let mut d_t = [T::zero(); 4];
            if a.positive {
                for (g, (&t, &s)) in d_t.iter_mut().zip(a.coords.iter().zip(&a.target_coords)) {
                    *g = batch.lambda * smooth_l1_grad(t - s) / batch.n_reg;
                }
            }
            (d_p, d_t)
        })
        .collect())
}

/// One proposal cluster treated as a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct BagCluster<T> {
    /// Cluster confidence `S_n`.
    pub confidence: T,
    /// Bag label `y_n`, a class index below the class count.
    pub label: usize,
    /// Scores of the members for the bag label; length is `M_n`.
    pub member_scores: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundProposal<T> {
    pub weight: T,
    /// Background-class score.
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagLossInput<T> {
    pub proposal_count: usize,
    pub class_count: usize,
    pub clusters: Vec<BagCluster<T>>,
    pub background: Vec<BackgroundProposal<T>>,
}

impl<T: Float> BagLossInput<T> {
    pub fn validate(&self) -> Result<(), LossError> {
        let members: usize = self.clusters.iter().map(|c| c.member_scores.len()).sum();
        if members + self.background.len() != self.proposal_count || self.proposal_count == 0 {
            return Err(LossError::Invalid(format!(
                "{members} cluster members + {} background != {} proposals",
                self.background.len(),
                self.proposal_count
            )));
        }
        let unit = |v: T| v >= T::zero() && v <= T::one();
        for (n, c) in self.clusters.iter().enumerate() {
            if c.member_scores.is_empty() {
                return Err(LossError::Invalid(format!("cluster {n} is empty")));
            }
            if c.label >= self.class_count {
                return Err(LossError::Invalid(format!("cluster {n}: label {} out of range", c.label)));
            }
            if !unit(c.confidence) || !c.member_scores.iter().all(|&s| unit(s)) {
                return Err(LossError::Invalid(format!("cluster {n}: value outside [0, 1]")));
            }
        }
        for (r, b) in self.background.iter().enumerate() {
            if !unit(b.weight) || !unit(b.score) {
                return Err(LossError::Invalid(format!("background {r}: value outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Bag loss over proposal clusters:
/// `-(1/R) (sum_n S_n M_n ln(mean of member scores) + sum_bg lambda_r ln phi_r)`.
pub fn pcl_bag_loss<T: Float>(input: &BagLossInput<T>) -> Result<T, LossError> {
    input.validate()?;
    let mut total = T::zero();
    for (n, c) in input.clusters.iter().enumerate() {
        let m = T::from(c.member_scores.len()).expect("count fits");
        let sum = c.member_scores.iter().fold(T::zero(), |a, &b| a + b);
        total = total + c.confidence * m * ln_checked(sum / m, || format!("cluster {n}: member scores sum to 0"))?;
    }
    for (r, b) in input.background.iter().enumerate() {
        total = total + b.weight * ln_checked(b.score, || format!("background {r}: score 0"))?;
    }
    Ok((T::zero() - total) / T::from(input.proposal_count).expect("count fits"))
}

/// Gradient of [`pcl_bag_loss`] with respect to each member score (per
/// cluster) and each background score.
pub fn pcl_bag_loss_grad<T: Float>(input: &BagLossInput<T>) -> Result<(Vec<Vec<T>>, Vec<T>), LossError> {
    pcl_bag_loss(input)?;
    let r = T::from(input.proposal_count).expect("count fits");
    let clusters = input
        .clusters
        .iter()
        .map(|c| {
            let m = T::from(c.member_scores.len()).expect("count fits");
            let sum = c.member_scores.iter().fold(T::zero(), |a, &b| a + b);
            vec![-(c.confidence * m / sum) / r; c.member_scores.len()]
        })
        .collect();
    let background = input.background.iter().map(|b| -(b.weight / b.score) / r).collect();
    Ok((clusters, background))
}
