//! Reference kernels for the training-side mathematics: smoothed Dice
//! loss, focal loss, their weighted sum, each with analytic gradients, and
//! the cosine-annealing-with-warm-restarts learning-rate schedule.
//!
//! These are verification kernels, not a training engine: gradients are
//! exact closed forms meant to be checked against finite differences.

use thiserror::Error;

/// Probability clamp applied before logs in the focal loss.
pub const FOCAL_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("prediction and target lengths differ: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("prediction {value} at index {index} outside [0, 1]")]
    OutOfRangePrediction { index: usize, value: f64 },
    #[error("target {value} at index {index} is not binary")]
    NonBinaryTarget { index: usize, value: f64 },
    #[error("bad loss config: {0}")]
    BadLossConfig(String),
    #[error("bad schedule config: {0}")]
    BadScheduleConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub focal_weight: f64,
    pub focal_gamma: f64,
    /// Class-balance weight for the positive class; 0.5 weights both
    /// classes equally (no balancing).
    pub focal_alpha: f64,
    pub smooth_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_weight: 1.0,
            focal_weight: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.5,
            smooth_eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.dice_weight < 0.0 || self.focal_weight < 0.0 {
            return Err(NumericsError::BadLossConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.dice_weight == 0.0 && self.focal_weight == 0.0 {
            return Err(NumericsError::BadLossConfig(
                "dice and focal weights cannot both be zero".into(),
            ));
        }
        if self.focal_gamma < 0.0 {
            return Err(NumericsError::BadLossConfig("gamma must be >= 0".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(NumericsError::BadLossConfig(
                "alpha must lie in (0, 1)".into(),
            ));
        }
        if self.smooth_eps <= 0.0 {
            return Err(NumericsError::BadLossConfig(
                "smoothing epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss value with its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn check_inputs(pred: &[f64], target: &[f64]) -> Result<(), NumericsError> {
    if pred.len() != target.len() {
        return Err(NumericsError::ShapeMismatch(pred.len(), target.len()));
    }
    for (i, &p) in pred.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(NumericsError::OutOfRangePrediction { index: i, value: p });
        }
    }
    for (i, &t) in target.iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return Err(NumericsError::NonBinaryTarget { index: i, value: t });
        }
    }
    Ok(())
}

/// Smoothed soft Dice loss `1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`
/// with its per-voxel quotient-rule gradient.
pub fn dice_loss(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<LossOutput, NumericsError> {
    cfg.validate()?;
    check_inputs(pred, target)?;
    let eps = cfg.smooth_eps;
    let mut overlap = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        overlap += p * t;
        sum_p += p;
        sum_t += t;
    }
    let num = 2.0 * overlap + eps;
    let den = sum_p + sum_t + eps;
    let loss = 1.0 - num / den;
    let den_sq = den * den;
    let grad = target
        .iter()
        .map(|&t| -(2.0 * t * den - num) / den_sq)
        .collect();
    Ok(LossOutput { loss, grad })
}

/// Focal loss `mean(-alpha_t (1 - p_t)^gamma ln(p_t))` where `p_t` is the
/// predicted probability of the true class, clamped to
/// `[FOCAL_CLAMP, 1 - FOCAL_CLAMP]` before the log.
pub fn focal_loss(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<LossOutput, NumericsError> {
    cfg.validate()?;
    check_inputs(pred, target)?;
    let n = pred.len() as f64;
    let gamma = cfg.focal_gamma;
    let alpha = cfg.focal_alpha;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p_raw, &t) in pred.iter().zip(target) {
        let p = p_raw.clamp(FOCAL_CLAMP, 1.0 - FOCAL_CLAMP);
        let (term, dterm) = if t == 1.0 {
            let q = 1.0 - p;
            let term = -alpha * q.powf(gamma) * p.ln();
            // d/dp [-a (1-p)^g ln p] = a g (1-p)^(g-1) ln p - a (1-p)^g / p
            let dterm = alpha * gamma * q.powf(gamma - 1.0) * p.ln() - alpha * q.powf(gamma) / p;
            (term, dterm)
        } else {
            let a0 = 1.0 - alpha;
            let q = 1.0 - p;
            let term = -a0 * p.powf(gamma) * q.ln();
            // d/dp [-a0 p^g ln(1-p)] = -a0 g p^(g-1) ln(1-p) + a0 p^g / (1-p)
            let dterm = -a0 * gamma * p.powf(gamma - 1.0) * q.ln() + a0 * p.powf(gamma) / q;
            (term, dterm)
        };
        loss += term;
        grad.push(dterm / n);
    }
    Ok(LossOutput {
        loss: loss / n,
        grad,
    })
}

/// Weighted sum of the Dice and focal losses; the gradient is the same
/// weighted sum of the component gradients.
pub fn dice_focal_loss(
    pred: &[f64],
    target: &[f64],
    cfg: &LossConfig,
) -> Result<LossOutput, NumericsError> {
    let dice = dice_loss(pred, target, cfg)?;
    let focal = focal_loss(pred, target, cfg)?;
    let loss = cfg.dice_weight * dice.loss + cfg.focal_weight * focal.loss;
    let grad = dice
        .grad
        .iter()
        .zip(&focal.grad)
        .map(|(&d, &f)| cfg.dice_weight * d + cfg.focal_weight * f)
        .collect();
    Ok(LossOutput { loss, grad })
}

/// Central-difference gradient of a scalar function of a voxel array.
/// The verification counterpart to the analytic gradients above.
pub fn finite_difference_gradient(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + step;
        let hi = f(&work);
        work[i] = orig - step;
        let lo = f(&work);
        work[i] = orig;
        grad.push((hi - lo) / (2.0 * step));
    }
    grad
}

/// Largest elementwise relative error between two gradients.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Cosine-annealing-with-warm-restarts schedule: within a cycle of length
/// `T_i` the rate falls from `eta_max` to `eta_min` along a half cosine,
/// then resets to `eta_max`; cycle lengths grow geometrically by `t_mult`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub eta_max: f64,
    pub eta_min: f64,
    pub t_0: u64,
    pub t_mult: u64,
}

impl ScheduleConfig {
    pub fn new(eta_max: f64, t_0: u64) -> Self {
        Self {
            eta_max,
            eta_min: 0.0,
            t_0,
            t_mult: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.eta_min >= 0.0 && self.eta_max > self.eta_min) {
            return Err(NumericsError::BadScheduleConfig(format!(
                "need eta_max > eta_min >= 0, got {} and {}",
                self.eta_max, self.eta_min
            )));
        }
        if self.t_0 < 1 || self.t_mult < 1 {
            return Err(NumericsError::BadScheduleConfig(
                "cycle length and growth factor must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at a global step index (cycle restarts included).
pub fn lr_at(step: u64, cfg: &ScheduleConfig) -> Result<f64, NumericsError> {
    cfg.validate()?;
    let (t_cur, t_i) = if cfg.t_mult == 1 {
        (step % cfg.t_0, cfg.t_0)
    } else {
        let mut rem = step;
        let mut len = cfg.t_0;
        while rem >= len {
            rem -= len;
            len = len.saturating_mul(cfg.t_mult);
        }
        (rem, len)
    };
    let phase = std::f64::consts::PI * t_cur as f64 / t_i as f64;
    Ok(cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + phase.cos()))
}
