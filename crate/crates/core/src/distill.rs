//! Online cloud-edge knowledge distillation. A node's lightweight student
//! mimics the cloud teacher's logits through shift/scale logit transforms;
//! the teacher-side shift can carry the fleet-wide historical success rate
//! of each action class, which steers the student toward actions that
//! worked for other nodes at no extra communication cost.

use serde::{Deserialize, Serialize};

use crate::nn::{kl_div, softmax, softmax_temp, Mlp, LOG_EPS};

/// Floor for standard deviations of (near-)constant logit vectors.
const SIGMA_EPS: f64 = 1e-12;

// ============================================================================
// Transform coefficients
// ============================================================================

/// Per-class shift/scale coefficients for one distillation sample. The
/// student logits pass through `(z + student_shift) / student_scale`, the
/// teacher logits through `(v + teacher_shift) / teacher_scale`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaCoeffs {
    pub student_shift: Vec<f64>,
    pub student_scale: Vec<f64>,
    pub teacher_shift: Vec<f64>,
    pub teacher_scale: Vec<f64>,
}

impl KappaCoeffs {
    pub fn validate(&self) -> bool {
        self.student_scale.iter().all(|&s| s > 0.0)
            && self.teacher_scale.iter().all(|&s| s > 0.0)
    }
}

/// One distillation item: the node-state features the teacher scored and
/// the teacher's raw logits over the action classes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistillSample {
    pub input: Vec<f64>,
    pub teacher_logits: Vec<f64>,
}

// ============================================================================
// Fleet success-rate table
// ============================================================================

/// Cloud-side map from coarse node-state buckets (distance decile x
/// SNR-margin quartile) and action class to the historical success rate
/// averaged over every node that tried the class in that bucket.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuccessRateTable {
    dist_buckets: usize,
    snr_buckets: usize,
    classes: usize,
    successes: Vec<f64>,
    attempts: Vec<f64>,
}

impl SuccessRateTable {
    pub fn new(classes: usize) -> Self {
        let (dist_buckets, snr_buckets) = (10, 4);
        let cells = dist_buckets * snr_buckets * classes;
        Self {
            dist_buckets,
            snr_buckets,
            classes,
            successes: vec![0.0; cells],
            attempts: vec![0.0; cells],
        }
    }

    /// Bucket index from normalized distance and SNR margin, both clamped
    /// to [0, 1].
    pub fn bucket(&self, dist_norm: f64, snr_norm: f64) -> usize {
        let d = ((dist_norm.clamp(0.0, 1.0) * self.dist_buckets as f64) as usize)
            .min(self.dist_buckets - 1);
        let s = ((snr_norm.clamp(0.0, 1.0) * self.snr_buckets as f64) as usize)
            .min(self.snr_buckets - 1);
        d * self.snr_buckets + s
    }

    pub fn record(&mut self, bucket: usize, class: usize, success: bool) {
        let cell = bucket * self.classes + class;
        self.attempts[cell] += 1.0;
        if success {
            self.successes[cell] += 1.0;
        }
    }

    /// Success rate in [0, 1] per class for a bucket; classes without data
    /// read 0 (no shift).
    pub fn rates(&self, bucket: usize) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let cell = bucket * self.classes + k;
                if self.attempts[cell] > 0.0 {
                    self.successes[cell] / self.attempts[cell]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

// ============================================================================
// Logit transforms
// ============================================================================

/// Population standard deviation.
pub fn population_std(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Standardize student logits to mean 0 / population std 1. Returns the
/// transformed vector and whether the sigma floor kicked in (constant
/// input).
pub fn transform_student(z: &[f64]) -> (Vec<f64>, bool) {
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sigma = population_std(z);
    let degenerate = sigma <= SIGMA_EPS;
    let s = sigma.max(SIGMA_EPS);
    (z.iter().map(|v| (v - mean) / s).collect(), degenerate)
}

/// Teacher-side transform: per-class shift then a shared scale,
/// `(v + shift) / max(scale, eps)`.
pub fn transform_teacher(v: &[f64], shifts: &[f64], scale: f64) -> Vec<f64> {
    assert_eq!(v.len(), shifts.len());
    let s = scale.max(SIGMA_EPS);
    v.iter().zip(shifts).map(|(x, k)| (x + k) / s).collect()
}

/// The student logits a zero-loss student would produce for teacher logits
/// `v` under the given coefficients, holding the student-side partition
/// sum fixed at `student_exp_sum`. Differentiating this map in a teacher
/// shift yields `(student_scale/teacher_scale) * (1 - softmax(f_v)[k])`,
/// which is strictly positive.
pub fn ideal_student_logits(v: &[f64], kappa: &KappaCoeffs, student_exp_sum: f64) -> Vec<f64> {
    let f_v: Vec<f64> = v
        .iter()
        .zip(&kappa.teacher_shift)
        .zip(&kappa.teacher_scale)
        .map(|((x, shift), scale)| (x + shift) / scale)
        .collect();
    let teacher_exp_sum: f64 = f_v.iter().map(|x| x.exp()).sum();
    let log_ratio = (student_exp_sum / teacher_exp_sum).ln();
    (0..v.len())
        .map(|k| kappa.student_scale[k] * (log_ratio + f_v[k]) - kappa.student_shift[k])
        .collect()
}

/// Closed-form sensitivity of the ideal student logit `k` to the teacher
/// shift `k`.
pub fn teacher_shift_sensitivity(v: &[f64], kappa: &KappaCoeffs, k: usize) -> f64 {
    let f_v: Vec<f64> = v
        .iter()
        .zip(&kappa.teacher_shift)
        .zip(&kappa.teacher_scale)
        .map(|((x, shift), scale)| (x + shift) / scale)
        .collect();
    let soft = softmax(&f_v);
    kappa.student_scale[k] / kappa.teacher_scale[k] * (1.0 - soft[k])
}

// ============================================================================
// Distiller
// ============================================================================

/// How teacher and student logits are matched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    /// Student standardized; teacher scaled by its own std and shifted per
    /// class by the fleet success rates.
    SuccessShift,
    /// Both sides standardized to mean 0 / std 1.
    LogitStd,
    /// Classic fixed-temperature softening on both sides.
    FixedTemp,
}

impl DistillMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "success-shift" => Some(Self::SuccessShift),
            "logit-std" => Some(Self::LogitStd),
            "fixed-T" | "fixed-temp" => Some(Self::FixedTemp),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SuccessShift => "success-shift",
            Self::LogitStd => "logit-std",
            Self::FixedTemp => "fixed-T",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistillParams {
    pub mode: DistillMode,
    /// Temperature for the fixed-temperature mode.
    pub temperature: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        Self {
            mode: DistillMode::SuccessShift,
            temperature: 2.0,
            learning_rate: 0.01,
            grad_clip: 5.0,
        }
    }
}

/// Outcome of one distillation step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    /// Step aborted because the loss or gradient went non-finite.
    pub aborted: bool,
    /// Sigma floor used on a constant logit vector.
    pub degenerate_sigma: bool,
}

/// Teacher target distribution for a sample under the given mode.
/// `class_rates` is only consulted in success-shift mode.
pub fn teacher_distribution(
    params: &DistillParams,
    teacher_logits: &[f64],
    class_rates: Option<&[f64]>,
) -> Vec<f64> {
    match params.mode {
        DistillMode::FixedTemp => softmax_temp(teacher_logits, params.temperature)
            .expect("temperature validated at config load"),
        DistillMode::LogitStd => {
            let (f_v, _) = transform_student(teacher_logits);
            softmax(&f_v)
        }
        DistillMode::SuccessShift => {
            let zeros;
            let shifts = match class_rates {
                Some(r) => r,
                None => {
                    zeros = vec![0.0; teacher_logits.len()];
                    &zeros
                }
            };
            let sigma = population_std(teacher_logits);
            softmax(&transform_teacher(teacher_logits, shifts, sigma))
        }
    }
}

/// Loss value without touching the student parameters; shared by the
/// finite-difference checks.
pub fn distill_loss(
    params: &DistillParams,
    student: &Mlp,
    sample: &DistillSample,
    class_rates: Option<&[f64]>,
) -> f64 {
    let z = student.forward(&sample.input);
    let p = student_distribution(params, &z);
    let q = teacher_distribution(params, &sample.teacher_logits, class_rates);
    kl_div(&p, &q)
}

fn student_distribution(params: &DistillParams, z: &[f64]) -> Vec<f64> {
    match params.mode {
        DistillMode::FixedTemp => {
            softmax_temp(z, params.temperature).expect("temperature validated at config load")
        }
        _ => softmax(&transform_student(z).0),
    }
}

/// One gradient step of the KL loss between the transformed student and
/// teacher distributions. Returns the loss; a non-finite loss or gradient
/// aborts the step and leaves the parameters untouched.
pub fn distill_step(
    params: &DistillParams,
    student: &mut Mlp,
    sample: &DistillSample,
    class_rates: Option<&[f64]>,
) -> StepOutcome {
    let cache = student.forward_cached(&sample.input);
    let z = cache.output().to_vec();
    let k = z.len() as f64;

    let q = teacher_distribution(params, &sample.teacher_logits, class_rates);
    let mut degenerate = false;

    // dL/dz for L = KL(p || q) with p the transformed student softmax.
    let dloss_dz: Vec<f64> = match params.mode {
        DistillMode::FixedTemp => {
            let p = softmax_temp(&z, params.temperature).unwrap();
            let loss_terms = kl_terms(&p, &q);
            let loss: f64 = loss_terms.iter().sum();
            p.iter()
                .zip(&loss_terms)
                .map(|(&pi, _)| pi)
                .zip(log_ratio(&p, &q))
                .map(|(pi, lr)| pi * (lr - loss) / params.temperature)
                .collect()
        }
        _ => {
            let (f, degen) = transform_student(&z);
            degenerate = degen;
            let p = softmax(&f);
            let loss: f64 = kl_terms(&p, &q).iter().sum();
            // Through the softmax: g_j = p_j (log(p_j/q_j) - L), then
            // through the standardization f = (z - mean)/sigma:
            // dL/dz_j = (g_j - mean(g) - f_j * dot(g, f)/K) / sigma.
            let g: Vec<f64> =
                p.iter().zip(log_ratio(&p, &q)).map(|(&pi, lr)| pi * (lr - loss)).collect();
            let g_mean = g.iter().sum::<f64>() / k;
            let gf_dot: f64 = g.iter().zip(&f).map(|(gi, fi)| gi * fi).sum();
            let sigma = population_std(&z).max(SIGMA_EPS);
            g.iter()
                .zip(&f)
                .map(|(gi, fi)| (gi - g_mean - fi * gf_dot / k) / sigma)
                .collect()
        }
    };

    let p = student_distribution(params, &z);
    let loss = kl_div(&p, &q);
    if !loss.is_finite() {
        return StepOutcome { loss, aborted: true, degenerate_sigma: degenerate };
    }
    let grads = student.backward(&cache, &dloss_dz);
    if !grads.is_finite() {
        return StepOutcome { loss, aborted: true, degenerate_sigma: degenerate };
    }
    student.apply_step(&grads, params.learning_rate, Some(params.grad_clip), -1.0);
    StepOutcome { loss, aborted: false, degenerate_sigma: degenerate }
}

fn kl_terms(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi <= 0.0 { 0.0 } else { pi * (pi / qi.max(LOG_EPS)).ln() })
        .collect()
}

fn log_ratio<'a>(p: &'a [f64], q: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    p.iter().zip(q).map(|(&pi, &qi)| (pi.max(LOG_EPS) / qi.max(LOG_EPS)).ln())
}
