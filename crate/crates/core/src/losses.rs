//! Training objectives: cross-entropy, batch-hard soft-margin triplet,
//! temperature-scaled distillation and pairwise distance preservation, plus
//! their weighted combination.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the student-side input. Teacher-side inputs are constants.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{argument, config, Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Distillation temperature.
    pub tau: f64,
    /// Weight of the distillation term.
    pub alpha: f64,
    /// Weight of the distance-preservation term.
    pub beta: f64,
    pub enable_ce: bool,
    pub enable_tr: bool,
    pub enable_kd: bool,
    pub enable_dp: bool,
    pub distance: Metric,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 10.0,
            alpha: 1e-1,
            beta: 1e-4,
            enable_ce: true,
            enable_tr: true,
            enable_kd: true,
            enable_dp: true,
            distance: Metric::Euclidean,
        }
    }
}

impl LossConfig {
    /// Teacher-stage objective: classification and triplet only.
    pub fn teacher() -> Self {
        Self {
            enable_kd: false,
            enable_dp: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return config("tau must be > 0");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return config("alpha and beta must be >= 0");
        }
        if !(self.enable_ce || self.enable_tr || self.enable_kd || self.enable_dp) {
            return config("at least one loss term must be enabled");
        }
        Ok(())
    }

    pub fn needs_teacher(&self) -> bool {
        self.enable_kd || self.enable_dp
    }
}

/// A scalar loss and its gradient with respect to the differentiable input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains NaN or infinite values")))
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Pairwise distances between rows; symmetric with an exact zero diagonal.
pub fn pairwise_distance_matrix(x: &Matrix, metric: Metric) -> Result<Matrix> {
    check_finite(x, "embeddings")?;
    let b = x.rows();
    if b == 0 {
        return argument("pairwise distances need at least one row");
    }
    let norms: Vec<f64> = (0..b).map(|i| norm(x.row(i))).collect();
    let mut d = Matrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let v = match metric {
                Metric::Euclidean => libm::sqrt(
                    x.row(i)
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum(),
                ),
                Metric::Cosine => {
                    let denom = norms[i] * norms[j];
                    let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, c)| a * c).sum();
                    if denom > 0.0 {
                        1.0 - dot / denom
                    } else {
                        1.0
                    }
                }
            };
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    Ok(d)
}

/// Backpropagates an upstream gradient over distance entries to the rows.
/// `upstream[i][j]` is ∂L/∂D[i,j]; both triangles are honoured.
fn pairwise_backward(x: &Matrix, dist: &Matrix, upstream: &Matrix, metric: Metric) -> Matrix {
    let (b, dim) = x.shape();
    let mut grad = Matrix::zeros(b, dim);
    let norms: Vec<f64> = (0..b).map(|i| norm(x.row(i))).collect();
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let g = upstream.get(i, j);
            if g == 0.0 {
                continue;
            }
            // contribution of D[i,j] to row i and row j
            match metric {
                Metric::Euclidean => {
                    let d = dist.get(i, j);
                    if d <= 0.0 {
                        continue;
                    }
                    for k in 0..dim {
                        let diff = (x.get(i, k) - x.get(j, k)) / d;
                        grad.add_at(i, k, g * diff);
                        grad.add_at(j, k, -g * diff);
                    }
                }
                Metric::Cosine => {
                    let (ni, nj) = (norms[i], norms[j]);
                    if ni <= 0.0 || nj <= 0.0 {
                        continue;
                    }
                    let cos = 1.0 - dist.get(i, j);
                    for k in 0..dim {
                        let (xi, xj) = (x.get(i, k), x.get(j, k));
                        grad.add_at(i, k, -g * (xj / (ni * nj) - cos * xi / (ni * ni)));
                        grad.add_at(j, k, -g * (xi / (ni * nj) - cos * xj / (nj * nj)));
                    }
                }
            }
        }
    }
    grad
}

fn log_softmax_row(row: &[f64], scale: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let lse = max + libm::log(row.iter().map(|&v| libm::exp(v * scale - max)).sum::<f64>());
    row.iter().map(|&v| v * scale - lse).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<LossGrad> {
    check_finite(logits, "logits")?;
    let (b, c) = logits.shape();
    if b == 0 || labels.len() != b {
        return argument(format!("{} labels for {} logit rows", labels.len(), b));
    }
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let y = label as usize;
        if y >= c {
            return argument(format!("label {label} outside [0, {c})"));
        }
        let logp = log_softmax_row(logits.row(i), 1.0);
        total -= logp[y];
        for (k, lp) in logp.iter().enumerate() {
            let p = libm::exp(*lp);
            grad.set(i, k, (p - if k == y { 1.0 } else { 0.0 }) / b as f64);
        }
    }
    Ok(LossGrad {
        value: total / b as f64,
        grad,
    })
}

pub fn cross_entropy_loss(logits: &Matrix, labels: &[u32]) -> Result<f64> {
    cross_entropy(logits, labels).map(|l| l.value)
}

/// Hardest positive and negative (by index) for every anchor.
///
/// Ties resolve to the lowest index. Fails unless every label occurs at least
/// twice and at least two labels are present.
pub fn mine_batch_hard(dist: &Matrix, labels: &[u32]) -> Result<Vec<(usize, usize)>> {
    let b = labels.len();
    if dist.shape() != (b, b) {
        return argument("distance matrix does not match label count");
    }
    let mut picks = Vec::with_capacity(b);
    for a in 0..b {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if pos.map_or(true, |p| dist.get(a, j) > dist.get(a, p)) {
                    pos = Some(j);
                }
            } else if neg.map_or(true, |n| dist.get(a, j) < dist.get(a, n)) {
                neg = Some(j);
            }
        }
        match (pos, neg) {
            (Some(p), Some(n)) => picks.push((p, n)),
            (None, _) => {
                return Err(Error::BatchComposition(format!(
                    "label {} occurs only once in the batch",
                    labels[a]
                )))
            }
            (_, None) => {
                return Err(Error::BatchComposition(
                    "batch holds a single identity".into(),
                ))
            }
        }
    }
    Ok(picks)
}

/// Batch-hard soft-margin triplet loss, mean over anchors of
/// `ln(1 + exp(d(a,p) − d(a,n)))`.
pub fn batch_hard_triplet(embeddings: &Matrix, labels: &[u32], metric: Metric) -> Result<LossGrad> {
    let b = embeddings.rows();
    if labels.len() != b {
        return argument(format!("{} labels for {} embeddings", labels.len(), b));
    }
    let dist = pairwise_distance_matrix(embeddings, metric)?;
    let picks = mine_batch_hard(&dist, labels)?;
    let mut upstream = Matrix::zeros(b, b);
    let mut total = 0.0;
    for (a, &(p, n)) in picks.iter().enumerate() {
        let margin = dist.get(a, p) - dist.get(a, n);
        total += softplus(margin);
        let s = sigmoid(margin) / b as f64;
        upstream.add_at(a, p, s);
        upstream.add_at(a, n, -s);
    }
    Ok(LossGrad {
        value: total / b as f64,
        grad: pairwise_backward(embeddings, &dist, &upstream, metric),
    })
}

pub fn batch_hard_triplet_loss(embeddings: &Matrix, labels: &[u32], metric: Metric) -> Result<f64> {
    batch_hard_triplet(embeddings, labels, metric).map(|l| l.value)
}

/// `τ² · mean_b KL(softmax(h_T/τ) ‖ softmax(h_S/τ))`, gradient w.r.t. the
/// student logits only.
pub fn knowledge_distillation(teacher: &Matrix, student: &Matrix, tau: f64) -> Result<LossGrad> {
    if teacher.shape() != student.shape() {
        return argument(format!(
            "teacher logits {:?} and student logits {:?} differ in shape",
            teacher.shape(),
            student.shape()
        ));
    }
    if !(tau > 0.0) {
        return argument("tau must be > 0");
    }
    check_finite(teacher, "teacher logits")?;
    check_finite(student, "student logits")?;
    let (b, c) = student.shape();
    if b == 0 {
        return argument("empty logits");
    }
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0;
    for i in 0..b {
        let lt = log_softmax_row(teacher.row(i), 1.0 / tau);
        let ls = log_softmax_row(student.row(i), 1.0 / tau);
        for k in 0..c {
            let pt = libm::exp(lt[k]);
            let ps = libm::exp(ls[k]);
            if pt > 0.0 {
                total += pt * (lt[k] - ls[k]);
            }
            grad.set(i, k, tau * (ps - pt) / b as f64);
        }
    }
    Ok(LossGrad {
        value: tau * tau * total / b as f64,
        grad,
    })
}

pub fn knowledge_distillation_loss(teacher: &Matrix, student: &Matrix, tau: f64) -> Result<f64> {
    knowledge_distillation(teacher, student, tau).map(|l| l.value)
}

/// `Σ_{i<j} (D_T[i,j] − D_S[i,j])²`, gradient w.r.t. the student embeddings.
/// Embedding widths of the two sides may differ.
pub fn distance_preservation(teacher: &Matrix, student: &Matrix, metric: Metric) -> Result<LossGrad> {
    let b = student.rows();
    if teacher.rows() != b {
        return argument(format!(
            "teacher batch {} differs from student batch {}",
            teacher.rows(),
            b
        ));
    }
    if b < 2 {
        return argument("distance preservation needs a batch of at least 2");
    }
    let dt = pairwise_distance_matrix(teacher, metric)?;
    let ds = pairwise_distance_matrix(student, metric)?;
    let mut upstream = Matrix::zeros(b, b);
    let mut total = 0.0;
    for i in 0..b {
        for j in (i + 1)..b {
            let diff = dt.get(i, j) - ds.get(i, j);
            total += diff * diff;
            upstream.set(i, j, -2.0 * diff);
        }
    }
    Ok(LossGrad {
        value: total,
        grad: pairwise_backward(student, &ds, &upstream, metric),
    })
}

pub fn distance_preservation_loss(teacher: &Matrix, student: &Matrix, metric: Metric) -> Result<f64> {
    distance_preservation(teacher, student, metric).map(|l| l.value)
}

/// Teacher outputs used as distillation targets.
#[derive(Debug, Clone, Copy)]
pub struct TeacherTargets<'a> {
    pub logits: &'a Matrix,
    pub inference: &'a Matrix,
}

/// Set-level student outputs and labels for one batch.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub labels: &'a [u32],
    /// Pre-neck features (triplet term).
    pub raw: &'a Matrix,
    /// Post-neck features (distance preservation).
    pub inference: &'a Matrix,
    /// Classifier outputs (classification and distillation).
    pub logits: &'a Matrix,
    pub teacher: Option<TeacherTargets<'a>>,
}

/// Unweighted term values; disabled terms are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub tr: f64,
    pub kd: f64,
    pub dp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub breakdown: LossBreakdown,
    pub grad_raw: Matrix,
    pub grad_inference: Matrix,
    pub grad_logits: Matrix,
}

/// `CE + TR + α·KD + β·DP` over the enabled terms.
pub fn vkd_objective(inputs: &ObjectiveInputs<'_>, cfg: &LossConfig) -> Result<Objective> {
    cfg.validate()?;
    let mut out = Objective {
        total: 0.0,
        breakdown: LossBreakdown::default(),
        grad_raw: Matrix::zeros(inputs.raw.rows(), inputs.raw.cols()),
        grad_inference: Matrix::zeros(inputs.inference.rows(), inputs.inference.cols()),
        grad_logits: Matrix::zeros(inputs.logits.rows(), inputs.logits.cols()),
    };
    if cfg.enable_ce {
        let l = cross_entropy(inputs.logits, inputs.labels)?;
        out.breakdown.ce = l.value;
        out.total += l.value;
        out.grad_logits.axpy(1.0, &l.grad);
    }
    if cfg.enable_tr {
        let l = batch_hard_triplet(inputs.raw, inputs.labels, cfg.distance)?;
        out.breakdown.tr = l.value;
        out.total += l.value;
        out.grad_raw.axpy(1.0, &l.grad);
    }
    if cfg.needs_teacher() {
        let teacher = inputs
            .teacher
            .ok_or_else(|| Error::Config("distillation terms enabled without teacher targets".into()))?;
        if cfg.enable_kd {
            let l = knowledge_distillation(teacher.logits, inputs.logits, cfg.tau)?;
            out.breakdown.kd = l.value;
            out.total += cfg.alpha * l.value;
            out.grad_logits.axpy(cfg.alpha, &l.grad);
        }
        if cfg.enable_dp {
            let l = distance_preservation(teacher.inference, inputs.inference, cfg.distance)?;
            out.breakdown.dp = l.value;
            out.total += cfg.beta * l.value;
            out.grad_inference.axpy(cfg.beta, &l.grad);
        }
    }
    Ok(out)
}

/// Pure mean-reduction helper shared by tests and the trainer's logging.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn pairwise_examples() {
        let d = pairwise_distance_matrix(&m(&[&[0.0], &[3.0]]), Metric::Euclidean).unwrap();
        assert_eq!(d, m(&[&[0.0, 3.0], &[3.0, 0.0]]));
        let d = pairwise_distance_matrix(&m(&[&[0.0, 0.0], &[3.0, 4.0]]), Metric::Euclidean).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        let d = pairwise_distance_matrix(&m(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]), Metric::Euclidean)
            .unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
        let d = pairwise_distance_matrix(&m(&[&[1.0, 0.0], &[0.0, 2.0], &[-3.0, 0.0]]), Metric::Cosine)
            .unwrap();
        assert_abs_diff_eq!(d.get(0, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.get(0, 2), 2.0, epsilon = 1e-12);
        assert!(pairwise_distance_matrix(&m(&[&[f64::NAN]]), Metric::Euclidean).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let perfect = m(&[&[1000.0, 0.0, 0.0]]);
        assert_abs_diff_eq!(cross_entropy_loss(&perfect, &[0]).unwrap(), 0.0, epsilon = 1e-12);
        let uniform = Matrix::zeros(3, 4);
        assert_abs_diff_eq!(
            cross_entropy_loss(&uniform, &[0, 1, 3]).unwrap(),
            libm::log(4.0),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cross_entropy_loss(&m(&[&[2.0, 0.0]]), &[0]).unwrap(),
            0.126928,
            epsilon = 1e-6
        );
        assert!(matches!(
            cross_entropy_loss(&uniform, &[0, 1, 4]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn triplet_fixture() {
        let e = m(&[&[0.0], &[0.1], &[1.0], &[1.1]]);
        let v = batch_hard_triplet_loss(&e, &[0, 0, 1, 1], Metric::Euclidean).unwrap();
        let oracle = (libm::log1p(libm::exp(-0.9)) + libm::log1p(libm::exp(-0.8))) / 2.0;
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.356127, epsilon = 1e-5);
        // each anchor has d_ap = d_an = 1
        let sym = m(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, 0.8660254037844386], &[1.5, 0.8660254037844386]]);
        let v = batch_hard_triplet_loss(&sym, &[0, 0, 1, 1], Metric::Euclidean).unwrap();
        // anchor 0: pos 1 (d=1), neg min(d(0,2)=1, d(0,3)=√3) = 1
        assert_abs_diff_eq!(v, core::f64::consts::LN_2, epsilon = 1e-9);
    }

    #[test]
    fn triplet_rejects_bad_batches() {
        let e = m(&[&[0.0], &[1.0], &[2.0]]);
        assert!(matches!(
            batch_hard_triplet_loss(&e, &[0, 0, 1], Metric::Euclidean),
            Err(Error::BatchComposition(_))
        ));
        assert!(matches!(
            batch_hard_triplet_loss(&e, &[0, 0, 0], Metric::Euclidean),
            Err(Error::BatchComposition(_))
        ));
    }

    #[test]
    fn kd_examples() {
        let t = m(&[&[1.0, 0.0]]);
        let s = m(&[&[0.0, 1.0]]);
        assert_abs_diff_eq!(knowledge_distillation_loss(&t, &t, 10.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(knowledge_distillation_loss(&t, &s, 1.0).unwrap(), 0.462117, epsilon = 1e-5);
        assert_abs_diff_eq!(knowledge_distillation_loss(&t, &s, 10.0).unwrap(), 0.499583, epsilon = 1e-4);
        assert!(knowledge_distillation_loss(&t, &Matrix::zeros(1, 3), 1.0).is_err());
    }

    #[test]
    fn dp_examples() {
        // teacher distances {1, 2, 2}; every squared distance is a dyadic
        // rational, so all three distances are exact in floating point
        let t = m(&[
            &[0.0, 0.0, 0.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0, 0.0, 0.0],
            &[0.5, 1.5, 1.0, 0.5, 0.5],
        ]);
        let s = m(&[&[0.3], &[0.3], &[0.3]]);
        assert_eq!(distance_preservation_loss(&t, &s, Metric::Euclidean).unwrap(), 9.0);
        assert_eq!(distance_preservation_loss(&t, &t, Metric::Euclidean).unwrap(), 0.0);
        let t8 = Matrix::from_vec(3, 8, (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
        let s4 = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        assert!(distance_preservation_loss(&t8, &s4, Metric::Euclidean).is_ok());
        assert!(distance_preservation_loss(&m(&[&[1.0]]), &m(&[&[1.0]]), Metric::Euclidean).is_err());
    }

    fn inputs<'a>(
        labels: &'a [u32],
        raw: &'a Matrix,
        inf: &'a Matrix,
        logits: &'a Matrix,
        teacher: Option<TeacherTargets<'a>>,
    ) -> ObjectiveInputs<'a> {
        ObjectiveInputs {
            labels,
            raw,
            inference: inf,
            logits,
            teacher,
        }
    }

    #[test]
    fn objective_reductions() {
        let labels = [0, 0, 1, 1];
        let raw = m(&[&[0.0, 1.0], &[0.2, 0.9], &[1.0, 0.1], &[1.2, -0.3]]);
        let inf = m(&[&[0.1, 0.4], &[0.3, 0.2], &[-1.0, 0.1], &[0.2, -0.3]]);
        let logits = m(&[&[1.0, 0.0], &[0.5, 0.2], &[0.1, 0.9], &[-0.2, 0.3]]);
        let t_logits = m(&[&[2.0, 0.0], &[1.5, 0.2], &[0.1, 1.9], &[-0.2, 1.3]]);
        let t_inf = m(&[&[0.5, 0.4], &[0.3, 0.9], &[-1.0, 0.5], &[0.7, -0.3]]);
        let teacher = TeacherTargets {
            logits: &t_logits,
            inference: &t_inf,
        };
        let x = inputs(&labels, &raw, &inf, &logits, Some(teacher));
        let ce = cross_entropy_loss(&logits, &labels).unwrap();
        let tr = batch_hard_triplet_loss(&raw, &labels, Metric::Euclidean).unwrap();
        let kd = knowledge_distillation_loss(&t_logits, &logits, 10.0).unwrap();
        let dp = distance_preservation_loss(&t_inf, &inf, Metric::Euclidean).unwrap();

        let no_distill = LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(vkd_objective(&x, &no_distill).unwrap().total, ce + tr);

        let distill_only = LossConfig {
            enable_ce: false,
            enable_tr: false,
            ..LossConfig::default()
        };
        let o = vkd_objective(&x, &distill_only).unwrap();
        assert_abs_diff_eq!(o.total, 0.1 * kd + 1e-4 * dp, epsilon = 1e-15);
        assert_eq!(o.breakdown.ce, 0.0);
        assert_eq!(o.breakdown.kd, kd);

        let full = vkd_objective(&x, &LossConfig::default()).unwrap();
        assert_abs_diff_eq!(full.total, ce + tr + 0.1 * kd + 1e-4 * dp, epsilon = 1e-12);

        let none = LossConfig {
            enable_ce: false,
            enable_tr: false,
            enable_kd: false,
            enable_dp: false,
            ..LossConfig::default()
        };
        assert!(matches!(vkd_objective(&x, &none), Err(Error::Config(_))));
        assert!(vkd_objective(&inputs(&labels, &raw, &inf, &logits, None), &LossConfig::default()).is_err());
    }

    #[test]
    fn objective_zero_inputs() {
        // identical teacher and student outputs with perfectly confident logits
        let labels = [0, 0, 1, 1];
        let raw = m(&[&[0.0], &[0.0], &[1e3], &[1e3]]);
        let logits = m(&[&[1e3, 0.0], &[1e3, 0.0], &[0.0, 1e3], &[0.0, 1e3]]);
        let teacher = TeacherTargets {
            logits: &logits,
            inference: &raw,
        };
        let o = vkd_objective(&inputs(&labels, &raw, &raw, &logits, Some(teacher)), &LossConfig::default())
            .unwrap();
        assert_abs_diff_eq!(o.total, 0.0, epsilon = 1e-12);
    }
}
