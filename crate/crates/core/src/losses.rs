//! Score normalization and distillation objectives.
//!
//! Every loss returns its value together with the exact gradient with respect
//! to the raw student scores, including the path through min-max
//! normalization when it is enabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    KlDiv,
    MarginMse,
    /// KL divergence plus `lambda` times MarginMSE.
    Mixed { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossConfigRepr", into = "LossConfigRepr")]
pub struct LossConfig {
    pub kind: LossKind,
    pub normalize_teacher: bool,
    pub normalize_student: bool,
    pub ibneg_enabled: bool,
    pub temperature: f64,
}

impl Default for LossConfig {
    /// KL divergence on min-max normalized teacher and student scores, no
    /// in-batch negatives.
    fn default() -> Self {
        Self {
            kind: LossKind::KlDiv,
            normalize_teacher: true,
            normalize_student: true,
            ibneg_enabled: false,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LossKindName {
    KlDiv,
    MarginMse,
    Mixed,
}

/// Flat config-file form: `kind = "mixed"` with a separate `mmse_lambda`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LossConfigRepr {
    kind: LossKindName,
    mmse_lambda: f64,
    normalize_teacher: bool,
    normalize_student: bool,
    ibneg_enabled: bool,
    temperature: f64,
}

const DEFAULT_MMSE_LAMBDA: f64 = 0.1;

impl Default for LossConfigRepr {
    fn default() -> Self {
        LossConfig::default().into()
    }
}

impl From<LossConfig> for LossConfigRepr {
    fn from(c: LossConfig) -> Self {
        let (kind, mmse_lambda) = match c.kind {
            LossKind::KlDiv => (LossKindName::KlDiv, DEFAULT_MMSE_LAMBDA),
            LossKind::MarginMse => (LossKindName::MarginMse, DEFAULT_MMSE_LAMBDA),
            LossKind::Mixed { lambda } => (LossKindName::Mixed, lambda),
        };
        Self {
            kind,
            mmse_lambda,
            normalize_teacher: c.normalize_teacher,
            normalize_student: c.normalize_student,
            ibneg_enabled: c.ibneg_enabled,
            temperature: c.temperature,
        }
    }
}

impl TryFrom<LossConfigRepr> for LossConfig {
    type Error = Error;

    fn try_from(r: LossConfigRepr) -> Result<Self> {
        let kind = match r.kind {
            LossKindName::KlDiv => LossKind::KlDiv,
            LossKindName::MarginMse => LossKind::MarginMse,
            LossKindName::Mixed => LossKind::Mixed { lambda: r.mmse_lambda },
        };
        let cfg = LossConfig {
            kind,
            normalize_teacher: r.normalize_teacher,
            normalize_student: r.normalize_student,
            ibneg_enabled: r.ibneg_enabled,
            temperature: r.temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::Mixed { lambda } = self.kind {
            if !(lambda >= 0.0) {
                return Err(Error::arg(format!("mixed-loss lambda must be >= 0, got {lambda}")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::arg(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Whether the objective reads the "index 0 is positive" convention.
    pub fn uses_labels(&self) -> bool {
        self.ibneg_enabled || !matches!(self.kind, LossKind::KlDiv)
    }
}

/// Min-max normalized scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Set when all inputs were equal; `values` is then all zeros.
    pub degenerate: bool,
    argmin: usize,
    argmax: usize,
    range: f64,
}

/// Maps scores so the maximum becomes 1 and the minimum 0.
pub fn minmax_normalize(scores: &[f64]) -> Result<Normalized> {
    if scores.len() < 2 {
        return Err(Error::arg(format!(
            "min-max normalization needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[argmin] {
            argmin = i;
        }
        if s > scores[argmax] {
            argmax = i;
        }
    }
    let (lo, hi) = (scores[argmin], scores[argmax]);
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(Normalized {
            values: vec![0.0; scores.len()],
            degenerate: true,
            argmin,
            argmax,
            range: 0.0,
        });
    }
    Ok(Normalized {
        values: scores.iter().map(|&s| (s - lo) / range).collect(),
        degenerate: false,
        argmin,
        argmax,
        range,
    })
}

impl Normalized {
    /// Pulls a gradient on the normalized values back to the raw scores.
    /// Ties at the min or max route to the first attaining index.
    fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        if self.degenerate {
            return vec![0.0; upstream.len()];
        }
        let r = self.range;
        let total: f64 = upstream.iter().sum();
        let weighted: f64 = upstream.iter().zip(&self.values).map(|(g, v)| g * v).sum();
        let mut grad: Vec<f64> = upstream.iter().map(|g| g / r).collect();
        grad[self.argmin] += (weighted - total) / r;
        grad[self.argmax] -= weighted / r;
        grad
    }
}

/// Loss value and gradient with respect to the raw student scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// A normalization collapsed (max == min); the example should be skipped.
    pub degenerate: bool,
}

impl LossOutput {
    fn degenerate(n: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; n],
            degenerate: true,
        }
    }
}

struct Prepared {
    student: Option<Normalized>,
    student_values: Vec<f64>,
    teacher_values: Vec<f64>,
    degenerate: bool,
}

fn prepare(student: &[f64], teacher: &[f64], cfg: &LossConfig) -> Result<Prepared> {
    if student.len() != teacher.len() {
        return Err(Error::arg(format!(
            "student has {} scores, teacher has {}",
            student.len(),
            teacher.len()
        )));
    }
    if student.len() < 2 {
        return Err(Error::arg("distillation losses need at least 2 documents"));
    }
    let mut degenerate = false;
    let teacher_values = if cfg.normalize_teacher {
        let t = minmax_normalize(teacher)?;
        degenerate |= t.degenerate;
        t.values
    } else {
        teacher.to_vec()
    };
    let (student, student_values) = if cfg.normalize_student {
        let s = minmax_normalize(student)?;
        degenerate |= s.degenerate;
        let v = s.values.clone();
        (Some(s), v)
    } else {
        (None, student.to_vec())
    };
    Ok(Prepared {
        student,
        student_values,
        teacher_values,
        degenerate,
    })
}

impl Prepared {
    fn finish(&self, loss: f64, grad_values: Vec<f64>) -> LossOutput {
        let grad = match &self.student {
            Some(n) => n.backward(&grad_values),
            None => grad_values,
        };
        LossOutput {
            loss,
            grad,
            degenerate: false,
        }
    }
}

fn log_softmax(xs: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = xs.iter().map(|x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|x| x - lse).collect()
}

fn kl_on_values(student: &[f64], teacher: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let log_p = log_softmax(teacher, temperature);
    let log_q = log_softmax(student, temperature);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(student.len());
    for (lp, lq) in log_p.iter().zip(&log_q) {
        let p = lp.exp();
        if p > 0.0 {
            loss += p * (lp - lq);
        }
        grad.push((lq.exp() - p) / temperature);
    }
    (loss, grad)
}

fn margin_mse_on_values(student: &[f64], teacher: &[f64]) -> (f64, Vec<f64>) {
    let pairs = (student.len() - 1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.len()];
    for j in 1..student.len() {
        let residual = (teacher[0] - teacher[j]) - (student[0] - student[j]);
        loss += residual * residual;
        let g = 2.0 * residual / pairs;
        grad[0] -= g;
        grad[j] += g;
    }
    (loss / pairs, grad)
}

/// KL(p_teacher || q_student) with both distributions formed by a
/// temperature softmax over the (optionally normalized) scores.
pub fn kl_div_loss(student: &[f64], teacher: &[f64], cfg: &LossConfig) -> Result<LossOutput> {
    let prep = prepare(student, teacher, cfg)?;
    if prep.degenerate {
        return Ok(LossOutput::degenerate(student.len()));
    }
    let (loss, grad) = kl_on_values(&prep.student_values, &prep.teacher_values, cfg.temperature);
    Ok(prep.finish(loss, grad))
}

/// Mean squared difference between teacher and student margins
/// `score[0] − score[j]` over all negatives `j`.
pub fn margin_mse_loss(student: &[f64], teacher: &[f64], cfg: &LossConfig) -> Result<LossOutput> {
    let prep = prepare(student, teacher, cfg)?;
    if prep.degenerate {
        return Ok(LossOutput::degenerate(student.len()));
    }
    let (loss, grad) = margin_mse_on_values(&prep.student_values, &prep.teacher_values);
    Ok(prep.finish(loss, grad))
}

/// `kl_div_loss + lambda · margin_mse_loss`.
pub fn mixed_loss(student: &[f64], teacher: &[f64], lambda: f64, cfg: &LossConfig) -> Result<LossOutput> {
    let prep = prepare(student, teacher, cfg)?;
    if prep.degenerate {
        return Ok(LossOutput::degenerate(student.len()));
    }
    let (kl, kl_grad) = kl_on_values(&prep.student_values, &prep.teacher_values, cfg.temperature);
    let (mm, mm_grad) = margin_mse_on_values(&prep.student_values, &prep.teacher_values);
    let grad = kl_grad.iter().zip(&mm_grad).map(|(a, b)| a + lambda * b).collect();
    Ok(prep.finish(kl + lambda * mm, grad))
}

/// Dispatches on `cfg.kind`.
pub fn distillation_loss(student: &[f64], teacher: &[f64], cfg: &LossConfig) -> Result<LossOutput> {
    match cfg.kind {
        LossKind::KlDiv => kl_div_loss(student, teacher, cfg),
        LossKind::MarginMse => margin_mse_loss(student, teacher, cfg),
        LossKind::Mixed { lambda } => mixed_loss(student, teacher, lambda, cfg),
    }
}

/// In-batch negatives: `scores[i][j]` is the score of query `i` against the
/// positive of query `j`. Mean cross-entropy with target `i` per row.
pub fn ibneg_loss(scores: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = scores.len();
    if b < 2 {
        return Err(Error::arg("in-batch negatives need a batch of at least 2"));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != b) {
        return Err(Error::arg(format!(
            "in-batch score matrix must be square: {b} rows, a row has {} columns",
            row.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b);
    for (i, row) in scores.iter().enumerate() {
        let ls = log_softmax(row, 1.0);
        loss -= ls[i];
        let g: Vec<f64> = ls
            .iter()
            .enumerate()
            .map(|(j, l)| (l.exp() - if i == j { 1.0 } else { 0.0 }) / b as f64)
            .collect();
        grad.push(g);
    }
    Ok((loss / b as f64, grad))
}
