//! Evaluation metrics over predicted spans, class labels, or real scores.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction count {pred} does not match gold count {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("metric needs at least one example")]
    EmptyInput,
    #[error("{0}")]
    DomainError(String),
}

/// Which score to compute. Span metrics take [`Labels::Spans`], class metrics
/// take [`Labels::Classes`], and the correlation metric takes
/// [`Labels::Reals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Fraction of spans predicted exactly.
    ExactMatch,
    /// Fraction of labels predicted exactly.
    Accuracy,
    /// Binary F1 with class 1 as the positive class.
    F1Binary,
    /// Matthews correlation coefficient over binary labels.
    Matthews,
    /// Mean of Pearson and Spearman correlation.
    PearsonSpearman,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "exact_match",
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1Binary => "f1",
            MetricKind::Matthews => "matthews",
            MetricKind::PearsonSpearman => "pearson_spearman",
        }
    }
}

/// Prediction/gold pairs. Spans are inclusive `(start, end)` token index
/// pairs with `start <= end`.
#[derive(Debug, Clone, Copy)]
pub enum Labels<'a> {
    Spans {
        pred: &'a [(usize, usize)],
        gold: &'a [(usize, usize)],
    },
    Classes {
        pred: &'a [usize],
        gold: &'a [usize],
    },
    Reals {
        pred: &'a [f64],
        gold: &'a [f64],
    },
}

fn check_lengths(pred: usize, gold: usize) -> Result<(), MetricError> {
    if pred != gold {
        return Err(MetricError::LengthMismatch { pred, gold });
    }
    if pred == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Computes `kind` over `labels`.
pub fn score(kind: MetricKind, labels: Labels) -> Result<f64, MetricError> {
    match (kind, labels) {
        (MetricKind::ExactMatch, Labels::Spans { pred, gold }) => {
            check_lengths(pred.len(), gold.len())?;
            let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
            Ok(hits as f64 / pred.len() as f64)
        }
        (MetricKind::Accuracy, Labels::Classes { pred, gold }) => {
            check_lengths(pred.len(), gold.len())?;
            let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
            Ok(hits as f64 / pred.len() as f64)
        }
        (MetricKind::F1Binary, Labels::Classes { pred, gold }) => {
            let (tp, fp, tn_, fn_) = confusion(pred, gold)?;
            let _ = tn_;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            if precision + recall == 0.0 {
                Ok(0.0)
            } else {
                Ok(2.0 * precision * recall / (precision + recall))
            }
        }
        (MetricKind::Matthews, Labels::Classes { pred, gold }) => {
            let (tp, fp, tn, fn_) = confusion(pred, gold)?;
            let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
            if denom == 0 {
                return Ok(0.0);
            }
            let num = (tp * tn) as f64 - (fp * fn_) as f64;
            Ok(num / (denom as f64).sqrt())
        }
        (MetricKind::PearsonSpearman, Labels::Reals { pred, gold }) => {
            check_lengths(pred.len(), gold.len())?;
            for &v in pred.iter().chain(gold) {
                if !v.is_finite() {
                    return Err(MetricError::DomainError(
                        "correlation needs finite scores".to_string(),
                    ));
                }
            }
            let p = pearson(pred, gold);
            let s = pearson(&ranks(pred), &ranks(gold));
            Ok(0.5 * (p + s))
        }
        (kind, labels) => Err(MetricError::DomainError(format!(
            "metric {} does not apply to {} labels",
            kind.name(),
            match labels {
                Labels::Spans { .. } => "span",
                Labels::Classes { .. } => "class",
                Labels::Reals { .. } => "real",
            }
        ))),
    }
}

fn confusion(pred: &[usize], gold: &[usize]) -> Result<(u64, u64, u64, u64), MetricError> {
    check_lengths(pred.len(), gold.len())?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gold) {
        if p > 1 || g > 1 {
            return Err(MetricError::DomainError(format!(
                "binary metric saw label pair ({p}, {g})"
            )));
        }
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => unreachable!(),
        }
    }
    Ok((tp, fp, tn, fn_))
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// Pearson correlation; 0 when either side has zero variance.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// 1-based ranks with ties sharing the average of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank mean(i+1 ..= j+1).
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}
