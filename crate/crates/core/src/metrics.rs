//! Imbalance-aware classification metrics.
//!
//! All metrics are pure functions of a confusion matrix: balanced accuracy
//! (mean per-class recall), macro/micro F1 and Cohen's kappa. Balanced
//! accuracy is the headline metric because target datasets are dominated by
//! the healthy class.

use crate::error::{Error, Result};

/// K x K confusion matrix; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::parameter("confusion matrix needs at least 1 class"));
        }
        Ok(Self { k, counts: vec![0; k * k] })
    }

    /// Build from raw count rows.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut cm = Self::new(k)?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::shape(format!(
                    "confusion row {t} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (p, &c) in row.iter().enumerate() {
                cm.counts[t * k + p] = c;
            }
        }
        Ok(cm)
    }

    /// Tally paired truth/prediction class indices.
    pub fn from_predictions(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(format!(
                "{} labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new(k)?;
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::parameter(format!(
                    "class index out of range: truth={t} pred={p} k={k}"
                )));
            }
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        assert!(truth < self.k && pred < self.k, "class index out of range");
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Number of test samples with ground-truth class `truth`.
    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.counts[t * self.k + pred]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + i]).sum()
    }

    /// Plain accuracy (pooled over all classes).
    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        self.correct() as f64 / self.total() as f64
    }
}

/// Mean of the per-class recalls.
///
/// Errors if any class has no ground-truth samples. On a class-balanced set
/// (all M_k equal) the result equals plain accuracy exactly, so that case is
/// computed from the pooled counts.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let k = cm.num_classes();
    let m0 = cm.row_sum(0);
    let mut all_equal = true;
    for t in 0..k {
        let m = cm.row_sum(t);
        if m == 0 {
            return Err(Error::parameter(format!(
                "class {t} has no test samples; balanced accuracy undefined"
            )));
        }
        all_equal &= m == m0;
    }
    if all_equal {
        return Ok(cm.accuracy());
    }
    let mut acc = 0.0;
    for t in 0..k {
        acc += cm.count(t, t) as f64 / cm.row_sum(t) as f64;
    }
    Ok(acc / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Scores {
    /// Unweighted mean of per-class F1; degenerate classes contribute 0.
    pub macro_f1: f64,
    /// F1 of pooled counts; equals accuracy for single-label classification.
    pub micro_f1: f64,
}

pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let k = cm.num_classes();
    let mut macro_sum = 0.0;
    let mut tp_total = 0u64;
    let mut fp_total = 0u64;
    let mut fn_total = 0u64;
    for c in 0..k {
        let tp = cm.count(c, c);
        let fp = cm.col_sum(c) - tp;
        let fn_ = cm.row_sum(c) - tp;
        tp_total += tp;
        fp_total += fp;
        fn_total += fn_;
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            macro_sum += 2.0 * tp as f64 / denom as f64;
        }
        // denom == 0: no actual and no predicted positives, F1 defined as 0.
    }
    let micro_denom = 2 * tp_total + fp_total + fn_total;
    let micro = if micro_denom > 0 {
        2.0 * tp_total as f64 / micro_denom as f64
    } else {
        0.0
    };
    F1Scores { macro_f1: macro_sum / k as f64, micro_f1: micro }
}

/// Cohen's kappa: (p_o - p_e) / (1 - p_e) with chance agreement p_e from
/// the marginal products.
///
/// Errors when p_e = 1 (both sides constant), where kappa is undefined.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::parameter("empty confusion matrix"));
    }
    let n = n as f64;
    let p_o = cm.correct() as f64 / n;
    let mut p_e = 0.0;
    for c in 0..cm.num_classes() {
        p_e += (cm.row_sum(c) as f64 / n) * (cm.col_sum(c) as f64 / n);
    }
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Degenerate(
            "chance agreement is 1; kappa undefined".into(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Key=value metrics report (one key per line).
pub fn report(cm: &ConfusionMatrix) -> Result<String> {
    let f1 = f1_scores(cm);
    let mut out = String::new();
    out.push_str(&format!("balanced_accuracy={:.6}\n", balanced_accuracy(cm)?));
    out.push_str(&format!("accuracy={:.6}\n", cm.accuracy()));
    out.push_str(&format!("macro_f1={:.6}\n", f1.macro_f1));
    out.push_str(&format!("micro_f1={:.6}\n", f1.micro_f1));
    match cohens_kappa(cm) {
        Ok(kappa) => out.push_str(&format!("cohens_kappa={kappa:.6}\n")),
        Err(_) => out.push_str("cohens_kappa=nan\n"),
    }
    out.push_str(&format!("total={}\n", cm.total()));
    Ok(out)
}

/// Confusion matrix as a delimiter-separated table (for plotting tools).
pub fn confusion_table(cm: &ConfusionMatrix, class_names: &[String], sep: char) -> String {
    let mut out = String::new();
    out.push_str("truth\\pred");
    for name in class_names {
        out.push(sep);
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..cm.num_classes() {
        out.push_str(&class_names[t]);
        for p in 0..cm.num_classes() {
            out.push(sep);
            out.push_str(&cm.count(t, p).to_string());
        }
        out.push('\n');
    }
    out
}
