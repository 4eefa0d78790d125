//! Regression and classification metrics.
//!
//! All moments are population moments (divide by N).

use serde::{Deserialize, Serialize};

use crate::circular;
use crate::error::{Error, Result};
use crate::labels::Emotion;

/// Ground truth and prediction of equal length.
#[derive(Debug, Clone, Copy)]
pub struct PairedSeries<'a> {
    pub truth: &'a [f64],
    pub prediction: &'a [f64],
}

impl<'a> PairedSeries<'a> {
    pub fn new(truth: &'a [f64], prediction: &'a [f64]) -> Result<Self> {
        if truth.len() != prediction.len() {
            return Err(Error::validation(format!(
                "length mismatch: {} truths vs {} predictions",
                truth.len(),
                prediction.len()
            )));
        }
        if truth.len() < 2 {
            return Err(Error::domain("correlation metrics need at least two points"));
        }
        if truth.iter().chain(prediction).any(|x| !x.is_finite()) {
            return Err(Error::validation("non-finite value in series"));
        }
        Ok(PairedSeries { truth, prediction })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub(crate) fn moments(&self) -> Moments {
        Moments::of(self.truth, self.prediction)
    }
}

/// Population means, variances and covariance of two series.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub mean_t: f64,
    pub mean_p: f64,
    pub var_t: f64,
    pub var_p: f64,
    pub cov: f64,
}

impl Moments {
    pub(crate) fn of(truth: &[f64], pred: &[f64]) -> Moments {
        let n = truth.len() as f64;
        let mean_t = truth.iter().sum::<f64>() / n;
        let mean_p = pred.iter().sum::<f64>() / n;
        let (mut var_t, mut var_p, mut cov) = (0.0, 0.0, 0.0);
        for (t, p) in truth.iter().zip(pred) {
            let (dt, dp) = (t - mean_t, p - mean_p);
            var_t += dt * dt;
            var_p += dp * dp;
            cov += dt * dp;
        }
        Moments {
            mean_t,
            mean_p,
            var_t: var_t / n,
            var_p: var_p / n,
            cov: cov / n,
        }
    }
}

/// Pearson correlation. Constant series are an error, not 0.
pub fn pcc(series: PairedSeries<'_>) -> Result<f64> {
    let m = series.moments();
    if m.var_t <= 0.0 || m.var_p <= 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in truth or prediction".into(),
        ));
    }
    Ok((m.cov / (m.var_t.sqrt() * m.var_p.sqrt())).clamp(-1.0, 1.0))
}

/// CCC together with a flag for the degenerate both-constant case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub value: f64,
    /// Both series were constant, so the value was assigned: 1 if the constants
    /// are equal, else 0.
    pub degenerate: bool,
}

/// CCC in covariance form, `2 cov / (var_t + var_p + (mean_t - mean_p)^2)`.
pub fn ccc_detailed(series: PairedSeries<'_>) -> Concordance {
    concordance_from(series.moments())
}

pub(crate) fn concordance_from(m: Moments) -> Concordance {
    if m.var_t == 0.0 && m.var_p == 0.0 {
        return Concordance {
            value: if m.mean_t == m.mean_p { 1.0 } else { 0.0 },
            degenerate: true,
        };
    }
    let denom = m.var_t + m.var_p + (m.mean_t - m.mean_p).powi(2);
    Concordance {
        value: (2.0 * m.cov / denom).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

pub fn ccc(series: PairedSeries<'_>) -> f64 {
    ccc_detailed(series).value
}

/// `1 - ccc`, in `[0, 2]`.
pub fn ccc_loss(series: PairedSeries<'_>) -> f64 {
    1.0 - ccc(series)
}

/// Mean of per-item angular errors, degrees.
pub fn mean_angular_error(truth_deg: &[f64], pred_deg: &[f64]) -> Result<f64> {
    if truth_deg.len() != pred_deg.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} truths vs {} predictions",
            truth_deg.len(),
            pred_deg.len()
        )));
    }
    if truth_deg.is_empty() {
        return Err(Error::domain("no hues to compare"));
    }
    let total = truth_deg
        .iter()
        .zip(pred_deg)
        .map(|(t, p)| circular::angular_error(*t, *p))
        .sum::<Result<f64>>()?;
    Ok(total / truth_deg.len() as f64)
}

fn check_class_lengths(truth: &[Emotion], pred: &[Emotion]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} truths vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::domain("no labels to score"));
    }
    Ok(())
}

pub fn accuracy(truth: &[Emotion], pred: &[Emotion]) -> Result<f64> {
    check_class_lengths(truth, pred)?;
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// 6×6 counts indexed `[truth][predicted]` in [`Emotion::ALL`] order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; Emotion::COUNT]; Emotion::COUNT],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..Emotion::COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, truth: Emotion, pred: Emotion) -> usize {
        self.counts[truth.index()][pred.index()]
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for i in 0..Emotion::COUNT {
            for j in 0..Emotion::COUNT {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

pub fn confusion(truth: &[Emotion], pred: &[Emotion]) -> Result<ConfusionMatrix> {
    check_class_lengths(truth, pred)?;
    let mut m = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(pred) {
        m.counts[t.index()][p.index()] += 1;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps<'a>(t: &'a [f64], p: &'a [f64]) -> PairedSeries<'a> {
        PairedSeries::new(t, p).unwrap()
    }

    #[test]
    fn pcc_examples() {
        let x = [0.0, 1.0, 2.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pcc(ps(&x, &y)).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(ps(&x, &neg)).unwrap() + 1.0).abs() < 1e-12);
        assert!((pcc(ps(&x, &[1.0, 2.0, 3.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            pcc(ps(&x, &[1.0, 1.0, 1.0])),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn ccc_examples() {
        let x = [0.0, 1.0, 2.0];
        assert_eq!(ccc(ps(&x, &x)), 1.0);
        // cov 2/3, variances 2/3, mean gap 1 -> (4/3) / (7/3)
        assert!((ccc(ps(&x, &[1.0, 2.0, 3.0])) - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(ccc(ps(&x, &[5.0, 5.0, 5.0])), 0.0);
        assert!((ccc_loss(ps(&x, &[1.0, 2.0, 3.0])) - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(ccc_loss(ps(&x, &x)), 0.0);
        assert!((ccc_loss(ps(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_degenerate_flags() {
        let c = ccc_detailed(ps(&[2.0, 2.0], &[2.0, 2.0]));
        assert_eq!(c, Concordance { value: 1.0, degenerate: true });
        let c = ccc_detailed(ps(&[2.0, 2.0], &[3.0, 3.0]));
        assert_eq!(c, Concordance { value: 0.0, degenerate: true });
        assert!(!ccc_detailed(ps(&[0.0, 1.0], &[3.0, 3.0])).degenerate);
    }

    #[test]
    fn series_validation() {
        assert!(matches!(PairedSeries::new(&[1.0], &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(PairedSeries::new(&[1.0, 2.0], &[1.0]), Err(Error::Validation(_))));
        assert!(PairedSeries::new(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn angular_error_mean() {
        assert_eq!(mean_angular_error(&[10.0, 20.0], &[10.0, 20.0]).unwrap(), 0.0);
        assert!((mean_angular_error(&[0.0, 0.0], &[20.0, 340.0]).unwrap() - 20.0).abs() < 1e-12);
        assert!(mean_angular_error(&[0.0], &[0.0, 1.0]).is_err());
        assert!(mean_angular_error(&[], &[]).is_err());
    }

    #[test]
    fn classification() {
        use Emotion::*;
        let t = [Ang, Hap, Sad, Fea];
        assert_eq!(accuracy(&t, &t).unwrap(), 1.0);
        let m = confusion(&t, &t).unwrap();
        assert_eq!(m.trace(), 4);
        assert_eq!(m.total(), 4);

        assert_eq!(accuracy(&t, &[Dis, Dis, Dis, Dis]).unwrap(), 0.0);

        let p = [Ang, Hap, Fea, Fea];
        assert_eq!(accuracy(&t, &p).unwrap(), 0.75);
        let m = confusion(&t, &p).unwrap();
        assert_eq!(m.get(Sad, Fea), 1);
        assert_eq!(m.total() - m.trace(), 1);
        assert!(accuracy(&t, &p[..2]).is_err());
    }
}
