//! Fit metrics for simulated or predicted outputs.

use serde::Serialize;

use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_pair<A: AsRef<[f64]>, B: AsRef<[f64]>>(y: &[A], y_hat: &[B]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::dim("metric sequence length", y.len(), y_hat.len()));
    }
    for (a, b) in y.iter().zip(y_hat) {
        if a.as_ref().len() != b.as_ref().len() {
            return Err(Error::dim("metric sample width", a.as_ref().len(), b.as_ref().len()));
        }
    }
    Ok(())
}

/// Best fit rate in percent:
/// `max(1 - mean_t |y_t - y_hat_t| / mean_t |y_t - mean(y)|, 0) * 100`,
/// with Euclidean norms per sample.
pub fn bfr<A: AsRef<[f64]>, B: AsRef<[f64]>>(y: &[A], y_hat: &[B]) -> Result<f64> {
    check_pair(y, y_hat)?;
    if y.len() < 2 {
        return Err(Error::InvalidArgument("BFR needs at least two samples".into()));
    }
    let width = y[0].as_ref().len();
    let n = y.len() as f64;
    let mut mean = vec![0.0; width];
    for s in y {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v / n;
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        let a = a.as_ref();
        let err: Vec<f64> = a.iter().zip(b.as_ref()).map(|(p, q)| p - q).collect();
        let dev: Vec<f64> = a.iter().zip(&mean).map(|(p, q)| p - q).collect();
        num += norm(&err);
        den += norm(&dev);
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("BFR undefined for a constant output".into()));
    }
    Ok((1.0 - num / den).max(0.0) * 100.0)
}

/// Best attainable BFR of the exact noiseless model when the output carries
/// additive noise at `snr_db` (amplitude ratio in dB).
pub fn noise_ceiling_bfr(snr_db: f64) -> f64 {
    ((1.0 - 10f64.powf(-snr_db / 20.0)) * 100.0).clamp(0.0, 100.0)
}

/// Root mean of squared sample norms.
pub fn rms<A: AsRef<[f64]>>(seq: &[A]) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("RMS of an empty sequence".into()));
    }
    let ss: f64 = seq
        .iter()
        .map(|s| s.as_ref().iter().map(|x| x * x).sum::<f64>())
        .sum();
    Ok((ss / seq.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub bfr: f64,
    pub rms: f64,
    /// `None` when the noise level of the data is unknown.
    pub noise_ceiling_bfr: Option<f64>,
    #[serde(skip)]
    pub errors: Vec<Vec<f64>>,
}

impl FitReport {
    pub fn new<A: AsRef<[f64]>, B: AsRef<[f64]>>(y: &[A], y_hat: &[B], snr_db: Option<f64>) -> Result<Self> {
        let bfr = bfr(y, y_hat)?;
        let errors: Vec<Vec<f64>> = y
            .iter()
            .zip(y_hat)
            .map(|(a, b)| a.as_ref().iter().zip(b.as_ref()).map(|(p, q)| p - q).collect())
            .collect();
        Ok(FitReport {
            bfr,
            rms: rms(&errors)?,
            noise_ceiling_bfr: snr_db.map(noise_ceiling_bfr),
            errors,
        })
    }

    pub const CSV_HEADER: &'static str = "bfr,rms,noise_ceiling_bfr";

    pub fn csv_row(&self) -> String {
        let ceiling = self.noise_ceiling_bfr.map(|c| c.to_string()).unwrap_or_default();
        format!("{},{},{}", self.bfr, self.rms, ceiling)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn bfr_edge_cases() {
        let y = col(&[1.0, 2.0, 4.0, 3.0]);
        assert_eq!(bfr(&y, &y).unwrap(), 100.0);
        let mean = col(&[2.5; 4]);
        assert!(bfr(&y, &mean).unwrap().abs() < 1e-12);
        let bad = col(&[10.0, -10.0, 10.0, -10.0]);
        assert_eq!(bfr(&y, &bad).unwrap(), 0.0);
        assert!(bfr(&col(&[1.0, 1.0]), &col(&[1.0, 1.0])).is_err());
        assert!(bfr(&col(&[1.0]), &col(&[1.0])).is_err());
        assert!(bfr(&col(&[1.0, 2.0]), &col(&[1.0])).is_err());
    }

    #[test]
    fn bfr_uses_mean_of_norms() {
        let y = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let yh = vec![vec![0.0, 0.0], vec![2.0, 0.6]];
        // mean of deviations: (1 + 1) / 2; mean of errors: 0.6 / 2
        assert!((bfr(&y, &yh).unwrap() - 70.0).abs() < 1e-12);
    }

    #[test]
    fn ceiling_values() {
        assert_eq!((noise_ceiling_bfr(35.0) * 100.0).round() / 100.0, 98.22);
        assert_eq!(noise_ceiling_bfr(f64::INFINITY), 100.0);
        assert_eq!(noise_ceiling_bfr(0.0), 0.0);
        assert!(noise_ceiling_bfr(20.0) < noise_ceiling_bfr(21.0));
    }

    #[test]
    fn rms_values() {
        assert_eq!(rms(&col(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(rms(&col(&[3.0])).unwrap(), 3.0);
        assert!((rms(&col(&[3.0, 4.0])).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rms::<Vec<f64>>(&[]).is_err());
    }
}
