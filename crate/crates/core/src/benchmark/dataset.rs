use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpv::{NoiseStructure, Normalization};

/// Provenance recorded next to every generated data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub role: String,
    pub sample_time: f64,
    pub seed: u64,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub sigma_e: f64,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub noise: Option<NoiseStructure>,
    #[serde(default)]
    pub system: Option<serde_json::Value>,
    #[serde(default)]
    pub stats: Option<Normalization>,
}

/// Aligned input/output records, optionally with the true scheduling signal.
/// Signals are stored flat and row-major, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    n_u: usize,
    n_y: usize,
    n_p: usize,
    u: Vec<f64>,
    y: Vec<f64>,
    p: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl DataSet {
    pub fn new(n_u: usize, u: Vec<f64>, n_y: usize, y: Vec<f64>) -> Result<Self> {
        Self::with_scheduling(n_u, u, n_y, y, None)
    }

    /// `p` is `(n_p, values)` when the generating system exposes its
    /// scheduling signal.
    pub fn with_scheduling(
        n_u: usize,
        u: Vec<f64>,
        n_y: usize,
        y: Vec<f64>,
        p: Option<(usize, Vec<f64>)>,
    ) -> Result<Self> {
        if n_u == 0 || n_y == 0 {
            return Err(Error::InvalidArgument("data needs at least one input and one output".into()));
        }
        if !u.len().is_multiple_of(n_u) || !y.len().is_multiple_of(n_y) {
            return Err(Error::InvalidArgument("signal length not a multiple of its width".into()));
        }
        let len = u.len() / n_u;
        if y.len() / n_y != len {
            return Err(Error::dim("dataset output length", len, y.len() / n_y));
        }
        let (n_p, p) = match p {
            Some((n_p, p)) => {
                if n_p == 0 || p.len() != len * n_p {
                    return Err(Error::dim("dataset scheduling length", len * n_p, p.len()));
                }
                (n_p, Some(p))
            }
            None => (0, None),
        };
        let finite = |x: &[f64]| x.iter().all(|v| v.is_finite());
        if !finite(&u) || !finite(&y) || p.as_deref().is_some_and(|p| !finite(p)) {
            return Err(Error::InvalidArgument("dataset contains non-finite samples".into()));
        }
        Ok(DataSet {
            n_u,
            n_y,
            n_p,
            u,
            y,
            p,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.u.len() / self.n_u
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn p(&self) -> Option<&[f64]> {
        self.p.as_deref()
    }

    pub fn u_at(&self, k: usize) -> &[f64] {
        &self.u[k * self.n_u..(k + 1) * self.n_u]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.n_y..(k + 1) * self.n_y]
    }

    pub fn p_at(&self, k: usize) -> Option<&[f64]> {
        self.p.as_ref().map(|p| &p[k * self.n_p..(k + 1) * self.n_p])
    }

    /// Same samples without the scheduling columns.
    pub fn without_scheduling(&self) -> DataSet {
        DataSet {
            n_p: 0,
            p: None,
            ..self.clone()
        }
    }

    pub fn compute_stats(&self) -> Normalization {
        Normalization::from_signals(&self.u, self.n_u, &self.y, self.n_y)
    }

    /// Outputs as one vector per sample.
    pub fn y_rows(&self) -> Vec<Vec<f64>> {
        self.y.chunks(self.n_y).map(|r| r.to_vec()).collect()
    }
}
