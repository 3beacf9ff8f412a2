//! Sub-space encoder: estimates the model state at time `t` from the lag
//! window `u[t-n..=t]`, `y[t-n..=t]`.

use serde::{Deserialize, Serialize};

use crate::diffnet::{Mlp, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderNet {
    pub lag: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub mlp: Mlp,
}

/// `lag + 1` time-aligned samples of input and output ending at `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWindow {
    pub anchor: usize,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl LagWindow {
    /// Cuts the window ending at `anchor` out of flat row-major signals.
    pub fn from_signals(
        u: &[f64],
        n_u: usize,
        y: &[f64],
        n_y: usize,
        anchor: usize,
        lag: usize,
    ) -> Result<Self> {
        let len = u.len().checked_div(n_u).unwrap_or_else(|| y.len() / n_y.max(1));
        if anchor < lag || anchor >= len {
            return Err(Error::InvalidArgument(format!(
                "incomplete lag window: anchor {anchor}, lag {lag}, {len} samples"
            )));
        }
        let rows = |x: &[f64], n: usize| -> Vec<Vec<f64>> {
            (anchor - lag..=anchor).map(|k| x[k * n..(k + 1) * n].to_vec()).collect()
        };
        Ok(LagWindow {
            anchor,
            u: rows(u, n_u),
            y: rows(y, n_y),
        })
    }

    /// `[u_{t-n}, .., u_t, y_{t-n}, .., y_t]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.u.iter().chain(&self.y).flatten().copied().collect()
    }
}

impl EncoderNet {
    pub fn init(
        lag: usize,
        n_u: usize,
        n_y: usize,
        n_x: usize,
        hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut widths = vec![Self::input_dim_for(lag, n_u, n_y)];
        widths.extend_from_slice(hidden);
        widths.push(n_x);
        Ok(EncoderNet {
            lag,
            n_u,
            n_y,
            mlp: Mlp::init_with(&widths, true, rng)?,
        })
    }

    pub fn input_dim_for(lag: usize, n_u: usize, n_y: usize) -> usize {
        (lag + 1) * (n_u + n_y)
    }

    pub fn input_dim(&self) -> usize {
        Self::input_dim_for(self.lag, self.n_u, self.n_y)
    }

    pub fn n_x(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp.input_dim() != self.input_dim() {
            return Err(Error::dim("encoder input", self.input_dim(), self.mlp.input_dim()));
        }
        Ok(())
    }

    pub fn encode(&self, window: &LagWindow) -> Result<Vec<f64>> {
        if window.u.len() != self.lag + 1 || window.y.len() != self.lag + 1 {
            return Err(Error::InvalidArgument(format!(
                "incomplete lag window: need {} samples, got {} inputs and {} outputs",
                self.lag + 1,
                window.u.len(),
                window.y.len()
            )));
        }
        let flat = window.flatten();
        if flat.len() != self.input_dim() {
            return Err(Error::dim("encoder window", self.input_dim(), flat.len()));
        }
        self.mlp.forward(&flat)
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        self.mlp.params()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params_mut()
    }
}
