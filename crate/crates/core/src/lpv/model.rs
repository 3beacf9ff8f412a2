use serde::{Deserialize, Serialize};

use super::affine::AffineMatrixFunction;
use super::NoiseStructure;
use crate::diffnet::{Mlp, Tensor};
use crate::error::{Error, Result};
use crate::rng::{uniform, SeededRng};

/// Per-channel affine standardization of inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n_u: usize, n_y: usize) -> Self {
        Normalization {
            u_mean: vec![0.0; n_u],
            u_std: vec![1.0; n_u],
            y_mean: vec![0.0; n_y],
            y_std: vec![1.0; n_y],
        }
    }

    /// Sample mean and (population) standard deviation per channel of flat
    /// row-major signals. Constant channels get unit scale.
    pub fn from_signals(u: &[f64], n_u: usize, y: &[f64], n_y: usize) -> Self {
        let (u_mean, u_std) = channel_stats(u, n_u);
        let (y_mean, y_std) = channel_stats(y, n_y);
        Normalization {
            u_mean,
            u_std,
            y_mean,
            y_std,
        }
    }

    pub fn n_u(&self) -> usize {
        self.u_mean.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_mean.len()
    }

    pub fn normalize_u(&self, u: &[f64]) -> Vec<f64> {
        standardize(u, &self.u_mean, &self.u_std)
    }

    pub fn normalize_y(&self, y: &[f64]) -> Vec<f64> {
        standardize(y, &self.y_mean, &self.y_std)
    }

    pub fn denormalize_y(&self, y: &[f64]) -> Vec<f64> {
        let n = self.y_mean.len();
        y.iter()
            .enumerate()
            .map(|(i, v)| v * self.y_std[i % n] + self.y_mean[i % n])
            .collect()
    }
}

fn channel_stats(x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let rows = x.len() / n;
    let mut mean = vec![0.0; n];
    for row in x.chunks(n) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.max(1) as f64);
    let mut var = vec![0.0; n];
    for row in x.chunks(n) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / rows.max(1) as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn standardize(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    let n = mean.len();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % n]) / std[i % n])
        .collect()
}

/// Affine LPV state-space predictor
/// `x+ = A(p_x) x + B(p_x) u + K(p_x) e`, `y = C(p_y) x + D(p_y) u`.
///
/// The matrices act on standardized signals; `norm` maps between data units
/// and model units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpvSsModel {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_px: usize,
    pub n_py: usize,
    pub noise: NoiseStructure,
    pub a: AffineMatrixFunction,
    pub b: AffineMatrixFunction,
    pub c: AffineMatrixFunction,
    pub d: AffineMatrixFunction,
    pub k: AffineMatrixFunction,
    pub norm: Normalization,
}

impl LpvSsModel {
    /// All-zero model of the given dimensions.
    pub fn zeros(
        n_x: usize,
        n_u: usize,
        n_y: usize,
        n_px: usize,
        n_py: usize,
        noise: NoiseStructure,
    ) -> Self {
        LpvSsModel {
            n_x,
            n_u,
            n_y,
            n_px,
            n_py,
            noise,
            a: AffineMatrixFunction::zeros(n_x, n_x, n_px),
            b: AffineMatrixFunction::zeros(n_x, n_u, n_px),
            c: AffineMatrixFunction::zeros(n_y, n_x, n_py),
            d: AffineMatrixFunction::zeros(n_y, n_u, n_py),
            k: AffineMatrixFunction::zeros(n_x, n_y, n_px),
            norm: Normalization::identity(n_u, n_y),
        }
    }

    /// Stable LTI starting point: `A_0` random with spectral radius 0.9,
    /// Glorot `B_0` and `C_0`, everything else zero.
    pub fn init(
        n_x: usize,
        n_u: usize,
        n_y: usize,
        n_px: usize,
        n_py: usize,
        noise: NoiseStructure,
        rng: &mut SeededRng,
    ) -> Self {
        let mut m = Self::zeros(n_x, n_u, n_y, n_px, n_py, noise);
        let mut a0 = Tensor::from_fn(n_x, n_x, |_, _| uniform(rng, -1.0, 1.0));
        let rho = spectral_radius(&a0);
        if rho > 0.0 {
            a0 = a0.scaled(0.9 / rho);
        }
        *m.a.base_mut() = a0;
        let lim_b = (6.0 / (n_x + n_u) as f64).sqrt();
        *m.b.base_mut() = Tensor::from_fn(n_x, n_u, |_, _| uniform(rng, -lim_b, lim_b));
        let lim_c = (6.0 / (n_x + n_y) as f64).sqrt();
        *m.c.base_mut() = Tensor::from_fn(n_y, n_x, |_, _| uniform(rng, -lim_c, lim_c));
        m
    }

    pub fn n_p(&self) -> usize {
        self.n_px + self.n_py
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("A", &self.a, (self.n_x, self.n_x), self.n_px),
            ("B", &self.b, (self.n_x, self.n_u), self.n_px),
            ("C", &self.c, (self.n_y, self.n_x), self.n_py),
            ("D", &self.d, (self.n_y, self.n_u), self.n_py),
            ("K", &self.k, (self.n_x, self.n_y), self.n_px),
        ];
        for (name, f, shape, np) in checks {
            if f.shape() != shape || f.n_p() != np {
                return Err(Error::InvalidArgument(format!(
                    "{name} has shape {:?} with {} coefficients, expected {shape:?} with {np}",
                    f.shape(),
                    f.n_p()
                )));
            }
        }
        if self.noise == NoiseStructure::OutputError && !self.k.is_zero() {
            return Err(Error::InvalidArgument(
                "output-error model with nonzero K".into(),
            ));
        }
        if self.norm.n_u() != self.n_u || self.norm.n_y() != self.n_y {
            return Err(Error::InvalidArgument("normalization dims disagree with model".into()));
        }
        Ok(())
    }

    /// Trainable state-space parameters; `K` only under innovation noise.
    pub(crate) fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        out.extend(self.a.params());
        out.extend(self.b.params());
        out.extend(self.c.params());
        out.extend(self.d.params());
        if self.noise == NoiseStructure::Innovation {
            out.extend(self.k.params());
        }
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let innovation = self.noise == NoiseStructure::Innovation;
        let mut out = Vec::new();
        out.extend(self.a.params_mut());
        out.extend(self.b.params_mut());
        out.extend(self.c.params_mut());
        out.extend(self.d.params_mut());
        if innovation {
            out.extend(self.k.params_mut());
        }
        out
    }
}

pub fn spectral_radius(m: &Tensor) -> f64 {
    let n = m.rows();
    if n == 0 {
        return 0.0;
    }
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    mat.complex_eigenvalues()
        .iter()
        .fold(0.0, |r: f64, z| r.max(z.norm()))
}

/// Partitioned scheduling map `p = [phi_x(x, u, y); phi_y(x, u)]`.
///
/// `phi_y` never sees the measured output; `phi_x` sees it only under
/// innovation noise. An empty partition has no network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingNet {
    pub noise: NoiseStructure,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub phi_x: Option<Mlp>,
    pub phi_y: Option<Mlp>,
}

impl SchedulingNet {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        n_x: usize,
        n_u: usize,
        n_y: usize,
        n_px: usize,
        n_py: usize,
        hidden: &[usize],
        noise: NoiseStructure,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let widths = |d_in: usize, d_out: usize| {
            let mut w = vec![d_in];
            w.extend_from_slice(hidden);
            w.push(d_out);
            w
        };
        let x_in = Self::phi_x_input_dim_for(noise, n_x, n_u, n_y);
        let phi_x = if n_px > 0 {
            Some(Mlp::init_with(&widths(x_in, n_px), true, rng)?)
        } else {
            None
        };
        let phi_y = if n_py > 0 {
            Some(Mlp::init_with(&widths(n_x + n_u, n_py), true, rng)?)
        } else {
            None
        };
        Ok(SchedulingNet {
            noise,
            n_x,
            n_u,
            n_y,
            phi_x,
            phi_y,
        })
    }

    fn phi_x_input_dim_for(noise: NoiseStructure, n_x: usize, n_u: usize, n_y: usize) -> usize {
        match noise {
            NoiseStructure::Innovation => n_x + n_u + n_y,
            NoiseStructure::OutputError => n_x + n_u,
        }
    }

    pub fn n_px(&self) -> usize {
        self.phi_x.as_ref().map_or(0, |m| m.output_dim())
    }

    pub fn n_py(&self) -> usize {
        self.phi_y.as_ref().map_or(0, |m| m.output_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.phi_x {
            let want = Self::phi_x_input_dim_for(self.noise, self.n_x, self.n_u, self.n_y);
            if m.input_dim() != want {
                return Err(Error::dim("phi_x input", want, m.input_dim()));
            }
        }
        if let Some(m) = &self.phi_y {
            if m.input_dim() != self.n_x + self.n_u {
                return Err(Error::dim("phi_y input", self.n_x + self.n_u, m.input_dim()));
            }
        }
        Ok(())
    }

    /// Evaluates `[phi_x; phi_y]` for one sample in model units.
    ///
    /// `y` must be given under innovation noise and omitted under
    /// output-error noise.
    pub fn eval(&self, x: &[f64], u: &[f64], y: Option<&[f64]>) -> Result<Vec<f64>> {
        if x.len() != self.n_x {
            return Err(Error::dim("scheduling state", self.n_x, x.len()));
        }
        if u.len() != self.n_u {
            return Err(Error::dim("scheduling input", self.n_u, u.len()));
        }
        let mut xu = x.to_vec();
        xu.extend_from_slice(u);
        let mut out = Vec::with_capacity(self.n_px() + self.n_py());
        match (self.noise, y) {
            (NoiseStructure::Innovation, Some(y)) => {
                if y.len() != self.n_y {
                    return Err(Error::dim("scheduling output", self.n_y, y.len()));
                }
                if let Some(m) = &self.phi_x {
                    let mut z = xu.clone();
                    z.extend_from_slice(y);
                    out.extend(m.forward(&z)?);
                }
            }
            (NoiseStructure::OutputError, None) => {
                if let Some(m) = &self.phi_x {
                    out.extend(m.forward(&xu)?);
                }
            }
            (NoiseStructure::Innovation, None) => {
                return Err(Error::InvalidArgument(
                    "innovation scheduling map needs the measured output".into(),
                ))
            }
            (NoiseStructure::OutputError, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "output-error scheduling map must not receive the measured output".into(),
                ))
            }
        }
        if let Some(m) = &self.phi_y {
            out.extend(m.forward(&xu)?);
        }
        Ok(out)
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(m) = &self.phi_x {
            out.extend(m.params());
        }
        if let Some(m) = &self.phi_y {
            out.extend(m.params());
        }
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.phi_x {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.phi_y {
            out.extend(m.params_mut());
        }
        out
    }
}
