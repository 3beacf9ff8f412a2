use serde::{Deserialize, Serialize};

use crate::diffnet::Tensor;
use crate::error::Result;
use crate::rng::{seeded, uniform, BoxMuller};

/// A discrete-time data-generating system
/// `x+ = f(x, u, w)`, `y = h(x, u) + w`.
pub trait NonlinearSystem {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    /// Width of the exact scheduling signal, 0 when none is known.
    fn n_p(&self) -> usize {
        0
    }
    fn sample_time(&self) -> f64;
    fn state_map(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64>;
    fn output_map(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    /// Scheduling map of an exact affine LPV embedding, when known.
    fn scheduling(&self, _x: &[f64], _u: &[f64]) -> Option<Vec<f64>> {
        None
    }
    /// Parameter record for metadata files.
    fn describe(&self) -> serde_json::Value;
}

/// `sin(x) / x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Forward-Euler forced pendulum with measured angular velocity:
///
/// ```text
/// x1+ = x1 + Ts x2
/// x2+ = x2 + Ts (-w0^2 sin x1 - d x2 + c u + g w)
/// y   = x2 + w
/// ```
///
/// `p = sinc(x1)` embeds it exactly: `-w0^2 sin x1 = -w0^2 p x1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pendulum {
    #[serde(default = "Pendulum::default_omega0_sq")]
    pub omega0_sq: f64,
    #[serde(default = "Pendulum::default_damping")]
    pub damping: f64,
    #[serde(default = "Pendulum::default_gain")]
    pub input_gain: f64,
    #[serde(default = "Pendulum::default_sample_time")]
    pub sample_time: f64,
    /// Gain of the process-noise force under innovation noise.
    #[serde(default = "Pendulum::default_noise_gain")]
    pub noise_gain: f64,
}

impl Pendulum {
    fn default_omega0_sq() -> f64 {
        9.0
    }
    fn default_damping() -> f64 {
        1.2
    }
    fn default_gain() -> f64 {
        5.0
    }
    fn default_sample_time() -> f64 {
        0.1
    }
    fn default_noise_gain() -> f64 {
        1.0
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum {
            omega0_sq: Self::default_omega0_sq(),
            damping: Self::default_damping(),
            input_gain: Self::default_gain(),
            sample_time: Self::default_sample_time(),
            noise_gain: Self::default_noise_gain(),
        }
    }
}

pub fn builtin_pendulum() -> Pendulum {
    Pendulum::default()
}

impl NonlinearSystem for Pendulum {
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn n_p(&self) -> usize {
        1
    }
    fn sample_time(&self) -> f64 {
        self.sample_time
    }

    fn state_map(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let ts = self.sample_time;
        let accel = -self.omega0_sq * x[0].sin() - self.damping * x[1]
            + self.input_gain * u[0]
            + self.noise_gain * w[0];
        vec![x[0] + ts * x[1], x[1] + ts * accel]
    }

    fn output_map(&self, x: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![x[1]]
    }

    fn scheduling(&self, x: &[f64], _u: &[f64]) -> Option<Vec<f64>> {
        Some(vec![sinc(x[0])])
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "pendulum", "parameters": self })
    }
}

/// Linear time-invariant system in innovation form
/// `x+ = A x + B u + K w`, `y = C x + D u + w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d: Tensor,
    pub k: Tensor,
    pub sample_time: f64,
}

impl LtiSystem {
    /// Random system whose `A` has spectral radius `radius`; `D = 0`.
    pub fn random_stable(n_x: usize, n_u: usize, n_y: usize, radius: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut gauss = BoxMuller::new();
        let a = Tensor::from_fn(n_x, n_x, |_, _| uniform(&mut rng, -1.0, 1.0));
        let rho = crate::lpv::spectral_radius(&a);
        let a = a.scaled(radius / rho);
        let b = Tensor::from_fn(n_x, n_u, |_, _| gauss.sample(&mut rng));
        let c = Tensor::from_fn(n_y, n_x, |_, _| gauss.sample(&mut rng));
        let k = Tensor::from_fn(n_x, n_y, |_, _| 0.3 * gauss.sample(&mut rng));
        Ok(LtiSystem {
            a,
            b,
            c,
            d: Tensor::zeros(n_y, n_u),
            k,
            sample_time: 1.0,
        })
    }
}

fn affine(m: &Tensor, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += m.row_slice(i).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl NonlinearSystem for LtiSystem {
    fn n_x(&self) -> usize {
        self.a.rows()
    }
    fn n_u(&self) -> usize {
        self.b.cols()
    }
    fn n_y(&self) -> usize {
        self.c.rows()
    }
    fn sample_time(&self) -> f64 {
        self.sample_time
    }

    fn state_map(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_x()];
        affine(&self.a, x, &mut out);
        affine(&self.b, u, &mut out);
        affine(&self.k, w, &mut out);
        out
    }

    fn output_map(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_y()];
        affine(&self.c, x, &mut out);
        affine(&self.d, u, &mut out);
        out
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "lti", "parameters": self })
    }
}

/// Benchmark selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Any omitted parameter takes the built-in default.
    Pendulum {
        #[serde(default)]
        omega0_sq: Option<f64>,
        #[serde(default)]
        damping: Option<f64>,
        #[serde(default)]
        input_gain: Option<f64>,
        #[serde(default)]
        sample_time: Option<f64>,
        #[serde(default)]
        noise_gain: Option<f64>,
    },
    /// Random stable LTI system drawn from `seed`.
    Lti {
        #[serde(default = "two")]
        n_x: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        seed: u64,
    },
}

fn two() -> usize {
    2
}

fn default_radius() -> f64 {
    0.9
}

impl SystemSpec {
    pub fn build(&self) -> Result<Box<dyn NonlinearSystem + Send + Sync>> {
        Ok(match self {
            SystemSpec::Pendulum {
                omega0_sq,
                damping,
                input_gain,
                sample_time,
                noise_gain,
            } => {
                let d = Pendulum::default();
                Box::new(Pendulum {
                    omega0_sq: omega0_sq.unwrap_or(d.omega0_sq),
                    damping: damping.unwrap_or(d.damping),
                    input_gain: input_gain.unwrap_or(d.input_gain),
                    sample_time: sample_time.unwrap_or(d.sample_time),
                    noise_gain: noise_gain.unwrap_or(d.noise_gain),
                })
            }
            SystemSpec::Lti { n_x, radius, seed } => {
                Box::new(LtiSystem::random_stable(*n_x, 1, 1, *radius, *seed)?)
            }
        })
    }
}
