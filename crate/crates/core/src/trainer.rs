//! Adam-based fitting of the full parameter set under the batch loss.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchmark::DataSet;
use crate::diffnet::Tensor;
use crate::error::{Error, Result};
use crate::loss::{admissible_starts, loss_and_grad_series, sample_batch};
use crate::lpv::rollout::{run_sequence, Series};
use crate::lpv::{LpvSubnet, NoiseStructure};
use crate::metrics::bfr;
use crate::rng::child_rng;

/// Consecutive skipped updates after which training is aborted.
pub const MAX_CONSECUTIVE_SKIPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "AdamConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
}

impl AdamConfig {
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid Adam hyper-parameters {self:?}")));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: Self::default_lr(),
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            eps: Self::default_eps(),
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was not finite; parameters and state are untouched.
    Skipped,
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<StepOutcome> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("adam tensors", params.len(), grads.len().min(state.m.len())));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        let shape = (p.rows(), p.cols());
        if (g.rows(), g.cols()) != shape || (m.rows(), m.cols()) != shape {
            return Err(Error::dim(
                "adam tensor shape",
                format!("{shape:?}"),
                format!("{:?}", (g.rows(), g.cols())),
            ));
        }
    }
    if !grads.iter().all(Tensor::is_finite) {
        return Ok(StepOutcome::Skipped);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (p, m, v) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            p[i] -= hyper.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + hyper.eps);
        }
    }
    Ok(StepOutcome::Applied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "TrainingConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainingConfig::default_t_start")]
    pub t_start: usize,
    #[serde(default = "TrainingConfig::default_t_final")]
    pub t_final: usize,
    /// Updates over which the truncation length ramps from `t_start` to
    /// `t_final`.
    #[serde(default = "TrainingConfig::default_warmup")]
    pub warmup_updates: usize,
    #[serde(default = "TrainingConfig::default_max_updates")]
    pub max_updates: usize,
    #[serde(default = "TrainingConfig::default_val_period")]
    pub val_period: usize,
    /// Validation checks without improvement before stopping.
    #[serde(default = "TrainingConfig::default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
}

impl TrainingConfig {
    fn default_batch_size() -> usize {
        256
    }
    fn default_t_start() -> usize {
        5
    }
    fn default_t_final() -> usize {
        60
    }
    fn default_warmup() -> usize {
        1000
    }
    fn default_max_updates() -> usize {
        10_000
    }
    fn default_val_period() -> usize {
        500
    }
    fn default_patience() -> usize {
        20
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.t_start == 0 || self.val_period == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, t_start, val_period and patience must be positive".into(),
            ));
        }
        if self.t_start > self.t_final {
            return Err(Error::InvalidConfig(format!(
                "t_start {} exceeds t_final {}",
                self.t_start, self.t_final
            )));
        }
        self.adam.validate()
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: Self::default_batch_size(),
            t_start: Self::default_t_start(),
            t_final: Self::default_t_final(),
            warmup_updates: Self::default_warmup(),
            max_updates: Self::default_max_updates(),
            val_period: Self::default_val_period(),
            patience: Self::default_patience(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Truncation length for update `index`: linear ramp from `t_start` to
/// `t_final`, rounded half up, constant after the warm-up.
#[allow(non_snake_case)]
pub fn schedule_T(index: usize, cfg: &TrainingConfig) -> usize {
    if index >= cfg.warmup_updates {
        return cfg.t_final;
    }
    let frac = index as f64 / cfg.warmup_updates as f64;
    let t = cfg.t_start as f64 + (cfg.t_final as f64 - cfg.t_start as f64) * frac;
    (t + 0.5).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRecord {
    /// 1-based index of the update.
    pub update: usize,
    pub horizon: usize,
    /// `None` when the update was skipped.
    pub batch_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRecord {
    /// Number of completed updates at the time of the check.
    pub update: usize,
    /// Full prediction loss on the validation data, model units.
    pub loss: f64,
    /// Simulation fit on the validation data.
    pub bfr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainingHistory {
    pub updates: Vec<UpdateRecord>,
    pub validations: Vec<ValidationRecord>,
    /// Index into `validations` of the returned checkpoint.
    pub best: Option<usize>,
    pub skipped: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best_validation(&self) -> Option<&ValidationRecord> {
        self.best.map(|i| &self.validations[i])
    }

    /// Running minimum of the validation loss at every check.
    pub fn best_loss_trace(&self) -> Vec<f64> {
        self.validations
            .iter()
            .scan(f64::INFINITY, |best, v| {
                *best = best.min(v.loss);
                Some(*best)
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str = "update,T,batch_loss,val_loss,val_BFR,seconds";
}

/// Telemetry sink receiving one CSV row per update and per validation.
pub struct Telemetry<'a> {
    out: &'a mut dyn Write,
}

impl<'a> Telemetry<'a> {
    pub fn new(out: &'a mut dyn Write) -> Result<Self> {
        writeln!(out, "{}", TrainingHistory::CSV_HEADER).map_err(telemetry_err)?;
        Ok(Telemetry { out })
    }

    fn row(&mut self, update: usize, t: Option<usize>, loss: Option<f64>, val: Option<&ValidationRecord>, secs: f64) -> Result<()> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        writeln!(
            self.out,
            "{update},{},{},{},{},{secs}",
            opt(t.map(|t| t.to_string())),
            opt(loss.map(|l| l.to_string())),
            opt(val.map(|v| v.loss.to_string())),
            opt(val.map(|v| v.bfr.to_string())),
        )
        .map_err(telemetry_err)
    }
}

fn telemetry_err(e: std::io::Error) -> Error {
    Error::io("<telemetry>", e)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// Worker threads for batch rollouts; 1 is bit-reproducible.
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { threads: 1 }
    }
}

pub struct TrainOutcome {
    /// Parameters with the lowest recorded validation loss.
    pub net: LpvSubnet,
    pub history: TrainingHistory,
}

/// Validation loss and simulation fit of `net` on `data`.
pub fn validation_scores(net: &LpvSubnet, data: &DataSet) -> Result<ValidationRecord> {
    let series = Series::new(net, data)?;
    let raw = data.y_rows();
    score(net, &series, &raw, 0)
}

fn score(net: &LpvSubnet, series: &Series, raw_y: &[Vec<f64>], update: usize) -> Result<ValidationRecord> {
    let lag = net.lag();
    if series.len < lag + 2 {
        return Err(Error::InvalidArgument(format!(
            "validation data of {} samples is too short for lag {lag}",
            series.len
        )));
    }
    let span = series.len - lag;
    let diverged = ValidationRecord {
        update,
        loss: f64::INFINITY,
        bfr: 0.0,
    };
    let sim = match run_sequence(net, series, net.mode, lag, span, None, true) {
        Ok(s) => s,
        Err(Error::Divergence { .. }) => return Ok(diverged),
        Err(e) => return Err(e),
    };
    let pred_y_hat = match net.noise() {
        NoiseStructure::OutputError => None,
        NoiseStructure::Innovation => match run_sequence(net, series, net.mode, lag, span, None, false) {
            Ok(s) => Some(s.y_hat),
            Err(Error::Divergence { .. }) => return Ok(diverged),
            Err(e) => return Err(e),
        },
    };
    let y_hat = pred_y_hat.as_ref().unwrap_or(&sim.y_hat);
    let sse: f64 = y_hat
        .iter()
        .zip(&series.y[lag * series.n_y..])
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let sim_raw: Vec<Vec<f64>> = net
        .model
        .norm
        .denormalize_y(&sim.y_hat)
        .chunks(series.n_y)
        .map(|c| c.to_vec())
        .collect();
    let fit = if sim_raw.iter().flatten().all(|v| v.is_finite()) {
        bfr(&raw_y[lag..], &sim_raw)?
    } else {
        0.0
    };
    let loss = sse / span as f64;
    Ok(ValidationRecord {
        update,
        loss: if loss.is_finite() { loss } else { f64::INFINITY },
        bfr: fit,
    })
}

/// Minimizes the batch loss on `est` with Adam, validating on `val` every
/// `val_period` updates and returning the best validated checkpoint.
pub fn train(
    net: LpvSubnet,
    est: &DataSet,
    val: &DataSet,
    cfg: &TrainingConfig,
    opts: TrainOptions,
    mut telemetry: Option<&mut Telemetry<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    let lag = net.lag();
    let est_series = Series::new(&net, est)?;
    let val_series = Series::new(&net, val)?;
    let val_raw = val.y_rows();
    admissible_starts(est.len(), lag, cfg.t_final)?;
    let mut rng = child_rng(cfg.seed, "train/batches");
    let mut net = net;
    let mut best_net = net.clone();
    let mut adam = AdamState::new(net.params());
    let mut history = TrainingHistory::default();

    let validate = |net: &LpvSubnet, history: &mut TrainingHistory, best_net: &mut LpvSubnet, update: usize| -> Result<bool> {
        let record = score(net, &val_series, &val_raw, update)?;
        let improved = history.best_validation().is_none_or(|b| record.loss < b.loss);
        if improved {
            history.best = Some(history.validations.len());
            *best_net = net.clone();
        }
        history.validations.push(record);
        Ok(improved)
    };

    validate(&net, &mut history, &mut best_net, 0)?;
    if let Some(t) = telemetry.as_deref_mut() {
        t.row(0, None, None, history.validations.last(), 0.0)?;
    }
    let mut stale = 0;
    let mut consecutive = 0;
    for update in 1..=cfg.max_updates {
        let tick = Instant::now();
        let horizon = schedule_T(update - 1, cfg);
        let batch = sample_batch(&mut rng, est.len(), horizon, lag, cfg.batch_size)?;
        let attempt = loss_and_grad_series(&net, &est_series, batch.starts(), horizon, opts.threads);
        let (loss, reason) = match attempt {
            Ok((loss, grads)) if loss.is_finite() => {
                match adam_step(&mut net.params_mut(), &grads, &mut adam, &cfg.adam)? {
                    StepOutcome::Applied => (Some(loss), None),
                    StepOutcome::Skipped => (None, Some("non-finite gradient".to_string())),
                }
            }
            Ok((loss, _)) => (None, Some(format!("non-finite batch loss {loss}"))),
            Err(e @ Error::Divergence { .. }) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        if let Some(reason) = reason {
            history.skipped += 1;
            consecutive += 1;
            if consecutive >= MAX_CONSECUTIVE_SKIPS {
                return Err(Error::TrainingAborted {
                    consecutive,
                    last: format!("update {update}: {reason}"),
                });
            }
        } else {
            consecutive = 0;
        }
        let seconds = tick.elapsed().as_secs_f64();
        history.updates.push(UpdateRecord {
            update,
            horizon,
            batch_loss: loss,
            seconds,
        });
        let check = update % cfg.val_period == 0 || update == cfg.max_updates;
        if check {
            if validate(&net, &mut history, &mut best_net, update)? {
                stale = 0;
            } else {
                stale += 1;
            }
        }
        if let Some(t) = telemetry.as_deref_mut() {
            let val = check.then(|| history.validations.last()).flatten();
            t.row(update, Some(horizon), loss, val, seconds)?;
        }
        if stale >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { net: best_net, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainingConfig {
        TrainingConfig::default()
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let c = cfg();
        assert_eq!(schedule_T(0, &c), 5);
        assert_eq!(schedule_T(500, &c), 33);
        assert_eq!(schedule_T(1000, &c), 60);
        assert_eq!(schedule_T(5000, &c), 60);
    }

    #[test]
    fn schedule_without_warmup_is_final() {
        let c = TrainingConfig {
            warmup_updates: 0,
            ..cfg()
        };
        assert_eq!(schedule_T(0, &c), 60);
    }

    #[test]
    fn zero_gradient_decays_moments_only() {
        let mut p = Tensor::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
        let mut st = AdamState::new([&p]);
        st.m[0] = Tensor::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        st.v[0] = Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let hyper = AdamConfig { lr: 0.0, ..Default::default() };
        adam_step(&mut [&mut p], &[Tensor::zeros(1, 2)], &mut st, &hyper).unwrap();
        assert_eq!(p.as_slice(), &[1.0, -2.0]);
        assert!((st.m[0].as_slice()[0] - 0.45).abs() < 1e-15);
        assert!((st.v[0].as_slice()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [3.0, -0.5, 0.0];
        let mut p = Tensor::zeros(1, 3);
        let mut st = AdamState::new([&p]);
        let hyper = AdamConfig::default();
        adam_step(&mut [&mut p], &[Tensor::from_vec(1, 3, g.to_vec()).unwrap()], &mut st, &hyper).unwrap();
        for (pi, gi) in p.as_slice().iter().zip(g) {
            let expect = -hyper.lr * gi / (gi.abs() + hyper.eps);
            assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = Tensor::zeros(1, 1);
        let mut st = AdamState::new([&p]);
        let out = adam_step(&mut [&mut p], &[Tensor::scalar(f64::NAN)], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!(st.step, 0);
        assert_eq!(p.item(), 0.0);
    }

    #[test]
    fn quadratic_converges_like_reference() {
        // scalar reference implementation, independent of the tensor code
        let hess = [4.0, 0.25];
        let grad = |x: &[f64]| [hess[0] * x[0], hess[1] * x[1]];
        let hyper = AdamConfig { lr: 0.05, ..Default::default() };
        let mut p = Tensor::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let mut st = AdamState::new([&p]);
        let (mut rx, mut rm, mut rv) = ([1.0, -1.0], [0.0; 2], [0.0; 2]);
        for t in 1..=3000 {
            let g = grad(p.as_slice());
            adam_step(&mut [&mut p], &[Tensor::from_vec(1, 2, g.to_vec()).unwrap()], &mut st, &hyper).unwrap();
            let rg = grad(&rx);
            for i in 0..2 {
                rm[i] = 0.9 * rm[i] + (1.0 - 0.9) * rg[i];
                rv[i] = 0.999 * rv[i] + (1.0 - 0.999) * rg[i] * rg[i];
                let mh = rm[i] / (1.0 - 0.9f64.powi(t));
                let vh = rv[i] / (1.0 - 0.999f64.powi(t));
                rx[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
            }
            assert_eq!(p.as_slice(), &rx, "step {t}");
        }
        let g = grad(p.as_slice());
        assert!(g[0].hypot(g[1]) < 1e-6, "{g:?}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::zeros(1, 2);
        let mut st = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(2, 1)], &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig { t_start: 70, ..cfg() }.validate().is_err());
        assert!(TrainingConfig { batch_size: 0, ..cfg() }.validate().is_err());
        let parsed: TrainingConfig = serde_json::from_str(r#"{"max_updates": 3}"#).unwrap();
        assert_eq!(parsed, TrainingConfig { max_updates: 3, ..cfg() });
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
