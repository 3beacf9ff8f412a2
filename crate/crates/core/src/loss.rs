//! Prediction-error objectives built on encoder-initialized rollouts.
//!
//! Indices are 0-based: a subsection starting at `t` needs the lag window
//! `t - n ..= t` and the horizon `t ..= t + T - 1`, so admissible starts are
//! `n ..= N - T`. Losses are measured in model (standardized) output units.

use std::collections::VecDeque;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;

use crate::benchmark::DataSet;
use crate::diffnet::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::lpv::rollout::{rollout_batch, run_sequence, Bound, Series};
use crate::lpv::LpvSubnet;
use crate::rng::SeededRng;

/// Chunk size for loss evaluations that do not need gradients.
const EVAL_CHUNK: usize = 512;

/// A set of subsection starts sharing one truncation length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    starts: Vec<usize>,
    horizon: usize,
}

impl BatchSpec {
    pub fn new(starts: Vec<usize>, horizon: usize, len: usize, lag: usize) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let range = admissible_starts(len, lag, horizon)?;
        if let Some(bad) = starts.iter().find(|t| !range.contains(t)) {
            return Err(Error::InvalidArgument(format!(
                "start {bad} outside admissible range {range:?}"
            )));
        }
        Ok(BatchSpec { starts, horizon })
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Number of samples a single encoder-initialized rollout can cover.
pub fn admissible_span(len: usize, lag: usize) -> usize {
    len.saturating_sub(lag)
}

pub fn admissible_starts(len: usize, lag: usize, horizon: usize) -> Result<RangeInclusive<usize>> {
    if horizon == 0 || horizon > admissible_span(len, lag) {
        return Err(Error::InvalidArgument(format!(
            "truncation length {horizon} not in 1..={} for {len} samples with lag {lag}",
            admissible_span(len, lag)
        )));
    }
    Ok(lag..=len - horizon)
}

fn squared_error_sum(g: &mut Graph, steps: &[(crate::lpv::rollout::StepNodes, NodeId)]) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (s, y) in steps {
        let diff = g.sub(s.y_hat, *y)?;
        let sq = g.square(diff);
        let sum = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, sum)?,
            None => sum,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("zero-length horizon".into()))
}

fn chunk_sse(net: &LpvSubnet, series: &Series, starts: &[usize], horizon: usize) -> Result<f64> {
    let mut g = Graph::new();
    let bound = Bound::bind(net, &mut g);
    let steps = rollout_batch(net, &bound, &mut g, series, starts, horizon, net.mode, false)?;
    let total = squared_error_sum(&mut g, &steps)?;
    Ok(g.value(total).item())
}

pub(crate) fn mean_loss_series(net: &LpvSubnet, series: &Series, starts: &[usize], horizon: usize) -> Result<f64> {
    let mut sse = 0.0;
    for chunk in starts.chunks(EVAL_CHUNK) {
        sse += chunk_sse(net, series, chunk, horizon)?;
    }
    Ok(sse / (horizon * starts.len()) as f64)
}

/// Loss and its gradient for one contiguous chunk of a batch, normalized by
/// the size of the whole batch.
fn chunk_loss_grad(
    net: &LpvSubnet,
    series: &Series,
    starts: &[usize],
    horizon: usize,
    denom: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = Bound::bind(net, &mut g);
    let steps = rollout_batch(net, &bound, &mut g, series, starts, horizon, net.mode, false)?;
    let total = squared_error_sum(&mut g, &steps)?;
    let loss = g.scale(total, 1.0 / denom);
    let mut grads = g.backward(loss)?;
    let tensors = bound
        .param_ids()
        .into_iter()
        .map(|id| {
            grads.take(id).unwrap_or_else(|| {
                let v = g.value(id);
                Tensor::zeros(v.rows(), v.cols())
            })
        })
        .collect();
    Ok((g.value(loss).item(), tensors))
}

/// Batch loss and gradients aligned with [`LpvSubnet::params`].
///
/// With `threads > 1` the batch is split into contiguous chunks evaluated
/// concurrently and reduced in chunk order.
pub(crate) fn loss_and_grad_series(
    net: &LpvSubnet,
    series: &Series,
    starts: &[usize],
    horizon: usize,
    threads: usize,
) -> Result<(f64, Vec<Tensor>)> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let denom = (horizon * starts.len()) as f64;
    let threads = threads.clamp(1, starts.len());
    if threads == 1 {
        return chunk_loss_grad(net, series, starts, horizon, denom);
    }
    let chunk = starts.len().div_ceil(threads);
    let parts: Vec<Result<(f64, Vec<Tensor>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .chunks(chunk)
            .map(|c| scope.spawn(move || chunk_loss_grad(net, series, c, horizon, denom)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("loss worker panicked"))
            .collect()
    });
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one chunk")?;
    for part in iter {
        let (l, gs) = part?;
        loss += l;
        for (acc, g) in grads.iter_mut().zip(&gs) {
            acc.add_scaled(g, 1.0);
        }
    }
    Ok((loss, grads))
}

/// Mean squared one-run prediction error over the admissible span, with the
/// encoder initializing the state at sample `n`.
pub fn full_prediction_loss(net: &LpvSubnet, data: &DataSet) -> Result<f64> {
    let series = Series::new(net, data)?;
    full_loss_series(net, &series)
}

pub(crate) fn full_loss_series(net: &LpvSubnet, series: &Series) -> Result<f64> {
    let lag = net.lag();
    if series.len < lag + 2 {
        return Err(Error::InvalidArgument(format!(
            "{} samples is too short for lag {lag}",
            series.len
        )));
    }
    let span = admissible_span(series.len, lag);
    let seq = run_sequence(net, series, net.mode, lag, span, None, false)?;
    let sse: f64 = seq
        .y_hat
        .iter()
        .zip(&series.y[lag * series.n_y..])
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sse / span as f64)
}

/// Mean over all admissible subsections of length `horizon`.
pub fn truncated_loss(net: &LpvSubnet, data: &DataSet, horizon: usize) -> Result<f64> {
    let series = Series::new(net, data)?;
    let starts: Vec<usize> = admissible_starts(series.len, net.lag(), horizon)?.collect();
    mean_loss_series(net, &series, &starts, horizon)
}

pub fn batch_loss(net: &LpvSubnet, data: &DataSet, batch: &BatchSpec) -> Result<f64> {
    let series = Series::new(net, data)?;
    admissible_starts(series.len, net.lag(), batch.horizon)?;
    mean_loss_series(net, &series, &batch.starts, batch.horizon)
}

/// Batch loss together with its gradient with respect to every tensor of
/// [`LpvSubnet::params`].
pub fn batch_loss_and_grad(
    net: &LpvSubnet,
    data: &DataSet,
    batch: &BatchSpec,
    threads: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let series = Series::new(net, data)?;
    admissible_starts(series.len, net.lag(), batch.horizon)?;
    loss_and_grad_series(net, &series, &batch.starts, batch.horizon, threads)
}

/// Uniform sample of `batch_size` distinct admissible starts.
pub fn sample_batch(
    rng: &mut SeededRng,
    len: usize,
    horizon: usize,
    lag: usize,
    batch_size: usize,
) -> Result<BatchSpec> {
    let range = admissible_starts(len, lag, horizon)?;
    let count = range.end() - range.start() + 1;
    if batch_size == 0 || batch_size > count {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} not in 1..={count}"
        )));
    }
    let mut starts: Vec<usize> = rand::seq::index::sample(rng, count, batch_size)
        .into_iter()
        .map(|i| i + range.start())
        .collect();
    starts.sort_unstable();
    Ok(BatchSpec {
        starts,
        horizon,
    })
}

/// Epoch-based sampler: draws batches from a stream of shuffled permutations
/// of the admissible starts, so every start is visited once per epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    len: usize,
    lag: usize,
    horizon: usize,
    batch_size: usize,
    queue: VecDeque<usize>,
    epochs: usize,
}

impl BatchSampler {
    pub fn new(len: usize, lag: usize, horizon: usize, batch_size: usize) -> Result<Self> {
        let range = admissible_starts(len, lag, horizon)?;
        let count = range.end() - range.start() + 1;
        if batch_size == 0 || batch_size > count {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} not in 1..={count}"
            )));
        }
        Ok(BatchSampler {
            len,
            lag,
            horizon,
            batch_size,
            queue: VecDeque::new(),
            epochs: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of permutations drawn so far.
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn next_batch(&mut self, rng: &mut SeededRng) -> BatchSpec {
        if self.queue.len() < self.batch_size {
            let mut perm: Vec<usize> = (self.lag..=self.len - self.horizon).collect();
            perm.shuffle(rng);
            self.queue.extend(perm);
            self.epochs += 1;
        }
        let mut starts = Vec::with_capacity(self.batch_size);
        let mut deferred = Vec::new();
        while starts.len() < self.batch_size {
            let t = self.queue.pop_front().expect("queue holds a full batch");
            // duplicates can only meet across an epoch boundary
            if starts.contains(&t) {
                deferred.push(t);
            } else {
                starts.push(t);
            }
        }
        for t in deferred.into_iter().rev() {
            self.queue.push_front(t);
        }
        starts.sort_unstable();
        BatchSpec {
            starts,
            horizon: self.horizon,
        }
    }
}
