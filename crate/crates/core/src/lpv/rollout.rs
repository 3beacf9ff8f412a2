//! Forward propagation of the predictor on the tape.
//!
//! Two drivers share [`step_graph`]: a batched one that advances many
//! subsections in lock-step (training losses), and a sequential one that
//! walks a single trajectory while rewinding the tape after every sample
//! (long evaluations).

use super::affine::{AffineMatrixFunction, AffineNodes};
use super::net::LpvSubnet;
use super::{NoiseStructure, SchedulingMode};
use crate::benchmark::DataSet;
use crate::diffnet::{Graph, MlpNodes, NodeId, Tensor};
use crate::error::{Error, Result};

/// Largest state magnitude (model units) before a rollout counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// A data set standardized into model units.
#[derive(Debug, Clone)]
pub(crate) struct Series {
    pub len: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_p: usize,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Option<Vec<f64>>,
}

fn gather(x: &[f64], width: usize, rows: impl ExactSizeIterator<Item = usize>) -> Tensor {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        data.extend_from_slice(&x[r * width..(r + 1) * width]);
    }
    Tensor::from_vec(n, width, data).expect("gathered rows have the declared width")
}

impl Series {
    pub(crate) fn new(net: &LpvSubnet, ds: &DataSet) -> Result<Self> {
        let m = &net.model;
        if ds.n_u() != m.n_u || ds.n_y() != m.n_y {
            return Err(Error::dim(
                "data set vs model (n_u, n_y)",
                format!("({}, {})", m.n_u, m.n_y),
                format!("({}, {})", ds.n_u(), ds.n_y()),
            ));
        }
        Ok(Series {
            len: ds.len(),
            n_u: ds.n_u(),
            n_y: ds.n_y(),
            n_p: ds.n_p(),
            u: m.norm.normalize_u(ds.u()),
            y: m.norm.normalize_y(ds.y()),
            p: ds.p().map(|p| p.to_vec()),
        })
    }

    fn u_rows(&self, idx: &[usize], offset: usize) -> Tensor {
        gather(&self.u, self.n_u, idx.iter().map(|t| t + offset))
    }

    fn y_rows(&self, idx: &[usize], offset: usize) -> Tensor {
        gather(&self.y, self.n_y, idx.iter().map(|t| t + offset))
    }

    fn p_rows(&self, idx: &[usize], offset: usize) -> Result<Tensor> {
        let p = self
            .p
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("oracle scheduling needs p columns in the data".into()))?;
        Ok(gather(p, self.n_p, idx.iter().map(|t| t + offset)))
    }

    /// Encoder inputs for windows ending at `anchor + offset`, one per row.
    fn windows(&self, anchors: &[usize], offset: usize, lag: usize) -> Tensor {
        let width = (lag + 1) * (self.n_u + self.n_y);
        let mut data = Vec::with_capacity(anchors.len() * width);
        for a in anchors {
            let end = a + offset + 1;
            let begin = end - lag - 1;
            data.extend_from_slice(&self.u[begin * self.n_u..end * self.n_u]);
            data.extend_from_slice(&self.y[begin * self.n_y..end * self.n_y]);
        }
        Tensor::from_vec(anchors.len(), width, data).expect("window width")
    }
}

/// Tape handles for every parameter of an [`LpvSubnet`].
pub(crate) struct Bound {
    a: AffineNodes,
    b: AffineNodes,
    c: AffineNodes,
    d: AffineNodes,
    k: Option<AffineNodes>,
    phi_x: Option<MlpNodes>,
    phi_y: Option<MlpNodes>,
    enc: MlpNodes,
}

impl Bound {
    pub(crate) fn bind(net: &LpvSubnet, g: &mut Graph) -> Self {
        let m = &net.model;
        let a = m.a.bind(g);
        let b = m.b.bind(g);
        let c = m.c.bind(g);
        let d = m.d.bind(g);
        let k = (m.noise == NoiseStructure::Innovation).then(|| m.k.bind(g));
        let phi_x = net.sched.phi_x.as_ref().map(|n| n.bind(g));
        let phi_y = net.sched.phi_y.as_ref().map(|n| n.bind(g));
        let enc = net.encoder.mlp.bind(g);
        Bound {
            a,
            b,
            c,
            d,
            k,
            phi_x,
            phi_y,
            enc,
        }
    }

    /// Leaf ids in the order of [`LpvSubnet::params`].
    pub(crate) fn param_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = Vec::new();
        for f in [&self.a, &self.b, &self.c, &self.d] {
            ids.extend(f.ids());
        }
        if let Some(k) = &self.k {
            ids.extend(k.ids());
        }
        if let Some(n) = &self.phi_x {
            ids.extend(n.ids());
        }
        if let Some(n) = &self.phi_y {
            ids.extend(n.ids());
        }
        ids.extend(self.enc.ids());
        ids
    }
}

/// Where the scheduling map reads its state, or the scheduling itself.
#[derive(Clone, Copy)]
pub(crate) enum SchedSource {
    State(NodeId),
    Given(NodeId),
}

pub(crate) struct StepNodes {
    pub x_next: NodeId,
    pub y_hat: NodeId,
    pub p_hat: Option<NodeId>,
}

/// One predictor step for a batch of rows. `y = None` runs the model in
/// simulation: the innovation is zero and `y_hat` stands in for `y`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_graph(
    net: &LpvSubnet,
    bound: &Bound,
    g: &mut Graph,
    x: NodeId,
    u: NodeId,
    y: Option<NodeId>,
    source: SchedSource,
    step: usize,
) -> Result<StepNodes> {
    let m = &net.model;
    let innovation = m.noise == NoiseStructure::Innovation;

    let mut px = None;
    let mut py = None;
    let mut xu = None;
    match source {
        SchedSource::Given(p) => {
            if m.n_px > 0 {
                px = Some(g.slice_cols(p, 0, m.n_px)?);
            }
            if m.n_py > 0 {
                py = Some(g.slice_cols(p, m.n_px, m.n_py)?);
            }
        }
        SchedSource::State(s) => {
            let z = g.concat_cols(&[s, u])?;
            xu = Some(z);
            if let (Some(net_y), Some(nodes)) = (&net.sched.phi_y, &bound.phi_y) {
                py = Some(net_y.forward_graph(g, nodes, z)?);
            }
        }
    }

    let cx = AffineMatrixFunction::apply_graph(&bound.c, g, x, py)?;
    let du = AffineMatrixFunction::apply_graph(&bound.d, g, u, py)?;
    let y_hat = g.add(cx, du)?;
    let y_used = y.unwrap_or(y_hat);

    if let (SchedSource::State(s), Some(net_x), Some(nodes)) = (source, &net.sched.phi_x, &bound.phi_x) {
        let z = if innovation {
            g.concat_cols(&[s, u, y_used])?
        } else {
            xu.expect("set for state-driven scheduling")
        };
        px = Some(net_x.forward_graph(g, nodes, z)?);
    }

    let ax = AffineMatrixFunction::apply_graph(&bound.a, g, x, px)?;
    let bu = AffineMatrixFunction::apply_graph(&bound.b, g, u, px)?;
    let mut x_next = g.add(ax, bu)?;
    if let (Some(k), Some(y)) = (&bound.k, y) {
        let e = g.sub(y, y_hat)?;
        let ke = AffineMatrixFunction::apply_graph(k, g, e, px)?;
        x_next = g.add(x_next, ke)?;
    }

    let xv = g.value(x_next);
    let peak = xv.max_abs();
    if !peak.is_finite() || peak > DIVERGENCE_LIMIT || !g.value(y_hat).is_finite() {
        return Err(Error::Divergence {
            step,
            reason: format!("state magnitude {peak:e}"),
        });
    }

    let p_hat = match (px, py) {
        (Some(a), Some(b)) => Some(g.concat_cols(&[a, b])?),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    Ok(StepNodes { x_next, y_hat, p_hat })
}

fn check_oracle(net: &LpvSubnet, series: &Series) -> Result<()> {
    if series.p.is_none() {
        return Err(Error::InvalidArgument("oracle scheduling needs p columns in the data".into()));
    }
    if series.n_p != net.model.n_p() {
        return Err(Error::dim("oracle scheduling width", net.model.n_p(), series.n_p));
    }
    Ok(())
}

fn check_span(series: &Series, lag: usize, start: usize, horizon: usize) -> Result<()> {
    if start < lag || start + horizon > series.len {
        return Err(Error::InvalidArgument(format!(
            "window [{start}, {}) with lag {lag} does not fit {} samples",
            start + horizon,
            series.len
        )));
    }
    Ok(())
}

/// Batched rollout of the subsections starting at `starts`, each over
/// `horizon` steps. Returns the per-step nodes and the measured outputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rollout_batch(
    net: &LpvSubnet,
    bound: &Bound,
    g: &mut Graph,
    series: &Series,
    starts: &[usize],
    horizon: usize,
    mode: SchedulingMode,
    simulate: bool,
) -> Result<Vec<(StepNodes, NodeId)>> {
    let lag = net.lag();
    if starts.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for &t in starts {
        check_span(series, lag, t, horizon)?;
    }
    if mode == SchedulingMode::Oracle {
        check_oracle(net, series)?;
    }
    let w0 = g.constant(series.windows(starts, 0, lag));
    let mut x = net.encoder.mlp.forward_graph(g, &bound.enc, w0)?;
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let u = g.constant(series.u_rows(starts, k));
        let y = g.constant(series.y_rows(starts, k));
        let source = match mode {
            SchedulingMode::SelfScheduled => SchedSource::State(x),
            SchedulingMode::External => {
                let w = g.constant(series.windows(starts, k, lag));
                SchedSource::State(net.encoder.mlp.forward_graph(g, &bound.enc, w)?)
            }
            SchedulingMode::Oracle => SchedSource::Given(g.constant(series.p_rows(starts, k)?)),
        };
        let yin = if simulate { None } else { Some(y) };
        let s = step_graph(net, bound, g, x, u, yin, source, k)?;
        x = s.x_next;
        out.push((s, y));
    }
    Ok(out)
}

/// Flat outputs of a sequential run, in model units.
#[derive(Debug, Clone, Default)]
pub(crate) struct SeqOut {
    pub y_hat: Vec<f64>,
    pub states: Vec<f64>,
    pub sched: Vec<f64>,
}

/// Walks one trajectory of `len` steps from `start`. The initial state is
/// `x0` if given, otherwise the encoder estimate at `start`.
pub(crate) fn run_sequence(
    net: &LpvSubnet,
    series: &Series,
    mode: SchedulingMode,
    start: usize,
    len: usize,
    x0: Option<&[f64]>,
    simulate: bool,
) -> Result<SeqOut> {
    let lag = net.lag();
    let n_x = net.model.n_x;
    if start + len > series.len {
        return Err(Error::InvalidArgument(format!(
            "trajectory [{start}, {}) exceeds {} samples",
            start + len,
            series.len
        )));
    }
    if (x0.is_none() || mode == SchedulingMode::External) && start < lag {
        return Err(Error::InvalidArgument(format!(
            "start {start} leaves no complete lag window of {lag}"
        )));
    }
    if mode == SchedulingMode::Oracle {
        check_oracle(net, series)?;
    }
    let mut g = Graph::new();
    let bound = Bound::bind(net, &mut g);
    let mark = g.len();
    let anchor = [start];
    let mut state = match x0 {
        Some(x) => {
            if x.len() != n_x {
                return Err(Error::dim("initial state", n_x, x.len()));
            }
            x.to_vec()
        }
        None => {
            let w = g.constant(series.windows(&anchor, 0, lag));
            let x = net.encoder.mlp.forward_graph(&mut g, &bound.enc, w)?;
            g.value(x).as_slice().to_vec()
        }
    };
    let mut out = SeqOut {
        y_hat: Vec::with_capacity(len * series.n_y),
        states: Vec::with_capacity(len * n_x),
        sched: Vec::with_capacity(len * net.model.n_p()),
    };
    for k in 0..len {
        g.truncate(mark);
        let x = g.constant(Tensor::row(&state));
        let u = g.constant(series.u_rows(&anchor, k));
        let y = (!simulate).then(|| g.constant(series.y_rows(&anchor, k)));
        let source = match mode {
            SchedulingMode::SelfScheduled => SchedSource::State(x),
            SchedulingMode::External => {
                let w = g.constant(series.windows(&anchor, k, lag));
                SchedSource::State(net.encoder.mlp.forward_graph(&mut g, &bound.enc, w)?)
            }
            SchedulingMode::Oracle => SchedSource::Given(g.constant(series.p_rows(&anchor, k)?)),
        };
        let s = step_graph(net, &bound, &mut g, x, u, y, source, k)?;
        out.states.extend_from_slice(&state);
        out.y_hat.extend_from_slice(g.value(s.y_hat).as_slice());
        if let Some(p) = s.p_hat {
            out.sched.extend_from_slice(g.value(p).as_slice());
        }
        state = g.value(s.x_next).as_slice().to_vec();
    }
    Ok(out)
}

/// Result of a single predictor step, in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorStepResult {
    pub x_next: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub innovation: Vec<f64>,
    pub p_hat: Vec<f64>,
}

/// Output of a rollout or simulation starting at sample `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: usize,
    /// Predicted outputs in data units.
    pub y_hat: Vec<Vec<f64>>,
    /// Model states (model units) at each step before the update.
    pub states: Vec<Vec<f64>>,
    /// Scheduling used at each step; empty rows when `n_p = 0`.
    pub sched: Vec<Vec<f64>>,
}

impl Trajectory {
    fn from_seq(net: &LpvSubnet, start: usize, len: usize, seq: SeqOut) -> Self {
        let m = &net.model;
        let y = m.norm.denormalize_y(&seq.y_hat);
        let rows = |v: &[f64], w: usize| -> Vec<Vec<f64>> {
            if w == 0 || v.is_empty() {
                vec![Vec::new(); len]
            } else {
                v.chunks(w).map(|c| c.to_vec()).collect()
            }
        };
        Trajectory {
            start,
            y_hat: rows(&y, m.n_y),
            states: rows(&seq.states, m.n_x),
            sched: rows(&seq.sched, m.n_p()),
        }
    }
}

impl LpvSubnet {
    fn single_step(&self, x: &[f64], u: &[f64], y: &[f64], p: Option<&[f64]>) -> Result<PredictorStepResult> {
        let m = &self.model;
        if x.len() != m.n_x || u.len() != m.n_u || y.len() != m.n_y {
            return Err(Error::dim(
                "predictor_step (x, u, y)",
                format!("({}, {}, {})", m.n_x, m.n_u, m.n_y),
                format!("({}, {}, {})", x.len(), u.len(), y.len()),
            ));
        }
        let mut g = Graph::new();
        let bound = Bound::bind(self, &mut g);
        let xn = g.constant(Tensor::row(x));
        let un = g.constant(Tensor::row(u));
        let yn = g.constant(Tensor::row(y));
        let source = match p {
            Some(p) => {
                if p.len() != m.n_p() {
                    return Err(Error::dim("scheduling", m.n_p(), p.len()));
                }
                SchedSource::Given(g.constant(Tensor::row(p)))
            }
            None => SchedSource::State(xn),
        };
        let s = step_graph(self, &bound, &mut g, xn, un, Some(yn), source, 0)?;
        let y_hat = g.value(s.y_hat).as_slice().to_vec();
        Ok(PredictorStepResult {
            x_next: g.value(s.x_next).as_slice().to_vec(),
            innovation: y.iter().zip(&y_hat).map(|(a, b)| a - b).collect(),
            y_hat,
            p_hat: s.p_hat.map(|p| g.value(p).as_slice().to_vec()).unwrap_or_default(),
        })
    }

    /// One self-scheduled predictor step in model units.
    pub fn predictor_step(&self, x: &[f64], u: &[f64], y: &[f64]) -> Result<PredictorStepResult> {
        self.single_step(x, u, y, None)
    }

    /// One predictor step with a supplied scheduling vector.
    pub fn predictor_step_scheduled(
        &self,
        x: &[f64],
        u: &[f64],
        y: &[f64],
        p: &[f64],
    ) -> Result<PredictorStepResult> {
        self.single_step(x, u, y, Some(p))
    }

    /// Encoder state estimate for the window ending at `anchor`.
    pub fn encode_at(&self, data: &DataSet, anchor: usize) -> Result<Vec<f64>> {
        let series = Series::new(self, data)?;
        let window = crate::encoder::LagWindow::from_signals(
            &series.u,
            series.n_u,
            &series.y,
            series.n_y,
            anchor,
            self.lag(),
        )?;
        self.encoder.encode(&window)
    }

    /// Encoder-initialized `horizon`-step prediction starting at `start`,
    /// driven by the measured outputs through the innovation.
    pub fn rollout(
        &self,
        data: &DataSet,
        mode: SchedulingMode,
        start: usize,
        horizon: usize,
    ) -> Result<Trajectory> {
        let series = Series::new(self, data)?;
        check_span(&series, self.lag(), start, horizon)?;
        let seq = run_sequence(self, &series, mode, start, horizon, None, false)?;
        Ok(Trajectory::from_seq(self, start, horizon, seq))
    }

    /// Free-run response from `start` to the end of `data` with zero
    /// innovation. `x0` defaults to the encoder estimate at `start`.
    /// Measured outputs are read only by the encoder.
    pub fn simulate(
        &self,
        data: &DataSet,
        mode: SchedulingMode,
        start: usize,
        x0: Option<&[f64]>,
    ) -> Result<Trajectory> {
        let series = Series::new(self, data)?;
        if start >= series.len {
            return Err(Error::InvalidArgument(format!(
                "simulation start {start} beyond {} samples",
                series.len
            )));
        }
        let len = series.len - start;
        let seq = run_sequence(self, &series, mode, start, len, x0, true)?;
        Ok(Trajectory::from_seq(self, start, len, seq))
    }
}
