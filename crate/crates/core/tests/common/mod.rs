//! Plain-loop reference implementation of the predictor used as a test
//! oracle. It shares no code with the tape-based rollouts.
#![allow(dead_code)]

use lpv_subnet::benchmark::{DataSet, LtiSystem, NonlinearSystem};
use lpv_subnet::diffnet::{Mlp, Tensor};
use lpv_subnet::lpv::{AffineMatrixFunction, LpvSubnet, ModelConfig, NoiseStructure, Normalization, SchedulingMode};
use lpv_subnet::rng::{seeded, uniform, BoxMuller};

pub fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j) * x[j]).sum())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mlp(net: &Mlp, z: &[f64]) -> Vec<f64> {
    let layers = net.weights().len();
    let mut h = z.to_vec();
    for (l, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        let mut next: Vec<f64> = matvec(w, &h).iter().zip(b.as_slice()).map(|(a, c)| a + c).collect();
        if l + 1 < layers {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = next;
    }
    if let Some(by) = net.bypass() {
        h = add(&h, &matvec(by, z));
    }
    h
}

pub fn affine(f: &AffineMatrixFunction, p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = matvec(f.base(), x);
    for (pi, mi) in p.iter().zip(f.coeffs()) {
        out = add(&out, &matvec(mi, x).iter().map(|v| v * pi).collect::<Vec<_>>());
    }
    out
}

/// Normalized signals as rows.
pub struct Rows {
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub p: Option<Vec<Vec<f64>>>,
}

pub fn rows(net: &LpvSubnet, ds: &DataSet) -> Rows {
    let n = &net.model.norm;
    let split = |v: Vec<f64>, w: usize| v.chunks(w).map(|c| c.to_vec()).collect::<Vec<_>>();
    Rows {
        u: split(n.normalize_u(ds.u()), ds.n_u()),
        y: split(n.normalize_y(ds.y()), ds.n_y()),
        p: ds.p().map(|p| split(p.to_vec(), ds.n_p())),
    }
}

pub fn encode(net: &LpvSubnet, r: &Rows, anchor: usize) -> Vec<f64> {
    let lag = net.lag();
    let mut z = Vec::new();
    for t in anchor - lag..=anchor {
        z.extend_from_slice(&r.u[t]);
    }
    for t in anchor - lag..=anchor {
        z.extend_from_slice(&r.y[t]);
    }
    mlp(&net.encoder.mlp, &z)
}

/// One predictor step; returns (x_next, y_hat).
pub fn step(net: &LpvSubnet, r: &Rows, t: usize, x: &[f64], s: &[f64], simulate: bool) -> (Vec<f64>, Vec<f64>) {
    let m = &net.model;
    let innovation = m.noise == NoiseStructure::Innovation;
    let u = &r.u[t];
    let xu: Vec<f64> = s.iter().chain(u).copied().collect();
    let oracle = net.mode == SchedulingMode::Oracle;
    let py = if oracle {
        r.p.as_ref().unwrap()[t][m.n_px..].to_vec()
    } else {
        net.sched.phi_y.as_ref().map(|f| mlp(f, &xu)).unwrap_or_default()
    };
    let y_hat = add(&affine(&m.c, &py, x), &affine(&m.d, &py, u));
    let y_used = if simulate { y_hat.clone() } else { r.y[t].clone() };
    let px = if oracle {
        r.p.as_ref().unwrap()[t][..m.n_px].to_vec()
    } else {
        let z: Vec<f64> = if innovation {
            xu.iter().chain(&y_used).copied().collect()
        } else {
            xu.clone()
        };
        net.sched.phi_x.as_ref().map(|f| mlp(f, &z)).unwrap_or_default()
    };
    let mut x_next = add(&affine(&m.a, &px, x), &affine(&m.b, &px, u));
    if innovation && !simulate {
        let e: Vec<f64> = r.y[t].iter().zip(&y_hat).map(|(a, b)| a - b).collect();
        x_next = add(&x_next, &affine(&m.k, &px, &e));
    }
    (x_next, y_hat)
}

/// Outputs of the subsection starting at `start` over `horizon` steps.
pub fn subsection(net: &LpvSubnet, r: &Rows, start: usize, horizon: usize, simulate: bool) -> Vec<Vec<f64>> {
    let mut x = encode(net, r, start);
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let t = start + k;
        let s = match net.mode {
            SchedulingMode::External => encode(net, r, t),
            _ => x.clone(),
        };
        let (xn, yh) = step(net, r, t, &x, &s, simulate);
        out.push(yh);
        x = xn;
    }
    out
}

pub fn subsection_sse(net: &LpvSubnet, r: &Rows, start: usize, horizon: usize) -> f64 {
    subsection(net, r, start, horizon, false)
        .iter()
        .enumerate()
        .map(|(k, yh)| yh.iter().zip(&r.y[start + k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum()
}

/// Brute-force mean over every admissible subsection.
pub fn truncated_loss(net: &LpvSubnet, ds: &DataSet, horizon: usize) -> f64 {
    let r = rows(net, ds);
    let starts: Vec<usize> = (net.lag()..=ds.len() - horizon).collect();
    starts.iter().map(|&t| subsection_sse(net, &r, t, horizon)).sum::<f64>() / (starts.len() * horizon) as f64
}

pub fn batch_loss(net: &LpvSubnet, ds: &DataSet, starts: &[usize], horizon: usize) -> f64 {
    let r = rows(net, ds);
    starts.iter().map(|&t| subsection_sse(net, &r, t, horizon)).sum::<f64>() / (starts.len() * horizon) as f64
}

/// Random data set of `len` samples with Gaussian signals and optional
/// scheduling columns.
pub fn random_data(len: usize, n_u: usize, n_y: usize, n_p: usize, seed: u64) -> DataSet {
    let mut rng = seeded(seed);
    let mut g = BoxMuller::new();
    let mut draw = |n: usize| (0..n).map(|_| g.sample(&mut rng)).collect::<Vec<f64>>();
    let u = draw(len * n_u);
    let y = draw(len * n_y);
    let p = (n_p > 0).then(|| (n_p, draw(len * n_p)));
    DataSet::with_scheduling(n_u, u, n_y, y, p).unwrap()
}

/// Small randomly initialized network whose scheduling-dependent terms are
/// perturbed away from zero so that every parameter affects the loss.
pub fn random_net(cfg: &ModelConfig, ds: &DataSet, seed: u64) -> LpvSubnet {
    let mut cfg = cfg.clone();
    cfg.n_u = ds.n_u();
    cfg.n_y = ds.n_y();
    let mut net = LpvSubnet::init(&cfg, ds.compute_stats(), seed).unwrap();
    let mut rng = seeded(seed ^ 0x5eed);
    let m = &mut net.model;
    let scale = 0.3 / (m.n_x as f64).max(1.0);
    let mut fill = |t: &mut Tensor| {
        for v in t.as_mut_slice() {
            *v = uniform(&mut rng, -scale, scale);
        }
    };
    for f in [&mut m.a, &mut m.b, &mut m.c, &mut m.d] {
        f.coeffs_mut().iter_mut().for_each(&mut fill);
    }
    fill(m.d.base_mut());
    if m.noise == NoiseStructure::Innovation {
        fill(m.k.base_mut());
        m.k.coeffs_mut().iter_mut().for_each(&mut fill);
    }
    for mlp in [net.sched.phi_x.as_mut(), net.sched.phi_y.as_mut(), Some(&mut net.encoder.mlp)]
        .into_iter()
        .flatten()
    {
        for t in mlp.params_mut() {
            for v in t.as_mut_slice() {
                *v += uniform(&mut rng, -0.2, 0.2);
            }
        }
    }
    net
}

pub fn small_config(n_x: usize, n_p: usize, lag: usize, width: usize, noise: NoiseStructure, mode: SchedulingMode) -> ModelConfig {
    let mut cfg = ModelConfig::new(n_x, n_p);
    cfg.lag = Some(lag);
    cfg.encoder_hidden = vec![width];
    cfg.pnet_hidden = vec![width, width];
    cfg.noise = noise;
    cfg.mode = mode;
    cfg
}

/// Network whose state-space part equals `sys` in model units, with zero
/// scheduling dimension.
pub fn lti_net(sys: &LtiSystem, lag: usize) -> LpvSubnet {
    let mut cfg = ModelConfig::new(sys.n_x(), 0);
    cfg.n_u = sys.n_u();
    cfg.n_y = sys.n_y();
    cfg.lag = Some(lag);
    cfg.encoder_hidden = vec![4];
    let mut net = LpvSubnet::init(&cfg, Normalization::identity(sys.n_u(), sys.n_y()), 0).unwrap();
    *net.model.a.base_mut() = sys.a.clone();
    *net.model.b.base_mut() = sys.b.clone();
    *net.model.c.base_mut() = sys.c.clone();
    *net.model.d.base_mut() = sys.d.clone();
    net
}

/// Central finite-difference gradient of the batch loss, aligned with
/// [`LpvSubnet::params`].
pub fn fd_gradient(net: &LpvSubnet, ds: &DataSet, starts: &[usize], horizon: usize, h: f64) -> Vec<Vec<f64>> {
    let mut probe = net.clone();
    let shapes: Vec<usize> = net.params().iter().map(|t| t.as_slice().len()).collect();
    let mut out = Vec::new();
    for (pi, &n) in shapes.iter().enumerate() {
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.params()[pi].as_slice()[i];
            probe.params_mut()[pi].as_mut_slice()[i] = orig + h;
            let up = batch_loss(&probe, ds, starts, horizon);
            probe.params_mut()[pi].as_mut_slice()[i] = orig - h;
            let down = batch_loss(&probe, ds, starts, horizon);
            probe.params_mut()[pi].as_mut_slice()[i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Relative error `|a - f| / max(|a|, |f|, floor)` maximized over entries,
/// with the floor set relative to the largest gradient entry.
pub fn max_relative_error(analytic: &[Tensor], fd: &[Vec<f64>]) -> f64 {
    let scale = fd.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale;
    analytic
        .iter()
        .zip(fd)
        .flat_map(|(a, f)| a.as_slice().iter().zip(f))
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor).max(1e-300))
        .fold(0.0, f64::max)
}
