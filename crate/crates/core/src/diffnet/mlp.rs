use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, uniform, SeededRng};

/// Feed-forward network with tanh hidden layers, an affine output layer and
/// an optional linear bypass from input to output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    /// Layer `i` maps width `i` to width `i + 1`; stored as out x in.
    weights: Vec<Tensor>,
    /// `1 x out` rows.
    biases: Vec<Tensor>,
    bypass: Option<Tensor>,
}

/// Tape handles for the parameters of one [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpNodes {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    bypass: Option<NodeId>,
}

impl MlpNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            ids.push(*w);
            ids.push(*b);
        }
        ids.extend(self.bypass);
        ids
    }
}

fn glorot(rng: &mut SeededRng, fan_out: usize, fan_in: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_out, fan_in, |_, _| uniform(rng, -limit, limit))
}

impl Mlp {
    /// Glorot-uniform weights, zero biases and a zero bypass.
    pub fn init(widths: &[usize], bypass: bool, seed: u64) -> Result<Self> {
        Self::init_with(widths, bypass, &mut seeded(seed))
    }

    pub fn init_with(widths: &[usize], bypass: bool, rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero layer width in {widths:?}")));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            weights.push(glorot(rng, pair[1], pair[0]));
            biases.push(Tensor::zeros(1, pair[1]));
        }
        let d_in = widths[0];
        let d_out = *widths.last().expect("len >= 2");
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            bypass: bypass.then(|| Tensor::zeros(d_out, d_in)),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated at construction")
    }

    pub fn has_bypass(&self) -> bool {
        self.bypass.is_some()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn bypass(&self) -> Option<&Tensor> {
        self.bypass.as_ref()
    }

    /// Parameters in canonical order: `(W_1, b_1, .., W_L, b_L, bypass)`.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.bypass.as_ref());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.bypass.as_mut());
        out
    }

    pub fn bind(&self, g: &mut Graph) -> MlpNodes {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(g.param(w.clone()));
            biases.push(g.param(b.clone()));
        }
        let bypass = self.bypass.as_ref().map(|m| g.param(m.clone()));
        MlpNodes {
            weights,
            biases,
            bypass,
        }
    }

    /// Batched forward pass; `input` holds one sample per row.
    pub fn forward_graph(&self, g: &mut Graph, nodes: &MlpNodes, input: NodeId) -> Result<NodeId> {
        let cols = g.value(input).cols();
        if cols != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), cols));
        }
        let last = nodes.weights.len() - 1;
        let mut z = input;
        for (i, (w, b)) in nodes.weights.iter().zip(&nodes.biases).enumerate() {
            let lin = g.matmul_t(z, *w)?;
            let pre = g.add_row(lin, *b)?;
            z = if i == last { pre } else { g.tanh(pre) };
        }
        if let Some(bp) = nodes.bypass {
            let lin = g.matmul_t(input, bp)?;
            z = g.add(z, lin)?;
        }
        Ok(z)
    }

    pub fn forward(&self, z0: &[f64]) -> Result<Vec<f64>> {
        if z0.len() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), z0.len()));
        }
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let x = g.constant(Tensor::row(z0));
        let out = self.forward_graph(&mut g, &nodes, x)?;
        Ok(g.value(out).as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::init(&[3, 64, 64, 2], true, 1).unwrap();
        let b = Mlp::init(&[3, 64, 64, 2], true, 1).unwrap();
        assert_eq!(a, b);
        let c = Mlp::init(&[3, 64, 64, 2], true, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(Mlp::init(&[3, 0, 2], false, 1).is_err());
        assert!(Mlp::init(&[3], false, 1).is_err());
    }

    #[test]
    fn fresh_net_at_origin_returns_output_bias() {
        let mut net = Mlp::init(&[3, 8, 2], true, 4).unwrap();
        net.biases[1] = Tensor::row(&[0.25, -1.5]);
        assert_eq!(net.forward(&[0.0; 3]).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut net = Mlp::init(&[2, 4, 1], true, 9).unwrap();
        for p in net.params_mut() {
            p.as_mut_slice().fill(0.0);
        }
        net.biases[1] = Tensor::row(&[0.7]);
        assert_eq!(net.forward(&[3.0, -2.0]).unwrap(), vec![0.7]);
    }

    #[test]
    fn one_one_one_net() {
        let mut net = Mlp::init(&[1, 1, 1], false, 0).unwrap();
        net.weights[0] = Tensor::scalar(1.0);
        net.weights[1] = Tensor::scalar(1.0);
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn no_hidden_layer_is_affine() {
        let mut net = Mlp::init(&[1, 1], false, 0).unwrap();
        net.weights[0] = Tensor::scalar(2.0);
        net.biases[0] = Tensor::row(&[1.0]);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
        assert_eq!(net.forward(&[-1.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn wrong_input_dim() {
        let net = Mlp::init(&[3, 4, 1], false, 0).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }
}
