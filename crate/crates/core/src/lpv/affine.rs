use serde::{Deserialize, Serialize};

use crate::diffnet::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// `M(p) = M_0 + sum_i M_i p_i`, all matrices of one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrixFunction {
    base: Tensor,
    coeffs: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub(crate) struct AffineNodes {
    base: NodeId,
    coeffs: Vec<NodeId>,
}

impl AffineNodes {
    pub(crate) fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.base).chain(self.coeffs.iter().copied())
    }
}

impl AffineMatrixFunction {
    pub fn new(base: Tensor, coeffs: Vec<Tensor>) -> Result<Self> {
        for c in &coeffs {
            if c.shape() != base.shape() {
                return Err(Error::dim(
                    "affine coefficient",
                    format!("{:?}", base.shape()),
                    format!("{:?}", c.shape()),
                ));
            }
        }
        Ok(AffineMatrixFunction { base, coeffs })
    }

    pub fn zeros(rows: usize, cols: usize, n_p: usize) -> Self {
        AffineMatrixFunction {
            base: Tensor::zeros(rows, cols),
            coeffs: vec![Tensor::zeros(rows, cols); n_p],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.base.shape()
    }

    pub fn n_p(&self) -> usize {
        self.coeffs.len()
    }

    pub fn base(&self) -> &Tensor {
        &self.base
    }

    pub fn base_mut(&mut self) -> &mut Tensor {
        &mut self.base
    }

    pub fn coeffs(&self) -> &[Tensor] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Tensor] {
        &mut self.coeffs
    }

    pub fn eval(&self, p: &[f64]) -> Result<Tensor> {
        if p.len() != self.coeffs.len() {
            return Err(Error::dim("affine_eval scheduling", self.coeffs.len(), p.len()));
        }
        let mut out = self.base.clone();
        for (m, pi) in self.coeffs.iter().zip(p) {
            out.add_scaled(m, *pi);
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.params().iter().all(|t| t.max_abs() == 0.0)
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        std::iter::once(&self.base).chain(&self.coeffs).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.base).chain(self.coeffs.iter_mut()).collect()
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> AffineNodes {
        AffineNodes {
            base: g.param(self.base.clone()),
            coeffs: self.coeffs.iter().map(|c| g.param(c.clone())).collect(),
        }
    }

    /// Applies `M(p_b)` to every row `x_b` of `x`; `p` holds one scheduling
    /// vector per row and may be absent only when there are no coefficients.
    pub(crate) fn apply_graph(
        nodes: &AffineNodes,
        g: &mut Graph,
        x: NodeId,
        p: Option<NodeId>,
    ) -> Result<NodeId> {
        let mut out = g.matmul_t(x, nodes.base)?;
        if nodes.coeffs.is_empty() {
            return Ok(out);
        }
        let p = p.ok_or_else(|| Error::InvalidArgument("missing scheduling signal".into()))?;
        for (i, m) in nodes.coeffs.iter().enumerate() {
            let term = g.matmul_t(x, *m)?;
            let pi = g.slice_cols(p, i, 1)?;
            let weighted = g.mul_col(term, pi)?;
            out = g.add(out, weighted)?;
        }
        Ok(out)
    }
}
