//! Ordinary point-weight GRU, used as an oracle and as the benchmark baseline.

use crate::error::{shape_err, Result};
use crate::moments::sigmoid;
use crate::tensor::Tensor;

use super::params::CellParams;

#[derive(Clone, Debug, PartialEq)]
pub struct GruGate {
    pub input: Tensor,
    pub recurrent: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub reset: GruGate,
    pub update: GruGate,
    pub candidate: GruGate,
}

impl Gru {
    /// Point GRU using the weight means of `p`.
    pub fn from_means(p: &CellParams) -> Self {
        let gate = |g: &super::params::GateParams| GruGate {
            input: g.input.mean.clone(),
            recurrent: g.recurrent.mean.clone(),
            bias: g.bias.mean.clone(),
        };
        Self {
            reset: gate(&p.reset),
            update: gate(&p.update),
            candidate: gate(&p.candidate),
        }
    }

    pub fn hidden(&self) -> usize {
        self.reset.recurrent.rows()
    }

    /// `r = σ(Ux + Wh + b)`, `z` likewise, `ĉ = tanh(U x + W(r ⊙ h) + b)`,
    /// `h' = (1 − z) ⊙ ĉ + z ⊙ h`, for `batch x input` and `batch x hidden`.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        if h.cols() != self.hidden() || x.rows() != h.rows() {
            return shape_err(
                "Gru::step",
                format!("input {:?}, state {:?}", x.shape(), h.shape()),
            );
        }
        let affine = |g: &GruGate, x: &Tensor, h: &Tensor| -> Result<Tensor> {
            let mut o = x.matmul_bt(&g.input)?;
            o.add_row_assign(&g.bias)?;
            o.add_assign(&h.matmul_bt(&g.recurrent)?)?;
            Ok(o)
        };
        let r = affine(&self.reset, x, h)?.map(sigmoid);
        let z = affine(&self.update, x, h)?.map(sigmoid);
        let rh = r.zip_map(h, |a, b| a * b)?;
        let c = affine(&self.candidate, x, &rh)?.map(f64::tanh);
        let mut out = Tensor::zeros(h.rows(), h.cols());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let zi = z.data()[i];
            *o = (1.0 - zi) * c.data()[i] + zi * h.data()[i];
        }
        Ok(out)
    }
}
