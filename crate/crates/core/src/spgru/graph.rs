//! The same forward pass recorded on a [`Tape`] for training.
//!
//! Operation order mirrors [`super::cell`] so both paths agree to rounding.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

use super::cell::{check_frames, targets};
use super::config::{CellVarianceRule, GateProductRule, LossKind, NetworkConfig, NetworkMode, StepRules};
use super::params::{CellParams, GateParams, NetworkParams, SpGruParams, Stochastic};

/// Moment pair on a tape. `zero_var` marks variances known to be exactly zero
/// so their terms can be skipped.
#[derive(Clone, Copy, Debug)]
pub struct MomentVar {
    pub m: Var,
    pub s: Var,
    pub zero_var: bool,
}

#[derive(Clone, Copy, Debug)]
struct StochVar {
    mean: Var,
    var: Var,
    mean_sq: Var,
}

#[derive(Clone, Copy, Debug)]
struct GateVars {
    input: StochVar,
    recurrent: StochVar,
    bias: StochVar,
}

#[derive(Clone, Copy, Debug)]
struct CellVars {
    reset: GateVars,
    update: GateVars,
    candidate: GateVars,
}

#[derive(Clone, Copy, Debug)]
struct HeadVars {
    cell: CellVars,
    out_weight: StochVar,
    out_bias: StochVar,
}

/// Parameters registered on a tape. `leaves` follows
/// [`NetworkParams::named`] order.
#[derive(Debug)]
pub struct NetworkVars {
    encoder: CellVars,
    autoencoder: Option<HeadVars>,
    predictor: Option<HeadVars>,
    pub leaves: Vec<Var>,
}

struct Binder<'t, 'l> {
    tape: &'t mut Tape,
    leaves: std::slice::Iter<'l, Var>,
}

impl Binder<'_, '_> {
    fn next(&mut self, like: &Tensor) -> Result<Var> {
        let v = *self
            .leaves
            .next()
            .ok_or_else(|| crate::Error::Config("too few parameter leaves".into()))?;
        if self.tape.value(v).shape() != like.shape() {
            return crate::error::shape_err(
                "bind",
                format!("leaf {:?} for parameter {:?}", self.tape.value(v).shape(), like.shape()),
            );
        }
        Ok(v)
    }

    fn stochastic(&mut self, p: &Stochastic) -> Result<StochVar> {
        let mean = self.next(&p.mean)?;
        let rho = self.next(&p.rho)?;
        let var = self.tape.softplus(rho)?;
        let mean_sq = self.tape.square(mean)?;
        Ok(StochVar { mean, var, mean_sq })
    }

    fn gate(&mut self, g: &GateParams) -> Result<GateVars> {
        Ok(GateVars {
            input: self.stochastic(&g.input)?,
            recurrent: self.stochastic(&g.recurrent)?,
            bias: self.stochastic(&g.bias)?,
        })
    }

    fn cell(&mut self, c: &CellParams) -> Result<CellVars> {
        Ok(CellVars {
            reset: self.gate(&c.reset)?,
            update: self.gate(&c.update)?,
            candidate: self.gate(&c.candidate)?,
        })
    }

    fn head(&mut self, h: &SpGruParams) -> Result<HeadVars> {
        Ok(HeadVars {
            cell: self.cell(&h.cell)?,
            out_weight: self.stochastic(&h.out_weight)?,
            out_bias: self.stochastic(&h.out_bias)?,
        })
    }
}

/// Adds every parameter of `net` to the tape as a trainable leaf.
pub fn register(tape: &mut Tape, net: &NetworkParams) -> Result<NetworkVars> {
    let leaves: Vec<Var> = net
        .named()
        .into_iter()
        .map(|(_, t)| tape.param(t.clone()))
        .collect();
    bind(tape, net, &leaves)
}

/// Uses existing leaves, in [`NetworkParams::named`] order, as the
/// parameters of a network shaped like `net`.
pub fn bind(tape: &mut Tape, net: &NetworkParams, leaves: &[Var]) -> Result<NetworkVars> {
    let mut b = Binder {
        tape,
        leaves: leaves.iter(),
    };
    let encoder = b.cell(&net.encoder)?;
    let autoencoder = net.autoencoder.as_ref().map(|h| b.head(h)).transpose()?;
    let predictor = net.predictor.as_ref().map(|h| b.head(h)).transpose()?;
    if b.leaves.next().is_some() {
        return Err(crate::Error::Config("too many parameter leaves".into()));
    }
    Ok(NetworkVars {
        encoder,
        autoencoder,
        predictor,
        leaves: leaves.to_vec(),
    })
}

fn lmm(tape: &mut Tape, a: MomentVar, w: &StochVar, b: Option<&StochVar>) -> Result<MomentVar> {
    let mut m = tape.matmul_bt(a.m, w.mean)?;
    if let Some(b) = b {
        m = tape.add_row(m, b.mean)?;
    }
    let m_sq = tape.square(a.m)?;
    let second = if a.zero_var { m_sq } else { tape.add(a.s, m_sq)? };
    let mut s = tape.matmul_bt(second, w.var)?;
    if !a.zero_var {
        let t = tape.matmul_bt(a.s, w.mean_sq)?;
        s = tape.add(s, t)?;
    }
    if let Some(b) = b {
        s = tape.add_row(s, b.var)?;
    }
    Ok(MomentVar { m, s, zero_var: false })
}

fn pre_activation(tape: &mut Tape, x: MomentVar, h: MomentVar, g: &GateVars) -> Result<MomentVar> {
    let o = lmm(tape, x, &g.input, Some(&g.bias))?;
    let rec = lmm(tape, h, &g.recurrent, None)?;
    Ok(MomentVar {
        m: tape.add(o.m, rec.m)?,
        s: tape.add(o.s, rec.s)?,
        zero_var: false,
    })
}

fn sigmoid(tape: &mut Tape, o: MomentVar, rules: &StepRules) -> Result<MomentVar> {
    Ok(MomentVar {
        m: tape.sigmoid_mean(o.m, o.s, &rules.nmm)?,
        s: tape.sigmoid_var(o.m, o.s, &rules.nmm)?,
        zero_var: false,
    })
}

fn gate_product(tape: &mut Tape, u: MomentVar, v: MomentVar, rule: GateProductRule) -> Result<MomentVar> {
    let m = tape.hadamard(u.m, v.m)?;
    let u_m_sq = tape.square(u.m)?;
    let s = match rule {
        GateProductRule::FullIndependent => {
            let v_m_sq = tape.square(v.m)?;
            let second = tape.add(v.s, v_m_sq)?;
            let t1 = tape.hadamard(u.s, second)?;
            let t2 = tape.hadamard(u_m_sq, v.s)?;
            tape.add(t1, t2)?
        }
        GateProductRule::PaperSimplified => tape.hadamard(u_m_sq, v.s)?,
    };
    Ok(MomentVar { m, s, zero_var: false })
}

fn cell_step(tape: &mut Tape, x: MomentVar, h: MomentVar, c: &CellVars, rules: &StepRules) -> Result<MomentVar> {
    let o_r = pre_activation(tape, x, h, &c.reset)?;
    let r = sigmoid(tape, o_r, rules)?;
    let o_z = pre_activation(tape, x, h, &c.update)?;
    let z = sigmoid(tape, o_z, rules)?;
    let gated = gate_product(tape, r, h, rules.gate_product)?;
    let o_c = pre_activation(tape, x, gated, &c.candidate)?;
    let cand = MomentVar {
        m: tape.tanh_mean(o_c.m, o_c.s, &rules.nmm)?,
        s: tape.tanh_var(o_c.m, o_c.s, &rules.nmm)?,
        zero_var: false,
    };

    let omz = tape.affine(z.m, -1.0, 1.0)?;
    let a = tape.hadamard(omz, cand.m)?;
    let b = tape.hadamard(z.m, h.m)?;
    let m = tape.add(a, b)?;

    let s = match rules.cell_variance {
        CellVarianceRule::Corrected => {
            let omz_sq = tape.square(omz)?;
            let z_sq = tape.square(z.m)?;
            let a = tape.hadamard(omz_sq, cand.s)?;
            let b = tape.hadamard(z_sq, h.s)?;
            let base = tape.add(a, b)?;
            match rules.gate_product {
                GateProductRule::PaperSimplified => base,
                GateProductRule::FullIndependent => {
                    let d = tape.sub(cand.m, h.m)?;
                    let d_sq = tape.square(d)?;
                    let sum = tape.add(cand.s, h.s)?;
                    let inner = tape.add(sum, d_sq)?;
                    let extra = tape.hadamard(z.s, inner)?;
                    tape.add(base, extra)?
                }
            }
        }
        CellVarianceRule::Table1Literal => {
            let omzs = tape.affine(z.s, -1.0, 1.0)?;
            let omzs_sq = tape.square(omzs)?;
            let zs_sq = tape.square(z.s)?;
            let a = tape.hadamard(omzs_sq, cand.m)?;
            let b = tape.hadamard(zs_sq, h.s)?;
            let raw = tape.add(a, b)?;
            tape.clamp(raw, 0.0, f64::INFINITY)?
        }
    };
    Ok(MomentVar { m, s, zero_var: false })
}

fn decode(tape: &mut Tape, start: MomentVar, head: &HeadVars, len: usize, rules: &StepRules) -> Result<Vec<MomentVar>> {
    let batch = tape.value(start.m).rows();
    let empty = tape.constant(Tensor::zeros(batch, 0));
    let x = MomentVar {
        m: empty,
        s: empty,
        zero_var: true,
    };
    let mut h = start;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        h = cell_step(tape, x, h, &head.cell, rules)?;
        let o = lmm(tape, h, &head.out_weight, Some(&head.out_bias))?;
        out.push(sigmoid(tape, o, rules)?);
    }
    Ok(out)
}

/// Recorded forward pass with its per-image per-frame loss.
#[derive(Debug)]
pub struct Recorded {
    pub vars: NetworkVars,
    pub reconstruction: Vec<MomentVar>,
    pub prediction: Vec<MomentVar>,
    pub loss: Var,
}

/// Records the full network and loss on `tape`.
pub fn record(tape: &mut Tape, frames: &[Tensor], cfg: &NetworkConfig, net: &NetworkParams) -> Result<Recorded> {
    let vars = register(tape, net)?;
    record_bound(tape, frames, cfg, net, vars)
}

/// [`record`] with parameters already bound, e.g. to gradient-check leaves.
pub fn record_bound(
    tape: &mut Tape,
    frames: &[Tensor],
    cfg: &NetworkConfig,
    net: &NetworkParams,
    vars: NetworkVars,
) -> Result<Recorded> {
    check_frames(frames, cfg, net.frame_dim())?;
    let rules = cfg.rules();
    let batch = frames[0].rows();

    let zeros = tape.constant(Tensor::zeros(batch, net.hidden()));
    let mut h = MomentVar {
        m: zeros,
        s: zeros,
        zero_var: true,
    };
    for f in &frames[..cfg.input_len] {
        let xm = tape.constant(f.clone());
        let x = MomentVar {
            m: xm,
            s: xm,
            zero_var: true,
        };
        h = cell_step(tape, x, h, &vars.encoder, &rules)?;
    }

    let want_recon = matches!(cfg.mode, NetworkMode::Autoencoder | NetworkMode::Composite);
    let want_pred = matches!(cfg.mode, NetworkMode::Predictor | NetworkMode::Composite);
    let reconstruction = match (&vars.autoencoder, want_recon) {
        (Some(head), true) => decode(tape, h, head, cfg.input_len, &rules)?,
        _ => Vec::new(),
    };
    let prediction = match (&vars.predictor, want_pred) {
        (Some(head), true) => decode(tape, h, head, cfg.output_len, &rules)?,
        _ => Vec::new(),
    };

    let (recon_t, pred_t) = targets(frames, cfg);
    let mut terms = Vec::new();
    for (y, t) in reconstruction.iter().zip(&recon_t).chain(prediction.iter().zip(&pred_t)) {
        terms.push(match cfg.loss {
            LossKind::BceMean => tape.bce_sum(y.m, t)?,
            LossKind::GaussianNll => tape.gaussian_nll_sum(y.m, y.s, t)?,
        });
    }
    if terms.is_empty() {
        return Err(crate::Error::Config(format!(
            "mode {:?} has no head in this network",
            cfg.mode
        )));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let loss = tape.scale(total, 1.0 / (batch * terms.len()) as f64)?;
    Ok(Recorded {
        vars,
        reconstruction,
        prediction,
        loss,
    })
}

/// Loss and gradients aligned with [`NetworkParams::named`].
pub fn loss_and_grad(frames: &[Tensor], cfg: &NetworkConfig, net: &NetworkParams) -> Result<(f64, Vec<Tensor>, usize)> {
    let mut tape = Tape::new();
    let rec = record(&mut tape, frames, cfg, net)?;
    let grads = tape.backward(rec.loss)?;
    let out = rec
        .vars
        .leaves
        .iter()
        .map(|&v| grads.get_or_zeros(v, tape.value(v)))
        .collect();
    Ok((tape.value(rec.loss).item(), out, tape.clamp_count()))
}
