//! Tape-free forward pass, used for evaluation and the oracles.

use crate::error::{shape_err, Result};
use crate::expfam::MomentTensor;
use crate::moments::{lmm, nmm_sigmoid_gauss_counted, nmm_tanh_gauss_counted, ClampStats};
use crate::tensor::Tensor;

use super::config::{CellVarianceRule, GateProductRule, NetworkConfig, NetworkMode, StepRules};
use super::params::{ResolvedCell, ResolvedGate, ResolvedHead, ResolvedNetwork};

/// Hidden state moments, `batch x hidden`.
pub type CellState = MomentTensor;

fn pre_activation(x: &MomentTensor, h: &MomentTensor, g: &ResolvedGate) -> Result<MomentTensor> {
    let mut o = lmm(x, &g.input)?;
    let rec = lmm(h, &g.recurrent)?;
    o.m.add_assign(&rec.m)?;
    o.s.add_assign(&rec.s)?;
    Ok(o)
}

/// Moments of `u ⊙ v` for independent factors.
pub fn gate_product(u: &MomentTensor, v: &MomentTensor, rule: GateProductRule) -> Result<MomentTensor> {
    let m = u.m.zip_map(&v.m, |a, b| a * b)?;
    let s = match rule {
        GateProductRule::FullIndependent => {
            let second = v.s.zip_map(&v.m, |s, m| s + m * m)?;
            let t1 = u.s.zip_map(&second, |a, b| a * b)?;
            let t2 = u.m.zip_map(&v.s, |m, s| (m * m) * s)?;
            t1.zip_map(&t2, |a, b| a + b)?
        }
        GateProductRule::PaperSimplified => u.m.zip_map(&v.s, |m, s| (m * m) * s)?,
    };
    Ok(MomentTensor { m, s })
}

/// One SP-GRU step for a `batch x input` input.
pub fn cell_step(
    x: &MomentTensor,
    prev: &CellState,
    cell: &ResolvedCell,
    rules: &StepRules,
    stats: &mut ClampStats,
) -> Result<CellState> {
    if prev.m.cols() != cell.hidden() || x.m.rows() != prev.m.rows() {
        return shape_err(
            "cell_step",
            format!(
                "input {:?}, state {:?} for hidden size {}",
                x.shape(),
                prev.shape(),
                cell.hidden()
            ),
        );
    }
    let k = &rules.nmm;
    let r = nmm_sigmoid_gauss_counted(&pre_activation(x, prev, &cell.reset)?, k, stats);
    let z = nmm_sigmoid_gauss_counted(&pre_activation(x, prev, &cell.update)?, k, stats);
    let gated = gate_product(&r, prev, rules.gate_product)?;
    let c = nmm_tanh_gauss_counted(&pre_activation(x, &gated, &cell.candidate)?, k, stats);
    combine(&z, &c, prev, rules)
}

fn combine(z: &MomentTensor, c: &MomentTensor, h: &MomentTensor, rules: &StepRules) -> Result<CellState> {
    let n = z.m.len();
    let (rows, cols) = z.shape();
    let mut m = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let (zm, zs) = (z.m.data()[i], z.s.data()[i]);
        let (cm, cs) = (c.m.data()[i], c.s.data()[i]);
        let (hm, hs) = (h.m.data()[i], h.s.data()[i]);
        let omz = -zm + 1.0;
        m.push(omz * cm + zm * hm);
        s.push(match rules.cell_variance {
            CellVarianceRule::Corrected => {
                let base = (omz * omz) * cs + (zm * zm) * hs;
                match rules.gate_product {
                    GateProductRule::PaperSimplified => base,
                    GateProductRule::FullIndependent => {
                        let d = cm - hm;
                        base + zs * ((cs + hs) + d * d)
                    }
                }
            }
            CellVarianceRule::Table1Literal => {
                let omzs = -zs + 1.0;
                let v = (omzs * omzs) * cm + (zs * zs) * hs;
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
        });
    }
    Ok(MomentTensor {
        m: Tensor::from_vec(rows, cols, m)?,
        s: Tensor::from_vec(rows, cols, s)?,
    })
}

/// Output layer: moment-matched affine map followed by a sigmoid.
pub fn emit(h: &CellState, head: &ResolvedHead, rules: &StepRules, stats: &mut ClampStats) -> Result<MomentTensor> {
    Ok(nmm_sigmoid_gauss_counted(&lmm(h, &head.output)?, &rules.nmm, stats))
}

/// Runs the cell over deterministic frames and returns every state.
pub fn encode(
    frames: &[Tensor],
    cell: &ResolvedCell,
    rules: &StepRules,
    stats: &mut ClampStats,
) -> Result<Vec<CellState>> {
    let batch = frames.first().map_or(0, Tensor::rows);
    let mut h = MomentTensor::zeros(batch, cell.hidden());
    let mut states = Vec::with_capacity(frames.len());
    for x in frames {
        h = cell_step(&MomentTensor::deterministic(x.clone()), &h, cell, rules, stats)?;
        states.push(h.clone());
    }
    Ok(states)
}

/// Unrolls an input-free head from `start` for `len` steps.
pub fn decode(
    start: &CellState,
    head: &ResolvedHead,
    len: usize,
    rules: &StepRules,
    stats: &mut ClampStats,
) -> Result<Vec<MomentTensor>> {
    let empty = MomentTensor::zeros(start.m.rows(), 0);
    let mut h = start.clone();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        h = cell_step(&empty, &h, &head.cell, rules, stats)?;
        out.push(emit(&h, head, rules, stats)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnrollOutput {
    /// Reconstructions, first element targets the last observed frame.
    pub reconstruction: Option<Vec<MomentTensor>>,
    pub prediction: Option<Vec<MomentTensor>>,
    pub clamp: ClampStats,
}

/// Full network forward pass over time-major frames (`batch x pixels` each).
pub fn unroll(frames: &[Tensor], cfg: &NetworkConfig, net: &ResolvedNetwork) -> Result<UnrollOutput> {
    check_frames(frames, cfg, net.encoder.input())?;
    let rules = cfg.rules();
    let mut clamp = ClampStats::default();
    let states = encode(&frames[..cfg.input_len], &net.encoder, &rules, &mut clamp)?;
    let last = states.last().expect("input_len >= 1");
    let head = |h: &Option<ResolvedHead>, len: usize, clamp: &mut ClampStats| {
        h.as_ref().map(|h| decode(last, h, len, &rules, clamp)).transpose()
    };
    let reconstruction = match cfg.mode {
        NetworkMode::Autoencoder | NetworkMode::Composite => {
            head(&net.autoencoder, cfg.input_len, &mut clamp)?
        }
        NetworkMode::Predictor => None,
    };
    let prediction = match cfg.mode {
        NetworkMode::Predictor | NetworkMode::Composite => {
            head(&net.predictor, cfg.output_len, &mut clamp)?
        }
        NetworkMode::Autoencoder => None,
    };
    Ok(UnrollOutput {
        reconstruction,
        prediction,
        clamp,
    })
}

pub(crate) fn check_frames(frames: &[Tensor], cfg: &NetworkConfig, dim: usize) -> Result<()> {
    cfg.validate()?;
    if frames.len() < cfg.required_frames() {
        return shape_err(
            "unroll",
            format!("{} frames, mode needs {}", frames.len(), cfg.required_frames()),
        );
    }
    let batch = frames[0].rows();
    if let Some(bad) = frames.iter().find(|f| f.shape() != (batch, dim)) {
        return shape_err(
            "unroll",
            format!("frame {:?}, expected ({batch}, {dim})", bad.shape()),
        );
    }
    Ok(())
}

/// Target frames for each head, aligned with [`UnrollOutput`].
pub fn targets<'a>(frames: &'a [Tensor], cfg: &NetworkConfig) -> (Vec<&'a Tensor>, Vec<&'a Tensor>) {
    let recon = match cfg.mode {
        NetworkMode::Autoencoder | NetworkMode::Composite => {
            frames[..cfg.input_len].iter().rev().collect()
        }
        NetworkMode::Predictor => Vec::new(),
    };
    let pred = match cfg.mode {
        NetworkMode::Predictor | NetworkMode::Composite => {
            frames[cfg.input_len..cfg.input_len + cfg.output_len].iter().collect()
        }
        NetworkMode::Autoencoder => Vec::new(),
    };
    (recon, pred)
}
