use std::f64::consts::PI;

use crate::autodiff::{BCE_EPS, NLL_VARIANCE_FLOOR};
use crate::error::{shape_err, Result};
use crate::expfam::MomentTensor;
use crate::spgru::{targets, unroll, LossKind, NetworkConfig, ResolvedNetwork};
use crate::tensor::Tensor;

fn per_image_frame(
    preds: &[MomentTensor],
    targets: &[&Tensor],
    pixel: impl Fn(f64, f64, f64) -> f64,
) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return shape_err(
            "loss",
            format!("{} predicted frames for {} targets", preds.len(), targets.len()),
        );
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return shape_err("loss", format!("prediction {:?} vs target {:?}", p.shape(), t.shape()));
        }
        total += p
            .m
            .data()
            .iter()
            .zip(p.s.data())
            .zip(t.data())
            .map(|((&m, &s), &t)| pixel(m, s, t))
            .sum::<f64>();
    }
    Ok(total / (preds[0].m.rows() * preds.len()) as f64)
}

/// Cross-entropy of the mean channel, summed over pixels and averaged per
/// image per frame. The variance channel is not used.
pub fn loss_bce_mean(preds: &[MomentTensor], targets: &[&Tensor]) -> Result<f64> {
    per_image_frame(preds, targets, |m, _, t| {
        let p = m.clamp(BCE_EPS, 1.0 - BCE_EPS);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    })
}

/// `½[log(2πs) + (t − m)²/s]` with `s` floored, same averaging as
/// [`loss_bce_mean`].
pub fn loss_gaussian_nll(preds: &[MomentTensor], targets: &[&Tensor]) -> Result<f64> {
    per_image_frame(preds, targets, |m, s, t| {
        let s = s.max(NLL_VARIANCE_FLOOR);
        0.5 * ((2.0 * PI * s).ln() + (t - m) * (t - m) / s)
    })
}

/// Network loss on time-major frames without recording a tape.
pub fn evaluate_loss(frames: &[Tensor], cfg: &NetworkConfig, net: &ResolvedNetwork) -> Result<f64> {
    let out = unroll(frames, cfg, net)?;
    let (recon_t, pred_t) = targets(frames, cfg);
    let mut preds: Vec<MomentTensor> = Vec::new();
    let mut tgts: Vec<&Tensor> = Vec::new();
    if let Some(r) = out.reconstruction {
        preds.extend(r);
        tgts.extend(recon_t);
    }
    if let Some(p) = out.prediction {
        preds.extend(p);
        tgts.extend(pred_t);
    }
    match cfg.loss {
        LossKind::BceMean => loss_bce_mean(&preds, &tgts),
        LossKind::GaussianNll => loss_gaussian_nll(&preds, &tgts),
    }
}
