use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softplus, softplus_inverse};
use crate::error::{shape_err, Error, Result};
use crate::moments::LinearLayerParams;
use crate::tensor::Tensor;

use super::config::{NetworkConfig, NetworkMode};

/// Default variance of freshly initialised weights and biases.
pub const DEFAULT_INIT_VARIANCE: f64 = 1e-3;

/// A learnable array of independent Gaussians. The variance is stored as an
/// unconstrained `rho` and used as `softplus(rho) > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stochastic {
    pub mean: Tensor,
    pub rho: Tensor,
}

impl Stochastic {
    pub fn new(mean: Tensor, variance: f64) -> Self {
        let rho = Tensor::filled(mean.rows(), mean.cols(), softplus_inverse(variance));
        Self { mean, rho }
    }

    pub fn variance(&self) -> Tensor {
        self.rho.map(softplus)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.shape()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    /// `U`, hidden x input.
    pub input: Stochastic,
    /// `W`, hidden x hidden.
    pub recurrent: Stochastic,
    /// `b`, 1 x hidden.
    pub bias: Stochastic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub reset: GateParams,
    pub update: GateParams,
    pub candidate: GateParams,
}

impl CellParams {
    pub fn hidden(&self) -> usize {
        self.reset.recurrent.mean.rows()
    }

    pub fn input(&self) -> usize {
        self.reset.input.mean.cols()
    }

    pub fn gates(&self) -> [(&'static str, &GateParams); 3] {
        [
            ("reset", &self.reset),
            ("update", &self.update),
            ("candidate", &self.candidate),
        ]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 3] {
        [&mut self.reset, &mut self.update, &mut self.candidate]
    }
}

/// One SP-GRU cell with its output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SpGruParams {
    pub cell: CellParams,
    /// `V`, output x hidden.
    pub out_weight: Stochastic,
    /// `c`, 1 x output.
    pub out_bias: Stochastic,
}

impl SpGruParams {
    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    pub fn output(&self) -> usize {
        self.out_weight.mean.rows()
    }
}

/// Encoder cell plus one decoding head per task. Heads receive no input; they
/// unroll from the encoder's final state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub encoder: CellParams,
    pub autoencoder: Option<SpGruParams>,
    pub predictor: Option<SpGruParams>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let k = if fan_in == 0 {
        0.0
    } else {
        1.0 / (fan_in as f64).sqrt()
    };
    let data = (0..rows * cols)
        .map(|_| if k > 0.0 { rng.gen_range(-k..k) } else { 0.0 })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

fn init_cell(rng: &mut ChaCha8Rng, hidden: usize, input: usize, init_s: f64) -> CellParams {
    let mut gate = || GateParams {
        input: Stochastic::new(uniform(rng, hidden, input, input), init_s),
        recurrent: Stochastic::new(uniform(rng, hidden, hidden, hidden), init_s),
        bias: Stochastic::new(Tensor::zeros(1, hidden), init_s),
    };
    CellParams {
        reset: gate(),
        update: gate(),
        candidate: gate(),
    }
}

fn check_init(init_s: f64) -> Result<()> {
    if !(init_s > 0.0) {
        return Err(Error::Config(format!(
            "initial variance must be positive, got {init_s}"
        )));
    }
    Ok(())
}

/// Cell with `input` inputs and an output layer back to `input` dimensions.
///
/// Weight means are `Uniform(−k, k)` with `k = 1/√fan_in`, bias means are 0,
/// every variance starts at `init_s`.
pub fn init_params(seed: u64, hidden: usize, input: usize, init_s: f64) -> Result<SpGruParams> {
    check_init(init_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(init_head(&mut rng, hidden, input, input, init_s))
}

fn init_head(
    rng: &mut ChaCha8Rng,
    hidden: usize,
    input: usize,
    output: usize,
    init_s: f64,
) -> SpGruParams {
    let cell = init_cell(rng, hidden, input, init_s);
    SpGruParams {
        cell,
        out_weight: Stochastic::new(uniform(rng, output, hidden, hidden), init_s),
        out_bias: Stochastic::new(Tensor::zeros(1, output), init_s),
    }
}

pub fn init_network(
    seed: u64,
    cfg: &NetworkConfig,
    frame_dim: usize,
    init_s: f64,
) -> Result<NetworkParams> {
    check_init(init_s)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.hidden;
    let encoder = init_cell(&mut rng, h, frame_dim, init_s);
    let autoencoder = matches!(cfg.mode, NetworkMode::Autoencoder | NetworkMode::Composite)
        .then(|| init_head(&mut rng, h, 0, frame_dim, init_s));
    let predictor = matches!(cfg.mode, NetworkMode::Predictor | NetworkMode::Composite)
        .then(|| init_head(&mut rng, h, 0, frame_dim, init_s));
    Ok(NetworkParams {
        encoder,
        autoencoder,
        predictor,
    })
}

fn push_stochastic<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, p: &'a Stochastic) {
    out.push((format!("{prefix}.mean"), &p.mean));
    out.push((format!("{prefix}.rho"), &p.rho));
}

fn push_cell<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, c: &'a CellParams) {
    for (name, g) in c.gates() {
        push_stochastic(out, &format!("{prefix}.{name}.input"), &g.input);
        push_stochastic(out, &format!("{prefix}.{name}.recurrent"), &g.recurrent);
        push_stochastic(out, &format!("{prefix}.{name}.bias"), &g.bias);
    }
}

fn push_cell_mut<'a>(out: &mut Vec<&'a mut Tensor>, c: &'a mut CellParams) {
    for g in c.gates_mut() {
        for s in [&mut g.input, &mut g.recurrent, &mut g.bias] {
            out.push(&mut s.mean);
            out.push(&mut s.rho);
        }
    }
}

fn push_head<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, h: &'a SpGruParams) {
    push_cell(out, &format!("{prefix}.cell"), &h.cell);
    push_stochastic(out, &format!("{prefix}.out_weight"), &h.out_weight);
    push_stochastic(out, &format!("{prefix}.out_bias"), &h.out_bias);
}

fn push_head_mut<'a>(out: &mut Vec<&'a mut Tensor>, h: &'a mut SpGruParams) {
    push_cell_mut(out, &mut h.cell);
    for s in [&mut h.out_weight, &mut h.out_bias] {
        out.push(&mut s.mean);
        out.push(&mut s.rho);
    }
}

impl SpGruParams {
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_head(&mut out, "head", self);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        push_head_mut(&mut out, self);
        out
    }
}

impl NetworkParams {
    /// All learnable tensors with stable names, in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_cell(&mut out, "encoder", &self.encoder);
        if let Some(h) = &self.autoencoder {
            push_head(&mut out, "autoencoder", h);
        }
        if let Some(h) = &self.predictor {
            push_head(&mut out, "predictor", h);
        }
        out
    }

    /// Same order as [`NetworkParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        push_cell_mut(&mut out, &mut self.encoder);
        if let Some(h) = &mut self.autoencoder {
            push_head_mut(&mut out, h);
        }
        if let Some(h) = &mut self.predictor {
            push_head_mut(&mut out, h);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn frame_dim(&self) -> usize {
        self.encoder.input()
    }

    /// Overwrites every tensor from `(name, tensor)` pairs; names and shapes
    /// must match this network exactly.
    pub fn load_named(&mut self, arrays: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.named().into_iter().map(|(n, _)| n).collect();
        let shapes: Vec<(usize, usize)> = self.named().iter().map(|(_, t)| t.shape()).collect();
        let mut slots = self.tensors_mut();
        for ((name, shape), slot) in names.iter().zip(&shapes).zip(slots.iter_mut()) {
            let Some((_, t)) = arrays.iter().find(|(n, _)| n == name) else {
                return Err(Error::Config(format!("checkpoint is missing array `{name}`")));
            };
            if t.shape() != *shape {
                return shape_err(
                    "load_named",
                    format!("`{name}` is {:?}, expected {:?}", t.shape(), shape),
                );
            }
            **slot = t.clone();
        }
        Ok(())
    }
}

/// Moment-form view of a gate: input layer carries the bias, the recurrent
/// layer has none.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedGate {
    pub input: LinearLayerParams,
    pub recurrent: LinearLayerParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedCell {
    pub reset: ResolvedGate,
    pub update: ResolvedGate,
    pub candidate: ResolvedGate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedHead {
    pub cell: ResolvedCell,
    pub output: LinearLayerParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedNetwork {
    pub encoder: ResolvedCell,
    pub autoencoder: Option<ResolvedHead>,
    pub predictor: Option<ResolvedHead>,
}

fn resolve_gate(g: &GateParams) -> Result<ResolvedGate> {
    Ok(ResolvedGate {
        input: LinearLayerParams::new(
            g.input.mean.clone(),
            g.input.variance(),
            g.bias.mean.clone(),
            g.bias.variance(),
        )?,
        recurrent: LinearLayerParams::unbiased(g.recurrent.mean.clone(), g.recurrent.variance())?,
    })
}

impl GateParams {
    pub fn resolve(&self) -> Result<ResolvedGate> {
        resolve_gate(self)
    }
}

impl CellParams {
    pub fn resolve(&self) -> Result<ResolvedCell> {
        Ok(ResolvedCell {
            reset: resolve_gate(&self.reset)?,
            update: resolve_gate(&self.update)?,
            candidate: resolve_gate(&self.candidate)?,
        })
    }
}

impl SpGruParams {
    pub fn resolve(&self) -> Result<ResolvedHead> {
        Ok(ResolvedHead {
            cell: self.cell.resolve()?,
            output: LinearLayerParams::new(
                self.out_weight.mean.clone(),
                self.out_weight.variance(),
                self.out_bias.mean.clone(),
                self.out_bias.variance(),
            )?,
        })
    }
}

impl NetworkParams {
    pub fn resolve(&self) -> Result<ResolvedNetwork> {
        Ok(ResolvedNetwork {
            encoder: self.encoder.resolve()?,
            autoencoder: self.autoencoder.as_ref().map(SpGruParams::resolve).transpose()?,
            predictor: self.predictor.as_ref().map(SpGruParams::resolve).transpose()?,
        })
    }
}

impl ResolvedGate {
    pub fn deterministic(&self) -> Self {
        Self {
            input: self.input.deterministic(),
            recurrent: self.recurrent.deterministic(),
        }
    }
}

impl ResolvedCell {
    /// Same means with every variance set to zero.
    pub fn deterministic(&self) -> Self {
        Self {
            reset: self.reset.deterministic(),
            update: self.update.deterministic(),
            candidate: self.candidate.deterministic(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.reset.recurrent.outputs()
    }

    pub fn input(&self) -> usize {
        self.reset.input.inputs()
    }
}

impl ResolvedHead {
    pub fn deterministic(&self) -> Self {
        Self {
            cell: self.cell.deterministic(),
            output: self.output.deterministic(),
        }
    }
}

impl ResolvedNetwork {
    pub fn deterministic(&self) -> Self {
        Self {
            encoder: self.encoder.deterministic(),
            autoencoder: self.autoencoder.as_ref().map(ResolvedHead::deterministic),
            predictor: self.predictor.as_ref().map(ResolvedHead::deterministic),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(7, 8, 5, 1e-3).unwrap();
        let b = init_params(7, 8, 5, 1e-3).unwrap();
        let bits = |p: &SpGruParams| -> Vec<u64> {
            p.named()
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_params(8, 8, 5, 1e-3).unwrap()));
    }

    #[test]
    fn initial_variance_round_trips() {
        let p = init_params(1, 4, 3, 1e-3).unwrap();
        for (name, _) in p.named().iter().filter(|(n, _)| n.ends_with(".rho")) {
            let _ = name;
        }
        let r = p.resolve().unwrap();
        for t in [r.cell.reset.input.w_s(), r.cell.update.recurrent.w_s(), r.output.b_s()] {
            assert!(t.data().iter().all(|&v| (v - 1e-3).abs() < 1e-12));
        }
        assert!(init_params(1, 4, 3, 0.0).is_err());
    }

    #[test]
    fn fan_in_bounds() {
        let p = init_params(3, 128, 4096, 1e-3).unwrap();
        let k = 1.0 / 64.0;
        let u = &p.cell.reset.input.mean;
        assert!(u.data().iter().all(|v| v.abs() < k));
        assert!(u.max_abs() > 0.9 * k);
        let w = &p.cell.reset.recurrent.mean;
        let kw = 1.0 / (128f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < kw));
        assert!(p.cell.update.bias.mean.is_zero());
    }

    #[test]
    fn names_and_mutable_views_align() {
        let cfg = NetworkConfig {
            mode: NetworkMode::Composite,
            hidden: 3,
            ..NetworkConfig::default()
        };
        let mut net = init_network(0, &cfg, 6, 1e-3).unwrap();
        let shapes: Vec<_> = net.named().iter().map(|(_, t)| t.shape()).collect();
        let mut_shapes: Vec<_> = net.tensors_mut().iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, mut_shapes);
        assert_eq!(net.named().len(), 18 + 2 * (18 + 4));
        let copy: Vec<(String, Tensor)> =
            net.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut other = init_network(99, &cfg, 6, 1e-3).unwrap();
        other.load_named(&copy).unwrap();
        assert_eq!(other, net);
        assert!(other.load_named(&copy[1..]).is_err());
    }
}
