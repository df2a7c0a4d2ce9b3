//! Sampling-based checks of the closed-form moment operations.
//!
//! Every check draws its own samples from a ChaCha stream keyed by the run
//! seed and the check's index, so results do not depend on thread count.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expfam::{MomentTensor, NaturalParams};
use crate::moments::{
    lmm, nmm_gamma, nmm_poisson, sigmoid, sigmoid_mean, sigmoid_var, tanh_mean, tanh_var, ClampStats,
    LinearLayerParams, NmmConstants,
};
use crate::spgru::{cell_step, CellParams, CellVarianceRule, GateProductRule, Gru, GruGate, StepRules};
use crate::tensor::Tensor;

/// Smallest sample count any check accepts.
pub const MIN_SAMPLES: usize = 10_000;
/// Absolute tolerance for the probit-approximated Gaussian activations.
pub const GAUSS_NMM_TOLERANCE: f64 = 0.03;
/// Absolute per-unit tolerance for a whole cell step.
pub const CELL_TOLERANCE: f64 = 0.05;
/// Width of the acceptance band for exact identities, in standard errors.
pub const EXACT_SIGMAS: f64 = 4.0;
/// Largest hidden size [`verify_cell`] accepts.
pub const MAX_CELL_HIDDEN: usize = 8;

pub const GRID_MEANS: [f64; 7] = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0];
pub const GRID_VARIANCES: [f64; 4] = [0.0, 0.25, 1.0, 4.0];

/// Sample mean and variance with their standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
}

/// Two-pass moments of `x`. The variance SE uses the fourth central moment.
pub fn estimate(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    let rough = x.iter().sum::<f64>() / n;
    let mean = rough + x.iter().map(|v| v - rough).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / n;
    let m4 = m4 / n;
    Estimate {
        n: x.len(),
        mean,
        mean_se: (var / n).sqrt(),
        var,
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// Pass if the error is within this many standard errors.
    Sigmas(f64),
    /// Pass if the error is within this absolute bound.
    Absolute(f64),
    /// Reported only, never fails.
    Record,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Mean,
    Variance,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Mean => "mean",
            Quantity::Variance => "var",
        })
    }
}

/// One closed-form value compared against its Monte Carlo estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub op: String,
    pub point: String,
    pub quantity: Quantity,
    pub closed: f64,
    pub estimate: f64,
    pub se: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub tolerance: Tolerance,
    pub pass: bool,
}

impl OracleReport {
    fn new(op: &str, point: String, quantity: Quantity, closed: f64, est: f64, se: f64, tolerance: Tolerance) -> Self {
        let abs_err = (closed - est).abs();
        // Summation rounding on constant samples.
        let floor = 1e-12 * (1.0 + closed.abs());
        let pass = match tolerance {
            Tolerance::Sigmas(k) => abs_err <= k * se + floor,
            Tolerance::Absolute(t) => abs_err <= t,
            Tolerance::Record => true,
        };
        Self {
            op: op.into(),
            point,
            quantity,
            closed,
            estimate: est,
            se,
            abs_err,
            rel_err: abs_err / closed.abs().max(f64::MIN_POSITIVE),
            tolerance,
            pass,
        }
    }

    fn pair(op: &str, point: String, closed: (f64, f64), est: &Estimate, tol: Tolerance) -> [Self; 2] {
        [
            Self::new(op, point.clone(), Quantity::Mean, closed.0, est.mean, est.mean_se, tol),
            Self::new(op, point, Quantity::Variance, closed.1, est.var, est.var_se, tol),
        ]
    }

    pub const HEADER: &'static str = "op\tpoint\tquantity\tclosed\tmc\tse\tabs_err\trel_err\ttolerance\tpass";

    /// Tab-separated row matching [`OracleReport::HEADER`].
    pub fn row(&self) -> String {
        let tol = match self.tolerance {
            Tolerance::Sigmas(k) => format!("{k}se"),
            Tolerance::Absolute(t) => format!("{t}"),
            Tolerance::Record => "record".into(),
        };
        format!(
            "{}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.3e}\t{:.3e}\t{:.3e}\t{}\t{}",
            self.op,
            self.point,
            self.quantity,
            self.closed,
            self.estimate,
            self.se,
            self.abs_err,
            self.rel_err,
            tol,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::Config(format!("sample count {n} is below the minimum {MIN_SAMPLES}")));
    }
    Ok(())
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn gauss(rng: &mut ChaCha8Rng, m: f64, s: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    m + s.sqrt() * z
}

/// Samples `x`, `W` and `b` from their Gaussians and compares the moments of
/// every output of `W x + b` with [`lmm`]. `a` is a single row.
pub fn verify_lmm(a: &MomentTensor, p: &LinearLayerParams, n: usize, seed: u64) -> Result<Vec<OracleReport>> {
    check_n(n)?;
    let closed = lmm(a, p)?;
    if a.m.rows() != 1 {
        return Err(Error::Config(format!("verify_lmm takes one input row, got {}", a.m.rows())));
    }
    let (outs, ins) = p.w_m().shape();
    let mut rng = stream(seed, 0);
    let mut samples = vec![Vec::with_capacity(n); outs];
    let mut x = vec![0.0; ins];
    for _ in 0..n {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = gauss(&mut rng, a.m.data()[i], a.s.data()[i]);
        }
        for (o, out) in samples.iter_mut().enumerate() {
            let mut acc = gauss(&mut rng, p.b_m().data()[o], p.b_s().data()[o]);
            for (i, xi) in x.iter().enumerate() {
                acc += gauss(&mut rng, p.w_m().get(o, i), p.w_s().get(o, i)) * xi;
            }
            out.push(acc);
        }
    }
    let mut reports = Vec::with_capacity(2 * outs);
    for (o, s) in samples.iter().enumerate() {
        let est = estimate(s);
        let point = format!("out={o}");
        let c = (closed.m.data()[o], closed.s.data()[o]);
        reports.extend(OracleReport::pair("lmm", point, c, &est, Tolerance::Sigmas(EXACT_SIGMAS)));
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

/// One activation under one pre-activation distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NmmCase {
    Gauss { act: Activation, m: f64, s: f64 },
    Gamma { shape: f64, rate: f64 },
    Poisson { lambda: f64 },
}

impl NmmCase {
    fn label(&self) -> (&'static str, String) {
        match *self {
            NmmCase::Gauss { act: Activation::Sigmoid, m, s } => ("nmm_sigmoid", format!("m={m},s={s}")),
            NmmCase::Gauss { act: Activation::Tanh, m, s } => ("nmm_tanh", format!("m={m},s={s}")),
            NmmCase::Gamma { shape, rate } => ("nmm_gamma", format!("shape={shape},rate={rate}")),
            NmmCase::Poisson { lambda } => ("nmm_poisson", format!("lambda={lambda}")),
        }
    }
}

/// The 7 x 4 mean/variance grid for one Gaussian activation.
pub fn gaussian_grid(act: Activation) -> Vec<NmmCase> {
    GRID_MEANS
        .iter()
        .flat_map(|&m| GRID_VARIANCES.iter().map(move |&s| NmmCase::Gauss { act, m, s }))
        .collect()
}

fn nmm_closed(case: &NmmCase, k: &NmmConstants) -> Result<(f64, f64)> {
    let first = |t: MomentTensor| (t.m.data()[0], t.s.data()[0]);
    Ok(match *case {
        NmmCase::Gauss { act: Activation::Sigmoid, m, s } => {
            (sigmoid_mean(m, s, k).value, sigmoid_var(m, s, k).0.value.max(0.0))
        }
        NmmCase::Gauss { act: Activation::Tanh, m, s } => {
            (tanh_mean(m, s, k).value, tanh_var(m, s, k).0.value.max(0.0))
        }
        NmmCase::Gamma { shape, rate } => first(nmm_gamma(&NaturalParams::gamma_shape_rate(shape, rate)?, k)?),
        NmmCase::Poisson { lambda } => first(nmm_poisson(&NaturalParams::poisson(lambda)?, k)?),
    })
}

fn nmm_samples(case: &NmmCase, k: &NmmConstants, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let sat = |x: f64| -k.c * (-k.gamma * x).exp_m1();
    let bad = |e: String| Error::Config(format!("{case:?}: {e}"));
    Ok(match *case {
        NmmCase::Gauss { act, m, s } => {
            let d = Normal::new(m, s.sqrt()).map_err(|e| bad(e.to_string()))?;
            let f = match act {
                Activation::Sigmoid => sigmoid,
                Activation::Tanh => f64::tanh,
            };
            (0..n).map(|_| f(d.sample(rng))).collect()
        }
        NmmCase::Gamma { shape, rate } => {
            let d = Gamma::new(shape, 1.0 / rate).map_err(|e| bad(e.to_string()))?;
            (0..n).map(|_| sat(d.sample(rng))).collect()
        }
        NmmCase::Poisson { lambda } => {
            let d = Poisson::new(lambda).map_err(|e| bad(e.to_string()))?;
            (0..n).map(|_| sat(d.sample(rng))).collect()
        }
    })
}

/// Moments of the activation output against `n` samples drawn from stream
/// `index` of `seed`. Gaussian cases use [`GAUSS_NMM_TOLERANCE`], the exact
/// Gamma/Poisson forms use [`EXACT_SIGMAS`] standard errors.
pub fn verify_nmm(case: &NmmCase, k: &NmmConstants, n: usize, seed: u64, index: u64) -> Result<[OracleReport; 2]> {
    check_n(n)?;
    let closed = nmm_closed(case, k)?;
    let est = estimate(&nmm_samples(case, k, n, &mut stream(seed, index))?);
    let tol = match case {
        NmmCase::Gauss { .. } => Tolerance::Absolute(GAUSS_NMM_TOLERANCE),
        _ => Tolerance::Sigmas(EXACT_SIGMAS),
    };
    let (op, point) = case.label();
    Ok(OracleReport::pair(op, point, closed, &est, tol))
}

/// [`verify_nmm`] over `cases` in parallel; case `i` uses stream `i`.
pub fn verify_nmm_all(cases: &[NmmCase], k: &NmmConstants, n: usize, seed: u64) -> Result<Vec<OracleReport>> {
    check_n(n)?;
    let per: Vec<[OracleReport; 2]> = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| verify_nmm(c, k, n, seed, i as u64))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn sample_tensor(rng: &mut ChaCha8Rng, mean: &Tensor, var: &Tensor) -> Tensor {
    let data = mean
        .data()
        .iter()
        .zip(var.data())
        .map(|(&m, &s)| gauss(rng, m, s))
        .collect();
    Tensor::from_vec(mean.rows(), mean.cols(), data).expect("sized")
}

/// Per-unit comparison of one cell step with a sampled point GRU.
#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub estimate: Vec<Estimate>,
    /// Reports per variance rule, `2 * hidden` each.
    pub rules: Vec<(CellVarianceRule, Vec<OracleReport>)>,
}

impl CellReport {
    /// Largest per-unit absolute error of `quantity` under `rule`.
    pub fn max_error(&self, rule: CellVarianceRule, quantity: Quantity) -> f64 {
        self.rules
            .iter()
            .filter(|(r, _)| *r == rule)
            .flat_map(|(_, reps)| reps.iter().filter(|r| r.quantity == quantity))
            .map(|r| r.abs_err)
            .fold(0.0, f64::max)
    }

    pub fn reports(&self) -> impl Iterator<Item = &OracleReport> {
        self.rules.iter().flat_map(|(_, r)| r)
    }
}

/// Samples every weight, bias, input and state entry, runs the point GRU per
/// sample and compares the next-state moments with [`cell_step`] under both
/// variance rules. `gated` rules get `tolerance`, the others are recorded only.
pub fn verify_cell(
    cell: &CellParams,
    x: &MomentTensor,
    h: &MomentTensor,
    gate_product: GateProductRule,
    gated: &[CellVarianceRule],
    tolerance: f64,
    n: usize,
    seed: u64,
) -> Result<CellReport> {
    check_n(n)?;
    let hidden = cell.hidden();
    if hidden > MAX_CELL_HIDDEN {
        return Err(Error::Config(format!(
            "verify_cell is limited to {MAX_CELL_HIDDEN} hidden units, got {hidden}"
        )));
    }
    if x.m.rows() != 1 || h.m.rows() != 1 {
        return Err(Error::Config("verify_cell takes a single input and state row".into()));
    }
    let resolved = cell.resolve()?;
    let vars = cell.gates().map(|(_, g)| (g.input.variance(), g.recurrent.variance(), g.bias.variance()));

    let mut rng = stream(seed, 0);
    let mut samples = vec![Vec::with_capacity(n); hidden];
    for _ in 0..n {
        let [r, z, c] = [0, 1, 2].map(|i| {
            let (g, v) = (cell.gates()[i].1, &vars[i]);
            GruGate {
                input: sample_tensor(&mut rng, &g.input.mean, &v.0),
                recurrent: sample_tensor(&mut rng, &g.recurrent.mean, &v.1),
                bias: sample_tensor(&mut rng, &g.bias.mean, &v.2),
            }
        });
        let gru = Gru {
            reset: r,
            update: z,
            candidate: c,
        };
        let xs = sample_tensor(&mut rng, &x.m, &x.s);
        let hs = sample_tensor(&mut rng, &h.m, &h.s);
        let next = gru.step(&xs, &hs)?;
        for (j, v) in next.data().iter().enumerate() {
            samples[j].push(*v);
        }
    }
    let estimates: Vec<Estimate> = samples.iter().map(|s| estimate(s)).collect();

    let mut rules = Vec::new();
    for rule in [CellVarianceRule::Corrected, CellVarianceRule::Table1Literal] {
        let step_rules = StepRules {
            cell_variance: rule,
            gate_product,
            nmm: NmmConstants::default(),
        };
        let closed = cell_step(x, h, &resolved, &step_rules, &mut ClampStats::default())?;
        let tol = if gated.contains(&rule) {
            Tolerance::Absolute(tolerance)
        } else {
            Tolerance::Record
        };
        let op = format!("cell_{rule:?}").to_lowercase();
        let mut reps = Vec::with_capacity(2 * hidden);
        for (j, est) in estimates.iter().enumerate() {
            let c = (closed.m.data()[j], closed.s.data()[j]);
            reps.extend(OracleReport::pair(&op, format!("unit={j}"), c, est, tol));
        }
        rules.push((rule, reps));
    }
    Ok(CellReport {
        estimate: estimates,
        rules,
    })
}

/// Ratio `SE(n) / SE(2n)` of the sample-mean standard error of `σ(X)`,
/// `X ~ N(1, 1)`. Close to √2 when the estimator converges at `1/√n`.
pub fn se_convergence_ratio(n: usize, seed: u64) -> Result<f64> {
    check_n(n)?;
    let case = NmmCase::Gauss {
        act: Activation::Sigmoid,
        m: 1.0,
        s: 1.0,
    };
    let k = NmmConstants::default();
    let a = estimate(&nmm_samples(&case, &k, n, &mut stream(seed, 0))?);
    let b = estimate(&nmm_samples(&case, &k, 2 * n, &mut stream(seed, 1))?);
    Ok(a.mean_se / b.mean_se)
}

/// Checks run by the default oracle suite.
pub fn default_suite(k: &NmmConstants, n: usize, seed: u64) -> Result<Vec<OracleReport>> {
    check_n(n)?;
    let scalar = |wm: f64, ws: f64, bm: f64, bs: f64| {
        LinearLayerParams::new(
            Tensor::scalar(wm),
            Tensor::scalar(ws),
            Tensor::scalar(bm),
            Tensor::scalar(bs),
        )
    };
    let mut out = Vec::new();
    let lmm_points = [
        (MomentTensor::scalar(3.0, 1.0), scalar(2.0, 0.5, 1.0, 0.25)?),
        (MomentTensor::scalar(3.0, 0.0), scalar(2.0, 0.0, 1.0, 0.0)?),
        (MomentTensor::scalar(3.0, 1.0), scalar(2.0, 10.0, 1.0, 0.25)?),
    ];
    for (i, (a, p)) in lmm_points.iter().enumerate() {
        out.extend(verify_lmm(a, p, n, seed ^ (i as u64 + 1))?);
    }

    let mut cases = gaussian_grid(Activation::Sigmoid);
    cases.extend(gaussian_grid(Activation::Tanh));
    cases.extend([
        NmmCase::Gamma { shape: 1.0, rate: 1.0 },
        NmmCase::Gamma { shape: 2.0, rate: 3.0 },
        NmmCase::Poisson { lambda: 1.0 },
        NmmCase::Poisson { lambda: 4.0 },
    ]);
    out.extend(verify_nmm_all(&cases, k, n, seed)?);

    let cell = crate::spgru::init_params(seed, 4, 3, 1e-3)?.cell;
    let x = MomentTensor::deterministic(Tensor::row_vector(vec![0.5, -0.3, 0.8]));
    let h = MomentTensor::new(Tensor::row_vector(vec![0.1, -0.2, 0.3, 0.0]), Tensor::filled(1, 4, 1e-3))?;
    let n_cell = n.min(100_000);
    let cell_report = verify_cell(
        &cell,
        &x,
        &h,
        GateProductRule::FullIndependent,
        &[CellVarianceRule::Corrected],
        CELL_TOLERANCE,
        n_cell,
        seed,
    )?;
    out.extend(cell_report.reports().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::OmegaVariant;

    const N: usize = 200_000;

    #[test]
    fn estimate_of_known_samples() {
        let e = estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.var, 1.25);
        let c = estimate(&vec![0.1; 1000]);
        assert_eq!(c.var, 0.0);
        assert_eq!(c.mean_se, 0.0);
        assert!((c.mean - 0.1).abs() < 1e-16);
    }

    #[test]
    fn lmm_scalar_example_passes() {
        let p = LinearLayerParams::new(
            Tensor::scalar(2.0),
            Tensor::scalar(0.5),
            Tensor::scalar(1.0),
            Tensor::scalar(0.25),
        )
        .unwrap();
        let reps = verify_lmm(&MomentTensor::scalar(3.0, 1.0), &p, N, 1).unwrap();
        assert!(reps.iter().all(|r| r.pass), "{reps:#?}");
        assert_eq!(reps[0].closed, 7.0);
        assert_eq!(reps[1].closed, 9.25);
    }

    #[test]
    fn lmm_without_variance_is_exact() {
        let p = LinearLayerParams::new(
            Tensor::scalar(2.0),
            Tensor::scalar(0.0),
            Tensor::scalar(1.0),
            Tensor::scalar(0.0),
        )
        .unwrap();
        let reps = verify_lmm(&MomentTensor::scalar(3.0, 0.0), &p, MIN_SAMPLES, 1).unwrap();
        assert_eq!(reps[1].estimate, 0.0);
        assert_eq!(reps[0].estimate, 7.0);
        assert!(reps.iter().all(|r| r.pass));
    }

    #[test]
    fn lmm_vector_layer_passes() {
        let p = LinearLayerParams::new(
            Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5]).unwrap(),
            Tensor::from_vec(2, 3, vec![0.1, 0.2, 0.0, 1.0, 0.05, 0.3]).unwrap(),
            Tensor::row_vector(vec![0.2, -0.4]),
            Tensor::row_vector(vec![0.0, 0.5]),
        )
        .unwrap();
        let a = MomentTensor::new(Tensor::row_vector(vec![1.0, -2.0, 0.5]), Tensor::row_vector(vec![0.3, 0.0, 2.0])).unwrap();
        let reps = verify_lmm(&a, &p, N, 9).unwrap();
        assert_eq!(reps.len(), 4);
        assert!(reps.iter().all(|r| r.pass), "{reps:#?}");
    }

    #[test]
    fn sigmoid_at_unit_variance_within_two_hundredths() {
        let case = NmmCase::Gauss {
            act: Activation::Sigmoid,
            m: 0.0,
            s: 1.0,
        };
        let [mean, _] = verify_nmm(&case, &NmmConstants::default(), N, 3, 0).unwrap();
        assert!(mean.abs_err < 0.02);
    }

    #[test]
    fn tanh_at_origin_is_exactly_zero() {
        let case = NmmCase::Gauss {
            act: Activation::Tanh,
            m: 0.0,
            s: 0.0,
        };
        let [mean, var] = verify_nmm(&case, &NmmConstants::default(), MIN_SAMPLES, 3, 0).unwrap();
        assert_eq!(mean.closed, 0.0);
        assert_eq!(mean.estimate, 0.0);
        assert_eq!(var.closed, 0.0);
        assert!(mean.pass && var.pass);
    }

    #[test]
    fn exact_families_within_four_se() {
        let cases = [
            NmmCase::Gamma { shape: 1.0, rate: 1.0 },
            NmmCase::Gamma { shape: 2.0, rate: 3.0 },
            NmmCase::Poisson { lambda: 4.0 },
        ];
        let reps = verify_nmm_all(&cases, &NmmConstants::default(), N, 5).unwrap();
        assert!(reps.iter().all(|r| r.pass), "{reps:#?}");
        assert!((reps[0].closed - 0.5).abs() < 1e-15);
        assert!((reps[1].closed - 1.0 / 12.0).abs() < 1e-15);
        assert!((reps[2].closed - 0.4375).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_grid_separates_omega_variants() {
        let cases = gaussian_grid(Activation::Sigmoid);
        let main = verify_nmm_all(&cases, &NmmConstants::default(), N, 11).unwrap();
        let appendix = verify_nmm_all(&cases, &NmmConstants::with_omega(OmegaVariant::Appendix), N, 11).unwrap();
        assert!(main.iter().all(|r| r.pass), "{:#?}", main.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        assert!(appendix.iter().any(|r| !r.pass));
        let mut flipped = NmmConstants::default();
        flipped.omega_sig = -flipped.omega_sig;
        let flipped = verify_nmm_all(&cases, &flipped, N, 11).unwrap();
        assert!(flipped.iter().any(|r| !r.pass && r.quantity == Quantity::Variance));
    }

    #[test]
    fn results_independent_of_thread_count() {
        let cases = gaussian_grid(Activation::Tanh);
        let k = NmmConstants::default();
        let a = verify_nmm_all(&cases, &k, MIN_SAMPLES, 2).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| verify_nmm_all(&cases, &k, MIN_SAMPLES, 2).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn small_samples_rejected() {
        let case = NmmCase::Poisson { lambda: 1.0 };
        assert!(verify_nmm(&case, &NmmConstants::default(), MIN_SAMPLES - 1, 0, 0).is_err());
    }

    #[test]
    fn standard_error_shrinks_by_root_two_when_doubling_n() {
        let r = se_convergence_ratio(100_000, 4).unwrap();
        let root2 = 2f64.sqrt();
        assert!((r - root2).abs() <= 0.2 * root2, "ratio {r}");
    }

    #[test]
    fn deterministic_cell_matches_point_gru() {
        let mut cell = crate::spgru::init_params(2, 3, 2, 1e-3).unwrap().cell;
        for g in [&mut cell.reset, &mut cell.update, &mut cell.candidate] {
            for s in [&mut g.input, &mut g.recurrent, &mut g.bias] {
                // softplus(-800) underflows to an exact zero variance.
                s.rho.map_inplace(|_| -800.0);
            }
        }
        let x = MomentTensor::deterministic(Tensor::row_vector(vec![0.4, -0.7]));
        let h = MomentTensor::deterministic(Tensor::row_vector(vec![0.2, 0.0, -0.5]));
        let rep = verify_cell(
            &cell,
            &x,
            &h,
            GateProductRule::FullIndependent,
            &[CellVarianceRule::Corrected],
            1e-12,
            MIN_SAMPLES,
            0,
        )
        .unwrap();
        assert!(rep.reports().filter(|r| r.op == "cell_corrected").all(|r| r.pass));
        assert!(rep.estimate.iter().all(|e| e.var == 0.0));
    }

    #[test]
    fn small_variance_cell_within_tolerance() {
        let cell = crate::spgru::init_params(7, 4, 3, 1e-3).unwrap().cell;
        let x = MomentTensor::deterministic(Tensor::row_vector(vec![0.5, -0.3, 0.8]));
        let h = MomentTensor::new(Tensor::row_vector(vec![0.1, -0.2, 0.3, 0.0]), Tensor::filled(1, 4, 1e-3)).unwrap();
        let rep = verify_cell(
            &cell,
            &x,
            &h,
            GateProductRule::FullIndependent,
            &[CellVarianceRule::Corrected],
            CELL_TOLERANCE,
            100_000,
            1,
        )
        .unwrap();
        assert!(rep.reports().all(|r| r.pass));
        let corrected = rep.max_error(CellVarianceRule::Corrected, Quantity::Variance);
        let literal = rep.max_error(CellVarianceRule::Table1Literal, Quantity::Variance);
        assert!(corrected <= literal, "corrected {corrected} literal {literal}");
    }

    #[test]
    fn oversized_cell_rejected() {
        let cell = crate::spgru::init_params(0, 9, 1, 1e-3).unwrap().cell;
        let x = MomentTensor::zeros(1, 1);
        let h = MomentTensor::zeros(1, 9);
        let r = verify_cell(&cell, &x, &h, GateProductRule::FullIndependent, &[], 0.05, MIN_SAMPLES, 0);
        assert!(r.is_err());
    }
}
