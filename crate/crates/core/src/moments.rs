//! Linear and nonlinear moment matching.
//!
//! Linear layers with independent random weights propagate mean and variance
//! exactly:
//!
//! ```text
//! o_m = W_m a_m + b_m
//! o_s = W_s a_s + b_s + (W_m ⊙ W_m) a_s + W_s (a_m ⊙ a_m)
//! ```
//!
//! Sigmoid and tanh of a Gaussian pre-activation use the probit approximation
//! `σ(x) ≈ Φ(ζx)` together with `σ(x)² ≈ σ(ν(x + ω))`. The saturating map
//! `f(x) = c(1 − e^{−γx})` has exact closed forms under Gamma and Poisson
//! pre-activations.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{shape_err, Error, Result};
use crate::expfam::{clamp_variance, Family, MomentTensor, NaturalParams};
use crate::tensor::Tensor;

/// Which ω to use in the sigmoid variance term. The tanh variant always
/// follows from `tanh(x) = 2σ(2x) − 1`, i.e. `ω_tanh = ω_sig / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OmegaVariant {
    /// `ω = −log(√2 + 1)`.
    #[default]
    Main,
    /// `ω = −log(√2 + 1) / 2`, the constant printed next to the sigmoid
    /// derivation in the appendix.
    Appendix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmmConstants {
    pub zeta: f64,
    pub nu_sig: f64,
    pub omega_sig: f64,
    pub nu_tanh: f64,
    pub omega_tanh: f64,
    /// Scale of the saturating map used with Gamma/Poisson.
    pub c: f64,
    /// Rate of the saturating map used with Gamma/Poisson.
    pub gamma: f64,
}

impl Default for NmmConstants {
    fn default() -> Self {
        Self::with_omega(OmegaVariant::Main)
    }
}

impl NmmConstants {
    pub fn with_omega(variant: OmegaVariant) -> Self {
        let nu = 4.0 - 2.0 * SQRT_2;
        let omega = -(SQRT_2 + 1.0).ln();
        let omega_sig = match variant {
            OmegaVariant::Main => omega,
            OmegaVariant::Appendix => omega / 2.0,
        };
        Self {
            zeta: (PI / 8.0).sqrt(),
            nu_sig: nu,
            omega_sig,
            nu_tanh: 2.0 * nu,
            omega_tanh: omega / 2.0,
            c: 1.0,
            gamma: 1.0,
        }
    }

    pub fn with_saturation(mut self, c: f64, gamma: f64) -> Result<Self> {
        if !(c > 0.0) || !(gamma > 0.0) {
            return Err(Error::Config(format!(
                "saturating map needs c > 0 and gamma > 0, got c={c}, gamma={gamma}"
            )));
        }
        self.c = c;
        self.gamma = gamma;
        Ok(self)
    }

    fn zeta2(&self) -> f64 {
        self.zeta * self.zeta
    }
}

/// Moment-form parameters of an affine layer with independent random weights.
///
/// `W` is `out x in`, `b` is `1 x out`. The squared weight means are cached
/// because every variance propagation needs them.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayerParams {
    w_m: Tensor,
    w_s: Tensor,
    w_m_sq: Tensor,
    b_m: Tensor,
    b_s: Tensor,
}

impl LinearLayerParams {
    pub fn new(w_m: Tensor, w_s: Tensor, b_m: Tensor, b_s: Tensor) -> Result<Self> {
        let (out, _) = w_m.shape();
        if w_s.shape() != w_m.shape() {
            return shape_err(
                "LinearLayerParams",
                format!("W_m {:?} vs W_s {:?}", w_m.shape(), w_s.shape()),
            );
        }
        if b_m.shape() != (1, out) || b_s.shape() != (1, out) {
            return shape_err(
                "LinearLayerParams",
                format!(
                    "bias {:?}/{:?} for {out} outputs",
                    b_m.shape(),
                    b_s.shape()
                ),
            );
        }
        for t in [&w_s, &b_s] {
            if let Some((index, &value)) = t.data().iter().enumerate().find(|(_, v)| !(**v >= 0.0))
            {
                return Err(Error::Domain {
                    index,
                    value,
                    detail: "weight variances must be nonnegative",
                });
            }
        }
        let w_m_sq = w_m.map(|v| v * v);
        Ok(Self {
            w_m,
            w_s,
            w_m_sq,
            b_m,
            b_s,
        })
    }

    /// Layer without a bias.
    pub fn unbiased(w_m: Tensor, w_s: Tensor) -> Result<Self> {
        let out = w_m.rows();
        Self::new(w_m, w_s, Tensor::zeros(1, out), Tensor::zeros(1, out))
    }

    pub fn inputs(&self) -> usize {
        self.w_m.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w_m.rows()
    }

    pub fn w_m(&self) -> &Tensor {
        &self.w_m
    }

    pub fn w_s(&self) -> &Tensor {
        &self.w_s
    }

    pub fn b_m(&self) -> &Tensor {
        &self.b_m
    }

    pub fn b_s(&self) -> &Tensor {
        &self.b_s
    }

    /// Same means, all variances zero.
    pub fn deterministic(&self) -> Self {
        Self {
            w_s: Tensor::zeros(self.w_s.rows(), self.w_s.cols()),
            b_s: Tensor::zeros(1, self.b_s.cols()),
            ..self.clone()
        }
    }
}

/// Linear moment matching for a `batch x in` input.
pub fn lmm(a: &MomentTensor, p: &LinearLayerParams) -> Result<MomentTensor> {
    if a.m.cols() != p.inputs() {
        return shape_err(
            "lmm",
            format!("input {:?} for a layer with {} inputs", a.shape(), p.inputs()),
        );
    }
    let mut o_m = a.m.matmul_bt(&p.w_m)?;
    o_m.add_row_assign(&p.b_m)?;

    // W_s a_s + W_s (a_m ⊙ a_m) = W_s (a_s + a_m ⊙ a_m)
    let second = a.s.zip_map(&a.m, |s, m| s + m * m)?;
    let mut o_s = second.matmul_bt(&p.w_s)?;
    if !a.s.is_zero() {
        o_s.add_assign(&a.s.matmul_bt(&p.w_m_sq)?)?;
    }
    o_s.add_row_assign(&p.b_s)?;
    clamp_variance(&mut o_s);
    Ok(MomentTensor { m: o_m, s: o_s })
}

/// Value of a moment-matched activation statistic with its partial
/// derivatives in the pre-activation mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partials {
    pub value: f64,
    pub d_m: f64,
    pub d_s: f64,
}

/// Logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_prime(sig: f64) -> f64 {
    sig * (1.0 - sig)
}

/// `σ_m(m, s) = σ(m / √(1 + ζ² s))`.
pub fn sigmoid_mean(m: f64, s: f64, k: &NmmConstants) -> Partials {
    let q = 1.0 + k.zeta2() * s;
    let inv = q.sqrt().recip();
    let u = m * inv;
    let sig = sigmoid(u);
    let ds = sigmoid_prime(sig);
    Partials {
        value: sig,
        d_m: ds * inv,
        d_s: ds * m * (-0.5 * k.zeta2()) * inv / q,
    }
}

/// `σ_s(m, s) = σ(ν(m + ω) / √(1 + ζ²ν² s)) − σ_m²`, clamped at zero.
/// The flag reports whether the clamp was active.
///
/// A point mass (`s == 0`) maps to exactly zero variance; `d_s` there is the
/// delta-method slope `σ'(m)²`.
pub fn sigmoid_var(m: f64, s: f64, k: &NmmConstants) -> (Partials, bool) {
    let mean = sigmoid_mean(m, s, k);
    if s == 0.0 {
        return (point_mass(mean.d_m), false);
    }
    let nu = k.nu_sig;
    let q = 1.0 + k.zeta2() * nu * nu * s;
    let inv = q.sqrt().recip();
    let v = nu * (m + k.omega_sig) * inv;
    let sig = sigmoid(v);
    let raw = sig - mean.value * mean.value;
    clamp_partials(
        raw,
        sigmoid_prime(sig) * nu * inv - 2.0 * mean.value * mean.d_m,
        sigmoid_prime(sig) * nu * (m + k.omega_sig) * (-0.5 * k.zeta2() * nu * nu) * inv / q
            - 2.0 * mean.value * mean.d_s,
    )
}

/// `tanh_m(m, s) = 2σ(m / √(¼ + ζ² s)) − 1`.
pub fn tanh_mean(m: f64, s: f64, k: &NmmConstants) -> Partials {
    let q = 0.25 + k.zeta2() * s;
    let inv = q.sqrt().recip();
    let sig = sigmoid(m * inv);
    let ds = 2.0 * sigmoid_prime(sig);
    Partials {
        value: 2.0 * sig - 1.0,
        d_m: ds * inv,
        d_s: ds * m * (-0.5 * k.zeta2()) * inv / q,
    }
}

/// `tanh_s(m, s) = 4σ(ν(m + ω) / √(1 + ζ²ν² s)) − t_m² − 2t_m − 1`, clamped.
/// Zero at `s == 0`, like [`sigmoid_var`].
pub fn tanh_var(m: f64, s: f64, k: &NmmConstants) -> (Partials, bool) {
    let mean = tanh_mean(m, s, k);
    if s == 0.0 {
        return (point_mass(mean.d_m), false);
    }
    let t = mean.value;
    let nu = k.nu_tanh;
    let q = 1.0 + k.zeta2() * nu * nu * s;
    let inv = q.sqrt().recip();
    let sig = sigmoid(nu * (m + k.omega_tanh) * inv);
    let raw = 4.0 * sig - t * t - 2.0 * t - 1.0;
    let outer = -(2.0 * t + 2.0);
    clamp_partials(
        raw,
        4.0 * sigmoid_prime(sig) * nu * inv + outer * mean.d_m,
        4.0 * sigmoid_prime(sig) * nu * (m + k.omega_tanh) * (-0.5 * k.zeta2() * nu * nu) * inv
            / q
            + outer * mean.d_s,
    )
}

fn point_mass(slope: f64) -> Partials {
    Partials {
        value: 0.0,
        d_m: 0.0,
        d_s: slope * slope,
    }
}

fn clamp_partials(raw: f64, d_m: f64, d_s: f64) -> (Partials, bool) {
    if raw > 0.0 {
        (
            Partials {
                value: raw,
                d_m,
                d_s,
            },
            false,
        )
    } else {
        (
            Partials {
                value: 0.0,
                d_m: 0.0,
                d_s: 0.0,
            },
            true,
        )
    }
}

/// Number of variance outputs that hit the zero clamp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampStats {
    pub clamped: usize,
    pub total: usize,
}

impl ClampStats {
    pub fn merge(&mut self, other: ClampStats) {
        self.clamped += other.clamped;
        self.total += other.total;
    }
}

fn gaussian_nmm(
    o: &MomentTensor,
    k: &NmmConstants,
    mean: fn(f64, f64, &NmmConstants) -> Partials,
    var: fn(f64, f64, &NmmConstants) -> (Partials, bool),
    stats: &mut ClampStats,
) -> MomentTensor {
    let (rows, cols) = o.shape();
    let mut a_m = Tensor::zeros(rows, cols);
    let mut a_s = Tensor::zeros(rows, cols);
    let out = a_m.data_mut().iter_mut().zip(a_s.data_mut());
    for ((am, as_), (&m, &s)) in out.zip(o.m.data().iter().zip(o.s.data())) {
        *am = mean(m, s, k).value;
        let (v, clamped) = var(m, s, k);
        *as_ = v.value;
        stats.clamped += clamped as usize;
    }
    stats.total += rows * cols;
    MomentTensor { m: a_m, s: a_s }
}

pub fn nmm_sigmoid_gauss(o: &MomentTensor, k: &NmmConstants) -> MomentTensor {
    nmm_sigmoid_gauss_counted(o, k, &mut ClampStats::default())
}

pub fn nmm_sigmoid_gauss_counted(
    o: &MomentTensor,
    k: &NmmConstants,
    stats: &mut ClampStats,
) -> MomentTensor {
    gaussian_nmm(o, k, sigmoid_mean, sigmoid_var, stats)
}

pub fn nmm_tanh_gauss(o: &MomentTensor, k: &NmmConstants) -> MomentTensor {
    nmm_tanh_gauss_counted(o, k, &mut ClampStats::default())
}

pub fn nmm_tanh_gauss_counted(
    o: &MomentTensor,
    k: &NmmConstants,
    stats: &mut ClampStats,
) -> MomentTensor {
    gaussian_nmm(o, k, tanh_mean, tanh_var, stats)
}

/// Mean and variance of `c(1 − e^{−γX})` for `X ~ Gamma(shape, rate)`.
pub fn saturating_gamma(shape: f64, rate: f64, c: f64, gamma: f64) -> (f64, f64) {
    let r1 = (rate / (rate + gamma)).powf(shape);
    let r2 = (rate / (rate + 2.0 * gamma)).powf(shape);
    let mean = c * (1.0 - r1);
    let var = c * c * (r2 - r1 * r1);
    (mean, var.max(0.0))
}

/// Mean and variance of `c(1 − e^{−γX})` for `X ~ Poisson(λ)`.
pub fn saturating_poisson(lambda: f64, c: f64, gamma: f64) -> (f64, f64) {
    let mean = -c * ((-gamma).exp_m1() * lambda).exp_m1();
    let var = c * c * (((-2.0 * gamma).exp_m1() * lambda).exp() - (2.0 * (-gamma).exp_m1() * lambda).exp());
    (mean, var.max(0.0))
}

/// Saturating activation under a Gamma pre-activation given in natural form.
pub fn nmm_gamma(o: &NaturalParams, k: &NmmConstants) -> Result<MomentTensor> {
    expect_family(o, Family::Gamma)?;
    elementwise_natural(o, |a, b| saturating_gamma(a + 1.0, -b, k.c, k.gamma))
}

/// Saturating activation under a Poisson pre-activation (λ stored in α).
pub fn nmm_poisson(o: &NaturalParams, k: &NmmConstants) -> Result<MomentTensor> {
    expect_family(o, Family::Poisson)?;
    elementwise_natural(o, |a, _| saturating_poisson(a, k.c, k.gamma))
}

fn expect_family(o: &NaturalParams, family: Family) -> Result<()> {
    if o.family() != family {
        return Err(Error::Config(format!(
            "expected {family:?} parameters, got {:?}",
            o.family()
        )));
    }
    Ok(())
}

fn elementwise_natural(
    o: &NaturalParams,
    f: impl Fn(f64, f64) -> (f64, f64),
) -> Result<MomentTensor> {
    let (rows, cols) = o.shape();
    let (m, s): (Vec<f64>, Vec<f64>) = o
        .alpha()
        .data()
        .iter()
        .zip(o.beta().data())
        .map(|(&a, &b)| f(a, b))
        .unzip();
    MomentTensor::new(Tensor::from_vec(rows, cols, m)?, Tensor::from_vec(rows, cols, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> NmmConstants {
        NmmConstants::default()
    }

    #[test]
    fn constants() {
        let k = k();
        assert!((k.zeta * k.zeta - PI / 8.0).abs() < 1e-15);
        assert!((k.nu_sig - 1.171_572_875_253_809_9).abs() < 1e-15);
        assert!((k.omega_sig + 0.881_373_587_019_543).abs() < 1e-15);
        assert_eq!(k.nu_tanh, 2.0 * k.nu_sig);
        assert_eq!(k.omega_tanh, k.omega_sig / 2.0);
        assert_eq!(
            NmmConstants::with_omega(OmegaVariant::Appendix).omega_sig,
            k.omega_sig / 2.0
        );
        assert!(k.with_saturation(0.0, 1.0).is_err());
        assert!(k.with_saturation(1.0, -1.0).is_err());
    }

    fn scalar_layer(w_m: f64, w_s: f64, b_m: f64, b_s: f64) -> LinearLayerParams {
        LinearLayerParams::new(
            Tensor::scalar(w_m),
            Tensor::scalar(w_s),
            Tensor::scalar(b_m),
            Tensor::scalar(b_s),
        )
        .unwrap()
    }

    #[test]
    fn lmm_scalar_example() {
        let o = lmm(&MomentTensor::scalar(3.0, 1.0), &scalar_layer(2.0, 0.5, 1.0, 0.25)).unwrap();
        assert_eq!(o.m.item(), 7.0);
        assert!((o.s.item() - 9.25).abs() < 1e-12);
    }

    #[test]
    fn lmm_degenerate_cases() {
        let o = lmm(&MomentTensor::scalar(3.0, 0.0), &scalar_layer(2.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(o.s.item(), 0.0);
        let o = lmm(&MomentTensor::scalar(3.0, 2.0), &scalar_layer(0.0, 0.1, 0.0, 0.0)).unwrap();
        assert_eq!(o.m.item(), 0.0);
    }

    #[test]
    fn lmm_shape_and_domain_errors() {
        let p = LinearLayerParams::unbiased(Tensor::zeros(2, 3), Tensor::zeros(2, 3)).unwrap();
        assert!(lmm(&MomentTensor::zeros(1, 2), &p).is_err());
        assert!(LinearLayerParams::unbiased(Tensor::zeros(2, 3), Tensor::zeros(3, 2)).is_err());
        assert!(LinearLayerParams::unbiased(Tensor::zeros(1, 1), Tensor::scalar(-1.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        /// Var(Wx + b) from raw second moments E[(Wx+b)²] − E[Wx+b]².
        #[test]
        fn lmm_matches_second_moment_expansion(
            w_m in -3.0f64..3.0, w_s in 0.0f64..2.0,
            a_m in -3.0f64..3.0, a_s in 0.0f64..2.0,
            b_m in -2.0f64..2.0, b_s in 0.0f64..1.0,
        ) {
            let o = lmm(&MomentTensor::scalar(a_m, a_s), &scalar_layer(w_m, w_s, b_m, b_s)).unwrap();
            let e_wx = w_m * a_m;
            let e_wx2 = (w_s + w_m * w_m) * (a_s + a_m * a_m);
            let e_y = e_wx + b_m;
            let e_y2 = e_wx2 + 2.0 * e_wx * b_m + b_s + b_m * b_m;
            let var = e_y2 - e_y * e_y;
            prop_assert!((o.m.item() - e_y).abs() <= 1e-10 * e_y.abs().max(1.0));
            prop_assert!((o.s.item() - var).abs() <= 1e-10 * var.abs().max(1.0));
        }

        #[test]
        fn sigmoid_mean_increasing(m in -8.0f64..8.0, dm in 1e-3f64..2.0, s in 0.0f64..10.0) {
            let k = k();
            prop_assert!(sigmoid_mean(m + dm, s, &k).value > sigmoid_mean(m, s, &k).value);
        }

        #[test]
        fn activation_ranges(m in -20.0f64..20.0, s in 0.0f64..50.0) {
            let k = k();
            let sm = sigmoid_mean(m, s, &k).value;
            prop_assert!(sm > 0.0 && sm < 1.0 || (m.abs() > 15.0));
            let tm = tanh_mean(m, s, &k).value;
            prop_assert!(tm > -1.0 && tm < 1.0 || (m.abs() > 8.0));
            prop_assert!(sigmoid_var(m, s, &k).0.value >= 0.0);
            prop_assert!(tanh_var(m, s, &k).0.value >= 0.0);
        }

        #[test]
        fn gaussian_nmm_partials_match_central_differences(m in -4.0f64..4.0, s in 0.05f64..5.0) {
            let k = k();
            let h = 1e-6;
            let check = |f: &dyn Fn(f64, f64) -> Partials| -> std::result::Result<(), TestCaseError> {
                let p = f(m, s);
                let dm = (f(m + h, s).value - f(m - h, s).value) / (2.0 * h);
                let ds = (f(m, s + h).value - f(m, s - h).value) / (2.0 * h);
                prop_assert!((p.d_m - dm).abs() <= 1e-6 + 1e-5 * dm.abs(), "d_m {} vs {}", p.d_m, dm);
                prop_assert!((p.d_s - ds).abs() <= 1e-6 + 1e-5 * ds.abs(), "d_s {} vs {}", p.d_s, ds);
                Ok(())
            };
            check(&|m, s| sigmoid_mean(m, s, &k))?;
            check(&|m, s| tanh_mean(m, s, &k))?;
            let (sv, _) = sigmoid_var(m, s, &k);
            if sv.value > 1e-4 {
                check(&|m, s| sigmoid_var(m, s, &k).0)?;
            }
            let (tv, _) = tanh_var(m, s, &k);
            if tv.value > 1e-4 {
                check(&|m, s| tanh_var(m, s, &k).0)?;
            }
        }
    }

    #[test]
    fn sigmoid_at_origin() {
        let k = k();
        assert_eq!(sigmoid_mean(0.0, 0.0, &k).value, 0.5);
        // the σ² ≈ σ(ν(x+ω)) residual at x = 0, just off the point mass
        let (v, clamped) = sigmoid_var(0.0, 1e-300, &k);
        assert!(!clamped);
        assert!((v.value - 0.0126).abs() < 5e-4, "{}", v.value);
        let (v, clamped) = sigmoid_var(0.0, 0.0, &k);
        assert!(!clamped);
        assert_eq!(v.value, 0.0);
        assert!((v.d_s - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_limit_is_plain_activation() {
        let k = k();
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            assert_eq!(sigmoid_mean(x, 0.0, &k).value, sigmoid(x));
            assert!((tanh_mean(x, 0.0, &k).value - f64::tanh(x)).abs() < 1e-15);
        }
        assert_eq!(tanh_mean(0.0, 0.0, &k).value, 0.0);
    }

    #[test]
    fn saturated_variance_clamps_to_zero() {
        let (v, clamped) = sigmoid_var(60.0, 1e-6, &k());
        assert!(clamped);
        assert_eq!(v.value, 0.0);
        assert_eq!((v.d_m, v.d_s), (0.0, 0.0));
    }

    #[test]
    fn clamp_counter_counts() {
        let o = MomentTensor::new(
            Tensor::row_vector(vec![60.0, 0.0, 45.0]),
            Tensor::filled(1, 3, 1e-9),
        )
        .unwrap();
        let mut stats = ClampStats::default();
        let a = nmm_sigmoid_gauss_counted(&o, &k(), &mut stats);
        assert_eq!(stats, ClampStats { clamped: 2, total: 3 });
        assert!(a.s.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gamma_closed_form_examples() {
        let (m, s) = saturating_gamma(1.0, 1.0, 1.0, 1.0);
        assert!((m - 0.5).abs() < 1e-15);
        assert!((s - 1.0 / 12.0).abs() < 1e-15);
        let (m, _) = saturating_gamma(2.0, 3.0, 1.0, 1.0);
        assert!((m - 0.4375).abs() < 1e-15);
        let (m, s) = saturating_gamma(2.0, 3.0, 1.0, 1e-12);
        assert!(m < 1e-11 && s < 1e-11);
    }

    #[test]
    fn gamma_from_natural_form() {
        let p = NaturalParams::gamma_shape_rate(1.0, 1.0).unwrap();
        let a = nmm_gamma(&p, &k()).unwrap();
        assert!((a.m.item() - 0.5).abs() < 1e-15);
        assert!(nmm_gamma(&NaturalParams::poisson(1.0).unwrap(), &k()).is_err());
    }

    /// Direct summation of the Poisson series as an independent route.
    fn poisson_series(lambda: f64, c: f64, gamma: f64) -> (f64, f64) {
        let (mut e1, mut e2) = (0.0, 0.0);
        let mut pmf = (-lambda).exp();
        for x in 0..400 {
            let f = c * (1.0 - (-gamma * x as f64).exp());
            e1 += f * pmf;
            e2 += f * f * pmf;
            pmf *= lambda / (x as f64 + 1.0);
        }
        (e1, e2 - e1 * e1)
    }

    #[test]
    fn poisson_closed_form_examples() {
        let (m, s) = saturating_poisson(1.0, 1.0, 1.0);
        assert!((m - (1.0 - ((-1.0f64).exp() - 1.0).exp())).abs() < 1e-15);
        assert!((m - 0.468_536).abs() < 1e-6);
        let (sm, ss) = poisson_series(1.0, 1.0, 1.0);
        assert!((m - sm).abs() < 1e-14 && (s - ss).abs() < 1e-14);
        let (m, s) = saturating_poisson(1e-12, 1.0, 1.0);
        assert!(m < 1e-11 && s < 1e-11);
        assert!(NaturalParams::poisson(0.0).is_err());
    }
}
