//! Exponential families in natural form and their moment parametrization.
//!
//! | family   | natural (α, β)        | mean m        | variance s     |
//! |----------|-----------------------|---------------|----------------|
//! | Gaussian | β < 0                 | −α/β          | −1/β           |
//! | Gamma    | α > −1, β < 0         | −(α+1)/β      | (α+1)/β²       |
//! | Poisson  | α = λ > 0, β unused   | λ             | λ              |
//!
//! For Gamma the conventional shape is `α + 1` and the rate is `−β`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Floor applied to variances on conversion.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// β value stored for Poisson parameters. Never read.
pub const POISSON_BETA_SENTINEL: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Gamma,
    Poisson,
}

impl Family {
    pub fn code(self) -> u8 {
        match self {
            Family::Gaussian => 0,
            Family::Gamma => 1,
            Family::Poisson => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Family::Gaussian),
            1 => Some(Family::Gamma),
            2 => Some(Family::Poisson),
            _ => None,
        }
    }

    fn check(self, index: usize, alpha: f64, beta: f64) -> Result<()> {
        let violation = |value, detail| {
            Err(Error::Domain {
                index,
                value,
                detail,
            })
        };
        match self {
            Family::Gaussian if !(beta < 0.0) => violation(beta, "Gaussian requires beta < 0"),
            Family::Gamma if !(alpha > -1.0) => violation(alpha, "Gamma requires alpha > -1"),
            Family::Gamma if !(beta < 0.0) => violation(beta, "Gamma requires beta < 0"),
            Family::Poisson if !(alpha > 0.0) => {
                violation(alpha, "Poisson requires lambda = alpha > 0")
            }
            _ => Ok(()),
        }
    }
}

/// Paired mean/variance arrays describing a factorized random tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTensor {
    pub m: Tensor,
    pub s: Tensor,
}

impl MomentTensor {
    pub fn new(m: Tensor, s: Tensor) -> Result<Self> {
        if m.shape() != s.shape() {
            return shape_err(
                "MomentTensor::new",
                format!("mean {:?} vs variance {:?}", m.shape(), s.shape()),
            );
        }
        let mut s = s;
        clamp_variance(&mut s);
        Ok(Self { m, s })
    }

    /// Point masses at `m`.
    pub fn deterministic(m: Tensor) -> Self {
        let s = Tensor::zeros(m.rows(), m.cols());
        Self { m, s }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::deterministic(Tensor::zeros(rows, cols))
    }

    pub fn scalar(m: f64, s: f64) -> Self {
        Self {
            m: Tensor::scalar(m),
            s: Tensor::scalar(s.max(0.0)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }
}

/// Negative (or NaN) variances become 0.
pub(crate) fn clamp_variance(s: &mut Tensor) {
    s.map_inplace(|v| if v >= 0.0 { v } else { 0.0 });
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaturalParams {
    family: Family,
    alpha: Tensor,
    beta: Tensor,
}

impl NaturalParams {
    pub fn new(family: Family, alpha: Tensor, beta: Tensor) -> Result<Self> {
        if alpha.shape() != beta.shape() {
            return shape_err(
                "NaturalParams::new",
                format!("alpha {:?} vs beta {:?}", alpha.shape(), beta.shape()),
            );
        }
        for (i, (&a, &b)) in alpha.data().iter().zip(beta.data()).enumerate() {
            family.check(i, a, b)?;
        }
        Ok(Self {
            family,
            alpha,
            beta,
        })
    }

    pub fn scalar(family: Family, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(family, Tensor::scalar(alpha), Tensor::scalar(beta))
    }

    /// Gaussian parameters from mean and variance (variance must be positive).
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        from_moments(&MomentTensor::scalar(mean, variance), Family::Gaussian)
    }

    /// Gamma parameters from conventional shape and rate.
    pub fn gamma_shape_rate(shape: f64, rate: f64) -> Result<Self> {
        Self::scalar(Family::Gamma, shape - 1.0, -rate)
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        Self::scalar(Family::Poisson, lambda, POISSON_BETA_SENTINEL)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }

    pub fn beta(&self) -> &Tensor {
        &self.beta
    }

    pub fn shape(&self) -> (usize, usize) {
        self.alpha.shape()
    }
}

pub fn to_moments(p: &NaturalParams) -> Result<MomentTensor> {
    let (rows, cols) = p.shape();
    let mut m = Vec::with_capacity(rows * cols);
    let mut s = Vec::with_capacity(rows * cols);
    for (i, (&a, &b)) in p.alpha.data().iter().zip(p.beta.data()).enumerate() {
        p.family.check(i, a, b)?;
        let (mi, si) = match p.family {
            Family::Gaussian => (-a / b, -1.0 / b),
            Family::Gamma => (-(a + 1.0) / b, (a + 1.0) / (b * b)),
            Family::Poisson => (a, a),
        };
        m.push(mi);
        s.push(si.max(VARIANCE_FLOOR));
    }
    MomentTensor::new(Tensor::from_vec(rows, cols, m)?, Tensor::from_vec(rows, cols, s)?)
}

pub fn from_moments(t: &MomentTensor, family: Family) -> Result<NaturalParams> {
    let (rows, cols) = t.shape();
    let mut alpha = Vec::with_capacity(rows * cols);
    let mut beta = Vec::with_capacity(rows * cols);
    for (i, (&m, &s)) in t.m.data().iter().zip(t.s.data()).enumerate() {
        let domain = |value, detail| Error::Domain {
            index: i,
            value,
            detail,
        };
        let (a, b) = match family {
            Family::Gaussian => {
                if !(s > 0.0) {
                    return Err(domain(s, "Gaussian inversion requires variance > 0"));
                }
                let s = s.max(VARIANCE_FLOOR);
                (m / s, -1.0 / s)
            }
            Family::Gamma => {
                if !(m > 0.0) {
                    return Err(domain(m, "Gamma inversion requires mean > 0"));
                }
                if !(s > 0.0) {
                    return Err(domain(s, "Gamma inversion requires variance > 0"));
                }
                let s = s.max(VARIANCE_FLOOR);
                // shape = m²/s, rate = m/s
                (m * m / s - 1.0, -m / s)
            }
            Family::Poisson => {
                if !(m > 0.0) {
                    return Err(domain(m, "Poisson inversion requires mean > 0"));
                }
                (m, POISSON_BETA_SENTINEL)
            }
        };
        alpha.push(a);
        beta.push(b);
    }
    NaturalParams::new(
        family,
        Tensor::from_vec(rows, cols, alpha)?,
        Tensor::from_vec(rows, cols, beta)?,
    )
}

/// `n` i.i.d. draws per element, returned as an `n x numel` tensor.
pub fn sample(p: &NaturalParams, n: usize, rng_seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let numel = p.alpha.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Tensor::zeros(n, numel);
    for (j, (&a, &b)) in p.alpha.data().iter().zip(p.beta.data()).enumerate() {
        p.family.check(j, a, b)?;
        let mut column = |draw: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
            for r in 0..n {
                let v = draw(&mut rng);
                out.set(r, j, v);
            }
        };
        match p.family {
            Family::Gaussian => {
                let d = Normal::new(-a / b, (-1.0 / b).sqrt()).expect("validated");
                column(&mut |rng| d.sample(rng));
            }
            Family::Gamma => {
                let d = Gamma::new(a + 1.0, -1.0 / b).expect("validated");
                column(&mut |rng| d.sample(rng));
            }
            Family::Poisson => {
                let d = Poisson::new(a).expect("validated");
                column(&mut |rng| d.sample(rng));
            }
        }
    }
    Ok(out)
}
