use crate::error::{Error, Result};
use crate::moments::{NmmConstants, OmegaVariant};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NetworkMode {
    /// Reconstruct the observed frames in reverse order.
    Autoencoder,
    /// Predict the frames that follow the observed ones.
    #[default]
    Predictor,
    /// Both heads off one encoder; the loss is their sum.
    Composite,
}

/// How the new state's variance combines the update gate with the candidate
/// and the previous state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CellVarianceRule {
    /// `h_s = (1 − z_m)² ĉ_s + z_m² h_s`, plus the update-gate variance terms
    /// when the gate product rule is `FullIndependent`.
    #[default]
    Corrected,
    /// `h_s = (1 − z_s)² ĉ_m + z_s² h_s`, clamped at zero. Kept for
    /// comparison only; it mixes a mean into a variance.
    Table1Literal,
}

/// Moment rule for the elementwise products of a gate with a state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateProductRule {
    /// Exact for independent factors: `s = u_s v_s + u_s v_m² + u_m² v_s`.
    #[default]
    FullIndependent,
    /// Gate treated as its mean: `s = u_m² v_s`.
    PaperSimplified,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    /// Binary cross-entropy of the mean channel, summed over pixels and
    /// averaged per image per frame.
    #[default]
    BceMean,
    /// Gaussian negative log-likelihood of both channels, same averaging.
    GaussianNll,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub mode: NetworkMode,
    pub input_len: usize,
    pub output_len: usize,
    pub hidden: usize,
    pub cell_variance_rule: CellVarianceRule,
    pub gate_product_rule: GateProductRule,
    pub loss: LossKind,
    pub omega: OmegaVariant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            mode: NetworkMode::Predictor,
            input_len: 10,
            output_len: 10,
            hidden: 128,
            cell_variance_rule: CellVarianceRule::Corrected,
            gate_product_rule: GateProductRule::FullIndependent,
            loss: LossKind::BceMean,
            omega: OmegaVariant::Main,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Config(format!(
                "input_len and output_len must be at least 1, got {} and {}",
                self.input_len, self.output_len
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        Ok(())
    }

    /// Frames a sequence must provide for this mode.
    pub fn required_frames(&self) -> usize {
        match self.mode {
            NetworkMode::Autoencoder => self.input_len,
            NetworkMode::Predictor | NetworkMode::Composite => self.input_len + self.output_len,
        }
    }

    pub fn rules(&self) -> StepRules {
        StepRules {
            cell_variance: self.cell_variance_rule,
            gate_product: self.gate_product_rule,
            nmm: NmmConstants::with_omega(self.omega),
        }
    }
}

/// Everything a single cell step needs besides parameters and data.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRules {
    pub cell_variance: CellVarianceRule,
    pub gate_product: GateProductRule,
    pub nmm: NmmConstants,
}
