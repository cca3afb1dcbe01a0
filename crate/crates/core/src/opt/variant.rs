//! Optimizer variant selection and hyperparameter grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Adam,
    Sam,
    Asam,
    FisherSam,
    KSam,
    LookSam,
    FriendlySam,
    NoSam,
    Esam,
}

impl VariantKind {
    pub fn label(self) -> &'static str {
        match self {
            VariantKind::Adam => "Adam",
            VariantKind::Sam => "SAM",
            VariantKind::Asam => "ASAM",
            VariantKind::FisherSam => "FisherSAM",
            VariantKind::KSam => "K-SAM",
            VariantKind::LookSam => "LookSAM",
            VariantKind::FriendlySam => "FriendlySAM",
            VariantKind::NoSam => "NoSAM",
            VariantKind::Esam => "ESAM",
        }
    }

    pub fn all() -> [VariantKind; 9] {
        [
            VariantKind::Adam,
            VariantKind::Sam,
            VariantKind::Asam,
            VariantKind::FisherSam,
            VariantKind::KSam,
            VariantKind::LookSam,
            VariantKind::FriendlySam,
            VariantKind::NoSam,
            VariantKind::Esam,
        ]
    }
}

/// One optimizer choice with its hyperparameters. Optional fields fall back
/// to the defaults recommended for the variant; fields irrelevant to the
/// selected kind are flagged as warnings by [`VariantSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    /// Perturbation radius rho >= 0. Ignored (treated as 0) for Adam.
    #[serde(default)]
    pub rho: f64,
    /// FisherSAM damping coefficient eta.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// K-SAM sample count; defaults to half the batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// LookSAM refresh period L.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
    /// LookSAM reuse scale alpha.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// FriendlySAM projection coefficient sigma.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// FriendlySAM EMA momentum phi in [0,1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// ESAM selection fraction gamma in (0,1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// ESAM coordinate inclusion probability xi in (0,1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
}

impl VariantSpec {
    pub fn new(kind: VariantKind, rho: f64) -> Self {
        VariantSpec {
            kind,
            rho,
            eta: None,
            k: None,
            period: None,
            alpha: None,
            sigma: None,
            phi: None,
            gamma: None,
            xi: None,
        }
    }

    /// Radius actually used by the step: Adam always runs at 0, and any
    /// variant at rho = 0 degrades to the plain Adam step.
    pub fn effective_rho(&self) -> f64 {
        if self.kind == VariantKind::Adam {
            0.0
        } else {
            self.rho
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(1.0)
    }

    pub fn k_top(&self, batch: usize) -> usize {
        self.k.unwrap_or((batch / 2).max(1))
    }

    pub fn period(&self) -> u64 {
        self.period.unwrap_or(5)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.5)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(1.0)
    }

    pub fn phi(&self) -> f64 {
        self.phi.unwrap_or(0.9)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(0.5)
    }

    pub fn xi(&self) -> f64 {
        self.xi.unwrap_or(0.5)
    }

    /// Check value ranges and collect present-but-unused field warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(Error::InvalidParam(format!("rho {} must be >= 0", self.rho)));
        }
        if let Some(eta) = self.eta {
            if eta < 0.0 || !eta.is_finite() {
                return Err(Error::InvalidParam(format!("eta {eta} must be >= 0")));
            }
        }
        if let Some(k) = self.k {
            if k == 0 {
                return Err(Error::InvalidParam("k must be >= 1".into()));
            }
        }
        if self.period == Some(0) {
            return Err(Error::InvalidParam("period must be >= 1".into()));
        }
        if let Some(phi) = self.phi {
            if !(0.0..1.0).contains(&phi) {
                return Err(Error::InvalidParam(format!("phi {phi} outside [0,1)")));
            }
        }
        if let Some(gamma) = self.gamma {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::InvalidParam(format!("gamma {gamma} outside (0,1]")));
            }
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0 && xi <= 1.0) {
                return Err(Error::InvalidParam(format!("xi {xi} outside (0,1]")));
            }
        }

        let mut warnings = Vec::new();
        let mut warn_unused = |set: bool, field: &str| {
            if set {
                warnings.push(format!(
                    "{field} is set but unused by {}",
                    self.kind.label()
                ));
            }
        };
        let k = self.kind;
        warn_unused(k == VariantKind::Adam && self.rho != 0.0, "rho");
        warn_unused(k != VariantKind::FisherSam && self.eta.is_some(), "eta");
        warn_unused(k != VariantKind::KSam && self.k.is_some(), "k");
        warn_unused(k != VariantKind::LookSam && self.period.is_some(), "period");
        warn_unused(k != VariantKind::LookSam && self.alpha.is_some(), "alpha");
        warn_unused(k != VariantKind::FriendlySam && self.sigma.is_some(), "sigma");
        warn_unused(k != VariantKind::FriendlySam && self.phi.is_some(), "phi");
        warn_unused(k != VariantKind::Esam && self.gamma.is_some(), "gamma");
        warn_unused(k != VariantKind::Esam && self.xi.is_some(), "xi");
        Ok(warnings)
    }
}

/// Default hyperparameter grids for sweeps, one entry per grid point.
pub mod grids {
    use super::{VariantKind, VariantSpec};

    pub const RHO: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.2];
    /// ASAM runs at roughly 10x the SAM radii.
    pub const RHO_ASAM: [f64; 5] = [0.1, 0.2, 0.5, 1.0, 2.0];
    pub const FISHER_ETA: [f64; 4] = [0.01, 0.2, 0.5, 1.0];
    pub const LOOKSAM_ALPHA: [f64; 3] = [0.5, 0.7, 0.1];
    pub const FRIENDLY_PHI: [f64; 3] = [0.6, 0.9, 0.95];
    pub const ESAM_XI: [f64; 2] = [0.5, 0.6];
    pub const LOOKSAM_PERIOD: u64 = 5;
    pub const FRIENDLY_SIGMA: f64 = 1.0;
    pub const ESAM_GAMMA: f64 = 0.5;

    /// Grid of specs for one variant kind.
    pub fn for_kind(kind: VariantKind) -> Vec<VariantSpec> {
        let mut out = Vec::new();
        match kind {
            VariantKind::Adam => out.push(VariantSpec::new(kind, 0.0)),
            VariantKind::Sam | VariantKind::NoSam => {
                for &rho in &RHO {
                    out.push(VariantSpec::new(kind, rho));
                }
            }
            VariantKind::Asam => {
                for &rho in &RHO_ASAM {
                    out.push(VariantSpec::new(kind, rho));
                }
            }
            VariantKind::FisherSam => {
                for &rho in &RHO {
                    for &eta in &FISHER_ETA {
                        let mut s = VariantSpec::new(kind, rho);
                        s.eta = Some(eta);
                        out.push(s);
                    }
                }
            }
            VariantKind::KSam => {
                for &rho in &RHO {
                    out.push(VariantSpec::new(kind, rho)); // k defaults to B/2
                }
            }
            VariantKind::LookSam => {
                for &rho in &RHO {
                    for &alpha in &LOOKSAM_ALPHA {
                        let mut s = VariantSpec::new(kind, rho);
                        s.period = Some(LOOKSAM_PERIOD);
                        s.alpha = Some(alpha);
                        out.push(s);
                    }
                }
            }
            VariantKind::FriendlySam => {
                for &rho in &RHO {
                    for &phi in &FRIENDLY_PHI {
                        let mut s = VariantSpec::new(kind, rho);
                        s.sigma = Some(FRIENDLY_SIGMA);
                        s.phi = Some(phi);
                        out.push(s);
                    }
                }
            }
            VariantKind::Esam => {
                for &rho in &RHO {
                    for &xi in &ESAM_XI {
                        let mut s = VariantSpec::new(kind, rho);
                        s.gamma = Some(ESAM_GAMMA);
                        s.xi = Some(xi);
                        out.push(s);
                    }
                }
            }
        }
        out
    }
}
