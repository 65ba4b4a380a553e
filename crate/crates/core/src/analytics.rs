//! Fidelity bounds, GME thresholds and verdicts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::{theta_cheat_pass_curve, xy_cheat_pass_curve};
use crate::error::{Error, Result};
use crate::protocol::{PassStats, ProtocolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrustModel {
    AllHonest,
    DishonestAllowed,
}

impl fmt::Display for TrustModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustModel::AllHonest => "all-honest",
            TrustModel::DishonestAllowed => "dishonest-allowed",
        })
    }
}

impl FromStr for TrustModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-honest" | "honest" => Ok(TrustModel::AllHonest),
            "dishonest-allowed" | "dishonest" => Ok(TrustModel::DishonestAllowed),
            _ => Err(Error::UnknownKey(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "GME-VERIFIED")]
    GmeVerified,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::GmeVerified => "GME-VERIFIED",
            Decision::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    /// `(estimate − threshold)/stderr`; infinite when the stderr is 0 (serialized as null).
    pub margin: f64,
    pub threshold: f64,
    pub sigma: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub protocol: ProtocolKind,
    pub trust: TrustModel,
    pub lambda: f64,
}

/// `F ≥ 2P − 1`.
pub fn honest_fidelity_bound(p: f64) -> f64 {
    2.0 * p - 1.0
}

/// `F′ ≥ 4P − 3`.
pub fn dishonest_fidelity_bound(p: f64) -> f64 {
    4.0 * p - 3.0
}

pub const HONEST_THRESHOLD: f64 = 0.75;

pub fn gme_threshold(kind: ProtocolKind, trust: TrustModel, lambda: f64) -> Result<f64> {
    match (trust, kind) {
        (TrustModel::AllHonest, _) => {
            if !(0.0..1.0).contains(&lambda) {
                return Err(Error::Range(format!("λ = {lambda} outside [0, 1)")));
            }
            Ok(HONEST_THRESHOLD)
        }
        (TrustModel::DishonestAllowed, ProtocolKind::Theta) => theta_cheat_pass_curve(lambda),
        (TrustModel::DishonestAllowed, ProtocolKind::Xy) => xy_cheat_pass_curve(lambda),
    }
}

/// GME-VERIFIED iff `estimate > threshold + sigma·stderr`.
pub fn verdict(
    stats: &PassStats,
    kind: ProtocolKind,
    trust: TrustModel,
    lambda: f64,
    sigma: f64,
) -> Result<Verdict> {
    if stats.valid_rounds == 0 {
        return Err(Error::UndefinedEstimate);
    }
    verdict_from_estimate(stats.estimate, stats.stderr, kind, trust, lambda, sigma)
}

pub fn verdict_from_estimate(
    estimate: f64,
    stderr: f64,
    kind: ProtocolKind,
    trust: TrustModel,
    lambda: f64,
    sigma: f64,
) -> Result<Verdict> {
    if !(stderr >= 0.0) || !(sigma >= 0.0) {
        return Err(Error::Range("stderr and sigma must be nonnegative".into()));
    }
    let threshold = gme_threshold(kind, trust, lambda)?;
    let diff = estimate - threshold;
    let margin = if stderr > 0.0 {
        diff / stderr
    } else if diff > 0.0 {
        f64::INFINITY
    } else if diff < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let decision = if estimate > threshold + sigma * stderr {
        Decision::GmeVerified
    } else {
        Decision::Inconclusive
    };
    Ok(Verdict {
        decision,
        margin,
        threshold,
        sigma,
        estimate,
        stderr,
        protocol: kind,
        trust,
        lambda,
    })
}

/// Largest λ with `gme_threshold(kind, trust, λ) ≤ p_obs`, by bisection.
///
/// Under all-honest trust the threshold does not depend on λ and the result is 1.
pub fn max_tolerable_loss(p_obs: f64, kind: ProtocolKind, trust: TrustModel) -> Result<f64> {
    let t0 = gme_threshold(kind, trust, 0.0)?;
    if !(p_obs >= t0) {
        return Err(Error::BelowThreshold {
            observed: p_obs,
            threshold: t0,
        });
    }
    let hi = match (trust, kind) {
        (TrustModel::AllHonest, _) => return Ok(1.0),
        (_, ProtocolKind::Xy) => 0.5,
        (_, ProtocolKind::Theta) => 1.0 - 1e-12,
    };
    if gme_threshold(kind, trust, hi)? <= p_obs {
        return Ok(hi);
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if gme_threshold(kind, trust, mid)? <= p_obs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
