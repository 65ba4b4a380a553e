//! Resource states the (possibly untrusted) source distributes.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::KeyParams;
use crate::qstate::{
    apply_channel, ghz_state, ChannelSpec, DensityMatrix, PureState, MAX_DENSITY_QUBITS,
};

/// Noise family used when calibrating a GHZ state to a target fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Dephased,
    Depolarized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum SourceModel {
    IdealGhz { n: usize },
    DephasedGhz { n: usize, p: f64 },
    DepolarizedGhz { n: usize, v: f64 },
    /// `GHZ_{n−1} ⊗ |+⟩`, the unentangled qubit on party `n − 1`.
    BiseparableGhzPlus { n: usize },
    /// `(|00⟩ + e^{iθ′}|11⟩)/√2 ⊗ |+⟩^{⊗(n−2)}`.
    RotatedBellPlus { n: usize, theta: f64 },
    /// Dephased or depolarized GHZ matched to the higher-order-emission fidelity.
    HigherOrderCalibrated {
        n: usize,
        alpha: f64,
        family: NoiseFamily,
    },
}

/// Source identifiers accepted by [`SourceModel::parse`].
pub const SOURCE_KEYS: &[&str] = &[
    "ideal-ghz",
    "dephased-ghz:p=<p>|fidelity=<F>",
    "depolarized-ghz:v=<v>|fidelity=<F>|pass=<P>",
    "biseparable-ghz-plus",
    "rotated-bell-plus:theta=<θ′>",
    "higher-order-calibrated:alpha=<α>|nbar=<n̄>[,family=dephased|depolarized]",
];

impl SourceModel {
    pub fn n(&self) -> usize {
        match *self {
            SourceModel::IdealGhz { n }
            | SourceModel::DephasedGhz { n, .. }
            | SourceModel::DepolarizedGhz { n, .. }
            | SourceModel::BiseparableGhzPlus { n }
            | SourceModel::RotatedBellPlus { n, .. }
            | SourceModel::HigherOrderCalibrated { n, .. } => n,
        }
    }

    /// Parses a source key for `n` parties, e.g. `dephased-ghz:p=0.4` or
    /// `depolarized-ghz:pass=0.834`.
    pub fn parse(key: &str, n: usize) -> Result<Self> {
        let mut p = KeyParams::parse(key)?;
        let model = match p.name.as_str() {
            "ideal-ghz" => SourceModel::IdealGhz { n },
            "dephased-ghz" => match (p.take_f64("p")?, p.take_f64("fidelity")?) {
                (Some(pv), None) => SourceModel::DephasedGhz { n, p: pv },
                (None, Some(f)) => calibrate_to_fidelity(n, f, NoiseFamily::Dephased)?,
                _ => return Err(Error::InvalidInput("dephased-ghz needs exactly one of p, fidelity".into())),
            },
            "depolarized-ghz" => {
                match (p.take_f64("v")?, p.take_f64("fidelity")?, p.take_f64("pass")?) {
                    (Some(v), None, None) => SourceModel::DepolarizedGhz { n, v },
                    (None, Some(f), None) => calibrate_to_fidelity(n, f, NoiseFamily::Depolarized)?,
                    (None, None, Some(pass)) => calibrate_to_pass_probability(n, pass)?,
                    _ => {
                        return Err(Error::InvalidInput(
                            "depolarized-ghz needs exactly one of v, fidelity, pass".into(),
                        ))
                    }
                }
            }
            "biseparable-ghz-plus" => SourceModel::BiseparableGhzPlus { n },
            "rotated-bell-plus" => SourceModel::RotatedBellPlus {
                n,
                theta: p.take_f64("theta")?.unwrap_or(PI / 4.0),
            },
            "higher-order-calibrated" => {
                let alpha = match (p.take_f64("alpha")?, p.take_f64("nbar")?) {
                    (Some(a), None) => a,
                    (None, Some(nbar)) => alpha_from_mean_pairs(nbar)?,
                    (None, None) => alpha_from_mean_pairs(0.05)?,
                    _ => return Err(Error::InvalidInput("give alpha or nbar, not both".into())),
                };
                let family = match p.take_str("family").as_deref() {
                    None | Some("dephased") => NoiseFamily::Dephased,
                    Some("depolarized") => NoiseFamily::Depolarized,
                    Some(o) => return Err(Error::InvalidInput(format!("unknown family '{o}'"))),
                };
                SourceModel::HigherOrderCalibrated { n, alpha, family }
            }
            _ => return Err(Error::UnknownKey(key.to_string())),
        };
        p.finish()?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let min_n = match self {
            SourceModel::BiseparableGhzPlus { .. } | SourceModel::RotatedBellPlus { .. } => 2,
            _ => 1,
        };
        if n < min_n || n > MAX_DENSITY_QUBITS {
            return Err(Error::Range(format!("{n} parties outside {min_n}..={MAX_DENSITY_QUBITS}")));
        }
        match *self {
            SourceModel::DephasedGhz { p, .. } => ChannelSpec::GhzDephasing { p }.validate(),
            SourceModel::DepolarizedGhz { v, .. } => ChannelSpec::Depolarizing { v }.validate(),
            SourceModel::RotatedBellPlus { theta, .. } if !theta.is_finite() => {
                Err(Error::Range("θ′ must be finite".into()))
            }
            SourceModel::HigherOrderCalibrated { n, alpha, .. } => {
                higher_order_fidelity(n, alpha).map(|_| ())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SourceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SourceModel::IdealGhz { .. } => write!(f, "ideal-ghz"),
            SourceModel::DephasedGhz { p, .. } => write!(f, "dephased-ghz:p={p}"),
            SourceModel::DepolarizedGhz { v, .. } => write!(f, "depolarized-ghz:v={v}"),
            SourceModel::BiseparableGhzPlus { .. } => write!(f, "biseparable-ghz-plus"),
            SourceModel::RotatedBellPlus { theta, .. } => write!(f, "rotated-bell-plus:theta={theta}"),
            SourceModel::HigherOrderCalibrated { alpha, family, .. } => write!(
                f,
                "higher-order-calibrated:alpha={alpha},family={}",
                match family {
                    NoiseFamily::Dephased => "dephased",
                    NoiseFamily::Depolarized => "depolarized",
                }
            ),
        }
    }
}

pub fn prepare(model: &SourceModel) -> Result<DensityMatrix> {
    model.validate()?;
    let ghz = |n| ghz_state(n, 0.0)?.to_density();
    match *model {
        SourceModel::IdealGhz { n } => ghz(n),
        SourceModel::DephasedGhz { n, p } => apply_channel(&ghz(n)?, &ChannelSpec::GhzDephasing { p }),
        SourceModel::DepolarizedGhz { n, v } => apply_channel(&ghz(n)?, &ChannelSpec::Depolarizing { v }),
        SourceModel::BiseparableGhzPlus { n } => {
            ghz_state(n - 1, 0.0)?.tensor(&PureState::plus())?.to_density()
        }
        SourceModel::RotatedBellPlus { n, theta } => {
            let mut psi = ghz_state(2, theta)?;
            for _ in 2..n {
                psi = psi.tensor(&PureState::plus())?;
            }
            psi.to_density()
        }
        SourceModel::HigherOrderCalibrated { n, alpha, family } => {
            prepare(&calibrate_to_fidelity(n, higher_order_fidelity(n, alpha)?, family)?)
        }
    }
}

/// Pump setting of a down-conversion source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpParams {
    pub mean_pairs: f64,
    pub alpha: f64,
}

impl PumpParams {
    pub fn from_mean_pairs(mean_pairs: f64) -> Result<Self> {
        Ok(Self {
            mean_pairs,
            alpha: alpha_from_mean_pairs(mean_pairs)?,
        })
    }
}

/// `α = √(n̄/(n̄+1))`.
pub fn alpha_from_mean_pairs(mean_pairs: f64) -> Result<f64> {
    if !(mean_pairs >= 0.0) || !mean_pairs.is_finite() {
        return Err(Error::Range(format!("mean pair number {mean_pairs} must be ≥ 0")));
    }
    Ok((mean_pairs / (mean_pairs + 1.0)).sqrt())
}

/// GHZ fidelity after postselection with `α³` emission terms kept.
///
/// n = 4: `2α⁴/(2α⁴ + 5α⁶) = 2/(2 + 5α²)`; n = 3: `α⁴/(α⁴ + 11α⁶/4) = 1/(1 + 11α²/4)`.
pub fn higher_order_fidelity(n: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Range(format!("α = {alpha} outside (0, 1)")));
    }
    let a2 = alpha * alpha;
    match n {
        4 => Ok(2.0 / (2.0 + 5.0 * a2)),
        3 => Ok(1.0 / (1.0 + 2.75 * a2)),
        _ => Err(Error::Range(format!("higher-order model defined for n = 3, 4, not {n}"))),
    }
}

/// Noisy GHZ with fidelity `f`: dephased `p = 2(1−F)`, depolarized `v = (F − 2^{−n})/(1 − 2^{−n})`.
pub fn calibrate_to_fidelity(n: usize, f: f64, family: NoiseFamily) -> Result<SourceModel> {
    if n == 0 || n > MAX_DENSITY_QUBITS {
        return Err(Error::Range(format!("{n} parties outside 1..={MAX_DENSITY_QUBITS}")));
    }
    let floor = 0.5f64.powi(n as i32);
    match family {
        NoiseFamily::Dephased => {
            if !(0.5..=1.0).contains(&f) {
                return Err(Error::Range(format!("dephasing reaches F ∈ [1/2, 1], not {f}")));
            }
            Ok(SourceModel::DephasedGhz { n, p: 2.0 * (1.0 - f) })
        }
        NoiseFamily::Depolarized => {
            if !(floor..=1.0).contains(&f) {
                return Err(Error::Range(format!("depolarizing reaches F ∈ [2^-n, 1], not {f}")));
            }
            Ok(SourceModel::DepolarizedGhz {
                n,
                v: (f - floor) / (1.0 - floor),
            })
        }
    }
}

/// Depolarized GHZ whose pass probability (either protocol) is `pass = ½ + v/2`.
pub fn calibrate_to_pass_probability(n: usize, pass: f64) -> Result<SourceModel> {
    if !(0.5..=1.0).contains(&pass) {
        return Err(Error::Range(format!("pass probability {pass} outside [1/2, 1]")));
    }
    Ok(SourceModel::DepolarizedGhz {
        n,
        v: 2.0 * pass - 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{best_dishonest_fidelity, cos2_pi_8, xy_guesser_pass_probability, Coalition};
    use crate::protocol::{exact_pass_probability_theta, exact_pass_probability_xy};
    use crate::qstate::fidelity;

    fn f_ghz(rho: &DensityMatrix) -> f64 {
        rho.overlap_with_pure(&ghz_state(rho.num_qubits(), 0.0).unwrap()).unwrap()
    }

    #[test]
    fn prepare_examples() {
        let g = prepare(&SourceModel::parse("ideal-ghz", 3).unwrap()).unwrap();
        assert!((f_ghz(&g) - 1.0).abs() < 1e-12);

        let b = prepare(&SourceModel::parse("biseparable-ghz-plus", 4).unwrap()).unwrap();
        let c = Coalition::new(4, &[3], 0).unwrap();
        assert!((best_dishonest_fidelity(&b, &c).unwrap() - 0.5).abs() < 1e-9);

        let r = prepare(&SourceModel::parse("rotated-bell-plus:theta=pi/4", 3).unwrap()).unwrap();
        let c = Coalition::new(3, &[2], 0).unwrap();
        let p = xy_guesser_pass_probability(&r, &c, PI / 4.0).unwrap();
        assert!((p - cos2_pi_8()).abs() < 1e-12);
    }

    #[test]
    fn every_model_is_valid() {
        for (key, n) in [
            ("ideal-ghz", 5),
            ("dephased-ghz:p=0.3", 3),
            ("dephased-ghz:fidelity=0.8", 3),
            ("depolarized-ghz:v=0.5", 4),
            ("depolarized-ghz:pass=0.834", 3),
            ("biseparable-ghz-plus", 2),
            ("biseparable-ghz-plus", 5),
            ("rotated-bell-plus:theta=1.1", 4),
            ("higher-order-calibrated:nbar=0.05", 4),
            ("higher-order-calibrated:alpha=0.3,family=depolarized", 3),
        ] {
            let m = SourceModel::parse(key, n).unwrap();
            prepare(&m).unwrap().validate().unwrap();
        }
        assert!(SourceModel::parse("dephased-ghz:p=1.5", 3).is_err());
        assert!(SourceModel::parse("higher-order-calibrated", 5).is_err());
        assert!(SourceModel::parse("dephased-ghz", 3).is_err());
        assert!(SourceModel::parse("mystery", 3).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_from_mean_pairs(0.0).unwrap(), 0.0);
        assert!((alpha_from_mean_pairs(0.05).unwrap() - 0.218).abs() < 5e-4);
        assert!((alpha_from_mean_pairs(1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(alpha_from_mean_pairs(-0.1).is_err());
    }

    #[test]
    fn higher_order_examples() {
        assert!((higher_order_fidelity(4, 0.22).unwrap() - 0.89).abs() < 0.005);
        assert!((higher_order_fidelity(3, 0.22).unwrap() - 0.88).abs() < 0.005);
        assert!((higher_order_fidelity(4, 1e-9).unwrap() - 1.0).abs() < 1e-12);
        assert!(higher_order_fidelity(5, 0.2).is_err());
        assert!(higher_order_fidelity(3, 1.0).is_err());
        // Unsimplified forms.
        let a: f64 = 0.3;
        let f4 = 2.0 * a.powi(4) / (2.0 * a.powi(4) + 5.0 * a.powi(6));
        let f3 = a.powi(4) / (a.powi(4) + 2.75 * a.powi(6));
        assert!((higher_order_fidelity(4, a).unwrap() - f4).abs() < 1e-14);
        assert!((higher_order_fidelity(3, a).unwrap() - f3).abs() < 1e-14);
    }

    #[test]
    fn calibration_examples() {
        let m = calibrate_to_fidelity(3, 1.0, NoiseFamily::Dephased).unwrap();
        assert_eq!(m, SourceModel::DephasedGhz { n: 3, p: 0.0 });
        let m = calibrate_to_fidelity(3, 0.80, NoiseFamily::Dephased).unwrap();
        match m {
            SourceModel::DephasedGhz { p, .. } => assert!((p - 0.4).abs() < 1e-12),
            _ => unreachable!(),
        }
        let rho = prepare(&m).unwrap();
        let ghz = ghz_state(3, 0.0).unwrap().to_density().unwrap();
        assert!((fidelity(&rho, &ghz).unwrap() - 0.80).abs() < 1e-9);

        let m = calibrate_to_fidelity(4, 0.70, NoiseFamily::Depolarized).unwrap();
        match m {
            SourceModel::DepolarizedGhz { v, .. } => assert!((v - 0.68).abs() < 1e-12),
            _ => unreachable!(),
        }
        assert!((f_ghz(&prepare(&m).unwrap()) - 0.70).abs() < 1e-9);
        assert!(calibrate_to_fidelity(3, 0.4, NoiseFamily::Dephased).is_err());
        assert!(calibrate_to_fidelity(3, 0.1, NoiseFamily::Depolarized).is_err());
    }

    #[test]
    fn pass_calibration_is_exact_for_both_protocols() {
        let rho = prepare(&calibrate_to_pass_probability(3, 0.834).unwrap()).unwrap();
        assert!((exact_pass_probability_theta(&rho).unwrap() - 0.834).abs() < 1e-12);
        assert!((exact_pass_probability_xy(&rho).unwrap() - 0.834).abs() < 1e-12);
    }
}
