//! Dishonest coalitions: Helstrom guessing analysis, the best-local-operation
//! fidelity `F′`, the loss-dependent cheating curves, and concrete strategies.
//!
//! Every strategy here is a guessing strategy against a honest share of the form
//! `(|0^k⟩ + e^{iφ}|1^k⟩)/√2`. With the dishonest angles summing to `θ_D`, the
//! honest parity has correlator `(−1)^m cos(φ + θ_D)`, so answering
//! `Y_D = [cos(φ + θ_D) < 0]` passes with probability `½ + ½|cos(φ + θ_D)|`
//! whatever the parity `m` is. Losses are declared on a half-open arc of width
//! `λπ` around the zero of that cosine.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::params::KeyParams;
use crate::protocol::{CoalitionPolicy, Outcome, ProtocolKind, SideInfo};
use crate::qstate::{
    fidelity, gather, ghz_state, partial_trace, scatter, DensityMatrix, PureState, C64,
};

/// A split of the parties into dishonest `D` and honest `H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalition {
    n: usize,
    dishonest: Vec<usize>,
    honest: Vec<usize>,
}

impl Coalition {
    /// `verifier` must be honest.
    pub fn new(n: usize, dishonest: &[usize], verifier: usize) -> Result<Self> {
        let mut d = dishonest.to_vec();
        d.sort_unstable();
        d.dedup();
        if d.len() != dishonest.len() {
            return Err(Error::InvalidInput("duplicate dishonest party".into()));
        }
        if let Some(&j) = d.iter().find(|&&j| j >= n) {
            return Err(Error::Range(format!("party {j} outside 0..{n}")));
        }
        if verifier >= n || d.contains(&verifier) {
            return Err(Error::InvalidInput(format!(
                "verifier {verifier} must be an honest party"
            )));
        }
        let honest = (0..n).filter(|j| !d.contains(j)).collect();
        Ok(Self {
            n,
            dishonest: d,
            honest,
        })
    }

    /// The single dishonest party `n − 1`, Verifier 0.
    pub fn last_party(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Range("need at least 2 parties".into()));
        }
        Self::new(n, &[n - 1], 0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dishonest(&self) -> &[usize] {
        &self.dishonest
    }

    pub fn honest(&self) -> &[usize] {
        &self.honest
    }

    /// `k = |H|`.
    pub fn k(&self) -> usize {
        self.honest.len()
    }
}

/// `|Ψ⟩ = |G_θ^k⟩|Ψ_θ⟩ + |G_{θ+π}^k⟩|Ψ_{θ+π}⟩ + |𝒳⟩` with `G_θ^k` on the honest qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct GhzDecomposition {
    pub theta: f64,
    /// Dishonest-side vector, indexed by the dishonest bits in ascending party order.
    pub psi_theta: Vec<C64>,
    pub psi_theta_pi: Vec<C64>,
    /// Residual in the full `2^n` basis.
    pub chi: Vec<C64>,
    pub p_theta: f64,
    pub q_theta: f64,
    /// `⟨Ψ_θ|Ψ_{θ+π}⟩`.
    pub overlap: C64,
}

impl GhzDecomposition {
    pub fn chi_norm_sqr(&self) -> f64 {
        self.chi.iter().map(|c| c.norm_sqr()).sum()
    }
}

pub fn decompose_vs_ghz(psi: &PureState, coalition: &Coalition, theta: f64) -> Result<GhzDecomposition> {
    let n = psi.num_qubits();
    if n != coalition.n {
        return Err(Error::Dimension {
            left: n,
            right: coalition.n,
        });
    }
    let (h, d) = (coalition.honest(), coalition.dishonest());
    let all_h = scatter((1 << h.len()) - 1, h);
    let amps = psi.amplitudes();
    let e = C64::from_polar(1.0, -theta);
    let s = C64::new(FRAC_1_SQRT_2, 0.0);

    let dd = 1usize << d.len();
    let mut pt = vec![C64::new(0.0, 0.0); dd];
    let mut pp = pt.clone();
    for (x, (a, b)) in pt.iter_mut().zip(pp.iter_mut()).enumerate() {
        let base = scatter(x, d);
        let (c0, c1) = (amps[base], amps[base | all_h]);
        *a = (c0 + e * c1) * s;
        *b = (c0 - e * c1) * s;
    }

    // G_θ[0^k] = G_{θ+π}[0^k] = 1/√2; G_θ[1^k] = −G_{θ+π}[1^k] = e^{iθ}/√2.
    let mut chi = amps.to_vec();
    let eg = e.conj() * s;
    for x in 0..dd {
        let base = scatter(x, d);
        chi[base] -= s * (pt[x] + pp[x]);
        chi[base | all_h] -= eg * (pt[x] - pp[x]);
    }
    let norm = |v: &[C64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let overlap = pt.iter().zip(&pp).map(|(a, b)| a.conj() * b).sum();
    Ok(GhzDecomposition {
        theta,
        p_theta: norm(&pt),
        q_theta: norm(&pp),
        psi_theta: pt,
        psi_theta_pi: pp,
        chi,
        overlap,
    })
}

/// `½ + ½√((p+q)² − 4|⟨Ψ_θ|Ψ_{θ+π}⟩|²)`.
pub fn helstrom_guess_probability(dec: &GhzDecomposition) -> Result<f64> {
    let s = dec.p_theta + dec.q_theta;
    let rad = s * s - 4.0 * dec.overlap.norm_sqr();
    if rad < -1e-12 {
        return Err(Error::Numerical(format!("negative Helstrom radicand {rad:e}")));
    }
    Ok(0.5 + 0.5 * rad.max(0.0).sqrt())
}

/// `F′ = F(ρ_H, GHZ_H)` from reduced states.
pub fn best_dishonest_fidelity(state: &DensityMatrix, coalition: &Coalition) -> Result<f64> {
    let n = state.num_qubits();
    if n != coalition.n {
        return Err(Error::Dimension {
            left: n,
            right: coalition.n,
        });
    }
    let rho_h = partial_trace(state, coalition.honest())?;
    let ghz_h = reduced_ghz(coalition.k(), n)?;
    fidelity(&rho_h, &ghz_h)
}

pub fn best_dishonest_fidelity_pure(psi: &PureState, coalition: &Coalition) -> Result<f64> {
    let n = psi.num_qubits();
    if n != coalition.n {
        return Err(Error::Dimension {
            left: n,
            right: coalition.n,
        });
    }
    let rho_h = psi.reduced(coalition.honest())?;
    fidelity(&rho_h, &reduced_ghz(coalition.k(), n)?)
}

/// `Σ_r p_r F′(ρ_r)` for a mixture with classical labels known to the coalition.
pub fn best_dishonest_fidelity_labeled(
    parts: &[(f64, DensityMatrix)],
    coalition: &Coalition,
) -> Result<f64> {
    let total: f64 = parts.iter().map(|(p, _)| p).sum();
    if parts.is_empty() || parts.iter().any(|(p, _)| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("label weights must be a probability vector".into()));
    }
    parts
        .iter()
        .map(|(p, rho)| Ok(p * best_dishonest_fidelity(rho, coalition)?))
        .sum()
}

/// GHZ_n reduced to `k` qubits: itself when `k = n`, else `½(|0^k⟩⟨0^k| + |1^k⟩⟨1^k|)`.
fn reduced_ghz(k: usize, n: usize) -> Result<DensityMatrix> {
    if k == n {
        return ghz_state(n, 0.0)?.to_density();
    }
    let d = 1 << k;
    let mut m = DMatrix::zeros(d, d);
    m[(0, 0)] = C64::new(0.5, 0.0);
    m[(d - 1, d - 1)] = C64::new(0.5, 0.0);
    DensityMatrix::new(k, m)
}

pub const MIN_GUESS_GRID: usize = 1000;
pub const DEFAULT_GUESS_GRID: usize = 10_000;

/// `(1/π)∫₀^π Pr[guess Y_H | θ] dθ` by the trapezoid rule on `grid` intervals.
///
/// The integrand is π-periodic, so the rule reduces to the mean over `θ_i = iπ/grid`.
pub fn averaged_guess_probability(psi: &PureState, coalition: &Coalition, grid: usize) -> Result<f64> {
    if grid < MIN_GUESS_GRID {
        return Err(Error::Range(format!("grid {grid} below {MIN_GUESS_GRID}")));
    }
    let mut acc = 0.0;
    for i in 0..grid {
        let theta = PI * i as f64 / grid as f64;
        acc += helstrom_guess_probability(&decompose_vs_ghz(psi, coalition, theta)?)?;
    }
    Ok(acc / grid as f64)
}

/// `P(λ) = ½ + sin(a)/(2a)`, `a = π(1−λ)/2`.
pub fn theta_cheat_pass_curve(lambda: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Range(format!("λ = {lambda} outside [0, 1)")));
    }
    let a = FRAC_PI_2 * (1.0 - lambda);
    Ok(0.5 + a.sin() / (2.0 * a))
}

/// `cos²(π/8)`, the zero-loss XY cheating optimum.
pub fn cos2_pi_8() -> f64 {
    (PI / 8.0).cos().powi(2)
}

/// `Q(λ) = (λ + (1−2λ)cos²(π/8))/(1−λ)`.
pub fn xy_cheat_pass_curve(lambda: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&lambda) {
        return Err(Error::Range(format!("λ = {lambda} outside [0, 1/2]")));
    }
    Ok((lambda + (1.0 - 2.0 * lambda) * cos2_pi_8()) / (1.0 - lambda))
}

/// `(|0^k⟩ + e^{iφ}|1^k⟩)/√2` on the honest parties, `|+⟩` on every dishonest one.
pub fn honest_ghz_dishonest_plus(coalition: &Coalition, phi: f64) -> Result<PureState> {
    let n = coalition.n;
    let h = coalition.honest();
    let all = (1usize << h.len()) - 1;
    let w = FRAC_1_SQRT_2.powi(coalition.dishonest.len() as i32 + 1);
    let amps = (0..1usize << n)
        .map(|b| match gather(b, h) {
            0 => C64::new(w, 0.0),
            x if x == all => C64::from_polar(w, phi),
            _ => C64::new(0.0, 0.0),
        })
        .collect();
    PureState::new(n, amps)
}

/// Exact XY pass probability of the guessing response `Y_D = [cos(θ′ + θ_D) < 0]`
/// (no loss), averaged over all XY settings.
pub fn xy_guesser_pass_probability(
    rho: &DensityMatrix,
    coalition: &Coalition,
    theta_prime: f64,
) -> Result<f64> {
    let rho_h = partial_trace(rho, coalition.honest())?;
    let settings = crate::protocol::xy_settings(coalition.n)?;
    let mut acc = 0.0;
    for a in &settings {
        let t = a.radians();
        let hon: Vec<f64> = coalition.honest().iter().map(|&j| t[j]).collect();
        let theta_d: f64 = coalition.dishonest().iter().map(|&j| t[j]).sum();
        let guess = u8::from((theta_prime + theta_d).cos() < 0.0);
        let sign = if (a.parity() ^ guess) == 0 { 1.0 } else { -1.0 };
        acc += 0.5 * (1.0 + sign * rho_h.parity_correlator(&hon)?);
    }
    Ok(acc / settings.len() as f64)
}

/// Strategy identifiers accepted by [`make_strategy`].
pub const STRATEGY_KEYS: &[&str] = &[
    "xy-perfect-loss50",
    "xy-naive-loss50",
    "xy-rotated-bell",
    "xy-mixed",
    "theta-rotated-bell",
    "projective-cheat",
    "product-guesser",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    /// Four Bell phases `{0, π/2, π, 3π/2}`; loss on the basis that gives no information.
    XyPerfectLoss50,
    /// Phase 0 only; loss on every Y request. Detectable.
    XyNaiveLoss50,
    /// Phase `π/4 + kπ/2`, never lost.
    XyRotatedBell,
    /// `XyPerfectLoss50` with probability `2λ`, otherwise `XyRotatedBell`.
    XyMixed { lambda: f64 },
    /// Phase `θ′ + r`, `r` uniform if `hide`; loss arc of width `λπ`.
    ThetaRotatedBell { lambda: f64, theta_prime: f64, hide: bool },
    /// Pre-measures the dishonest share of a GHZ state to steer the honest phase.
    ProjectiveCheat { lambda: f64 },
    /// Fixed phase `θ′`, guess only (optional loss arc).
    ProductGuesser { theta_prime: f64, lambda: f64 },
}

/// Arc labels carried in [`SideInfo::mode`].
const ARC_NONE: u32 = 0;
const ARC_HALF: u32 = 1;
const ARC_LAMBDA: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CheatStrategy {
    key: String,
    kind: StrategyKind,
}

impl fmt::Display for CheatStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

impl FromStr for CheatStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        make_strategy(s)
    }
}

/// Parses `name[:key=value,...]`, e.g. `xy-mixed:lambda=0.2` or
/// `theta-rotated-bell:lambda=0.3,theta=pi/4,hide=false`.
pub fn make_strategy(key: &str) -> Result<CheatStrategy> {
    let mut p = KeyParams::parse(key)?;
    let lam = |p: &mut KeyParams, max: f64, closed: bool| -> Result<f64> {
        let l = p.take_f64("lambda")?.unwrap_or(0.0);
        let ok = l >= 0.0 && if closed { l <= max } else { l < max };
        if !ok {
            return Err(Error::Range(format!("λ = {l} outside the strategy's range")));
        }
        Ok(l)
    };
    let theta = |p: &mut KeyParams, default: f64| -> Result<f64> {
        let t = p.take_f64("theta")?.unwrap_or(default);
        if !(0.0..2.0 * PI).contains(&t) {
            return Err(Error::Range(format!("θ′ = {t} outside [0, 2π)")));
        }
        Ok(t)
    };
    let kind = match p.name.as_str() {
        "xy-perfect-loss50" => StrategyKind::XyPerfectLoss50,
        "xy-naive-loss50" => StrategyKind::XyNaiveLoss50,
        "xy-rotated-bell" => StrategyKind::XyRotatedBell,
        "xy-mixed" => StrategyKind::XyMixed {
            lambda: lam(&mut p, 0.5, true)?,
        },
        "theta-rotated-bell" => StrategyKind::ThetaRotatedBell {
            lambda: lam(&mut p, 1.0, false)?,
            theta_prime: theta(&mut p, 0.0)?,
            hide: p.take_bool("hide")?.unwrap_or(true),
        },
        "projective-cheat" => StrategyKind::ProjectiveCheat {
            lambda: lam(&mut p, 1.0, false)?,
        },
        "product-guesser" => StrategyKind::ProductGuesser {
            theta_prime: theta(&mut p, FRAC_PI_4)?,
            lambda: lam(&mut p, 1.0, false)?,
        },
        _ => return Err(Error::UnknownKey(key.to_string())),
    };
    p.finish()?;
    Ok(CheatStrategy {
        key: key.trim().to_string(),
        kind,
    })
}

impl CheatStrategy {
    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    fn lambda(&self) -> f64 {
        match self.kind {
            StrategyKind::XyMixed { lambda }
            | StrategyKind::ThetaRotatedBell { lambda, .. }
            | StrategyKind::ProjectiveCheat { lambda }
            | StrategyKind::ProductGuesser { lambda, .. } => lambda,
            _ => 0.0,
        }
    }

    /// Phase of the native honest share before the per-round rotation.
    fn base_phase(&self) -> f64 {
        match self.kind {
            StrategyKind::XyRotatedBell => FRAC_PI_4,
            StrategyKind::ThetaRotatedBell { theta_prime, .. }
            | StrategyKind::ProductGuesser { theta_prime, .. } => theta_prime,
            _ => 0.0,
        }
    }

    /// Expected fraction of requests answered with LOSS under `kind`.
    pub fn target_loss_rate(&self, kind: ProtocolKind) -> f64 {
        match (self.kind, kind) {
            (StrategyKind::XyPerfectLoss50 | StrategyKind::XyNaiveLoss50, _) => 0.5,
            (StrategyKind::XyRotatedBell, _) => 0.0,
            (StrategyKind::ProjectiveCheat { lambda }, ProtocolKind::Xy) => lambda.min(0.5),
            _ => self.lambda(),
        }
    }

    /// Rejects parameter/protocol combinations with no defined behaviour.
    pub fn validate_for(&self, kind: ProtocolKind) -> Result<()> {
        if let (StrategyKind::ProjectiveCheat { lambda }, ProtocolKind::Xy) = (self.kind, kind) {
            if lambda > 0.5 {
                return Err(Error::Range(format!("λ = {lambda} exceeds 1/2 for xy")));
            }
        }
        Ok(())
    }

    /// The resource this strategy is built for: a GHZ state for the projective cheat,
    /// otherwise a rotated GHZ on the honest parties with `|+⟩` on the coalition.
    pub fn native_source(&self, coalition: &Coalition) -> Result<DensityMatrix> {
        match self.kind {
            StrategyKind::ProjectiveCheat { .. } => ghz_state(coalition.n, 0.0)?.to_density(),
            _ => honest_ghz_dishonest_plus(coalition, self.base_phase())?.to_density(),
        }
    }

    fn arc(&self, mode: u32) -> f64 {
        match mode {
            ARC_HALF => 0.5,
            ARC_LAMBDA => self.lambda(),
            _ => 0.0,
        }
    }
}

fn quarter_turn(rng: &mut dyn RngCore) -> f64 {
    FRAC_PI_2 * rng.random_range(0..4u32) as f64
}

/// XY side information shared by the mixed and projective strategies.
fn xy_mixed_side(lambda: f64, rng: &mut dyn RngCore) -> SideInfo {
    if rng.random::<f64>() < 2.0 * lambda {
        SideInfo {
            rotation: quarter_turn(rng),
            mode: ARC_HALF,
        }
    } else {
        SideInfo {
            rotation: FRAC_PI_4 + quarter_turn(rng),
            mode: ARC_NONE,
        }
    }
}

impl CoalitionPolicy for CheatStrategy {
    fn side_info(&self, kind: ProtocolKind, rng: &mut dyn RngCore) -> SideInfo {
        match self.kind {
            StrategyKind::XyPerfectLoss50 => SideInfo {
                rotation: quarter_turn(rng),
                mode: ARC_HALF,
            },
            StrategyKind::XyNaiveLoss50 => SideInfo {
                rotation: 0.0,
                mode: ARC_HALF,
            },
            StrategyKind::XyRotatedBell => SideInfo {
                rotation: quarter_turn(rng),
                mode: ARC_NONE,
            },
            StrategyKind::XyMixed { lambda } => xy_mixed_side(lambda, rng),
            StrategyKind::ThetaRotatedBell { hide, .. } => SideInfo {
                rotation: if hide { rng.random_range(0.0..PI) } else { 0.0 },
                mode: ARC_LAMBDA,
            },
            StrategyKind::ProjectiveCheat { lambda } => match kind {
                ProtocolKind::Xy => xy_mixed_side(lambda, rng),
                ProtocolKind::Theta => SideInfo {
                    rotation: rng.random_range(0.0..PI),
                    mode: ARC_LAMBDA,
                },
            },
            StrategyKind::ProductGuesser { .. } => SideInfo {
                rotation: 0.0,
                mode: ARC_LAMBDA,
            },
        }
    }

    fn source_rotation(&self, side: &SideInfo) -> f64 {
        match self.kind {
            StrategyKind::ProjectiveCheat { .. } => 0.0,
            _ => side.rotation,
        }
    }

    fn premeasure(&self, side: &SideInfo, dishonest: usize) -> Option<Vec<f64>> {
        match self.kind {
            // Projecting onto |±_φ⟩ leaves the honest parties in GHZ_k with phase −φ (+π on "−").
            StrategyKind::ProjectiveCheat { .. } => {
                let mut v = vec![0.0; dishonest];
                v[0] = -side.rotation;
                Some(v)
            }
            _ => None,
        }
    }

    fn respond(
        &self,
        side: &SideInfo,
        _kind: ProtocolKind,
        angles: &[f64],
        measured: Option<&[u8]>,
    ) -> Vec<Outcome> {
        let phi = match (self.kind, measured) {
            (StrategyKind::ProjectiveCheat { .. }, Some(bits)) => {
                side.rotation + PI * bits.iter().map(|&b| f64::from(b)).sum::<f64>()
            }
            _ => self.base_phase() + side.rotation,
        };
        let x = phi + angles.iter().sum::<f64>();
        let mut out = vec![Outcome::Zero; angles.len()];
        if out.is_empty() {
            return out;
        }
        let half = self.arc(side.mode) * FRAC_PI_2;
        let off = (x - FRAC_PI_2).rem_euclid(PI);
        out[0] = if half > 0.0 && (off < half || off >= PI - half) {
            Outcome::Loss
        } else if x.cos() >= 0.0 {
            Outcome::Zero
        } else {
            Outcome::One
        };
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{estimate_pass_probability, simulate_rounds, PartyRoles};
    use crate::qstate::STATE_TOL;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn decomposition_examples() {
        let g = ghz_state(4, 0.0).unwrap();
        for d in [vec![3], vec![2, 3], vec![1, 2, 3]] {
            let c = Coalition::new(4, &d, 0).unwrap();
            for theta in [0.0, 0.7, 2.0] {
                let dec = decompose_vs_ghz(&g, &c, theta).unwrap();
                assert!(dec.chi_norm_sqr() < 1e-20);
                assert!(close(dec.p_theta + dec.q_theta, 1.0, 1e-12));
                assert!(close(helstrom_guess_probability(&dec).unwrap(), 1.0, 1e-12));
            }
        }
        let zero = PureState::basis(3, 0).unwrap();
        let dec = decompose_vs_ghz(&zero, &Coalition::last_party(3).unwrap(), 0.0).unwrap();
        assert!(close(dec.p_theta, 0.5, 1e-12) && close(dec.q_theta, 0.5, 1e-12));
        assert!(close(dec.overlap.norm(), 0.5, 1e-12));
        assert!(dec.chi_norm_sqr() < 1e-20);
        assert!(close(helstrom_guess_probability(&dec).unwrap(), 0.5, 1e-12));

        let plus3 = PureState::plus()
            .tensor(&PureState::plus())
            .unwrap()
            .tensor(&PureState::plus())
            .unwrap();
        let dec = decompose_vs_ghz(&plus3, &Coalition::new(3, &[2], 0).unwrap(), 0.3).unwrap();
        assert!(dec.chi_norm_sqr() > 0.1);
    }

    /// Rebuilds `|Ψ⟩` from the three components.
    #[test]
    fn decomposition_reconstructs_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, d) in [(3, vec![2]), (3, vec![1, 2]), (4, vec![0, 3]), (4, vec![2])] {
            let psi = PureState::random(n, &mut rng).unwrap();
            let c = Coalition::new(n, &d, if d.contains(&0) { 1 } else { 0 }).unwrap();
            let theta = rng.random_range(0.0..PI);
            let dec = decompose_vs_ghz(&psi, &c, theta).unwrap();
            let k = c.k();
            let gt = ghz_state(k, theta).unwrap();
            let gp = ghz_state(k, theta + PI).unwrap();
            for (b, amp) in psi.amplitudes().iter().enumerate() {
                let (h, x) = (gather(b, c.honest()), gather(b, c.dishonest()));
                let rebuilt = gt.amplitudes()[h] * dec.psi_theta[x]
                    + gp.amplitudes()[h] * dec.psi_theta_pi[x]
                    + dec.chi[b];
                assert!((rebuilt - amp).norm() < 1e-12);
            }
            assert!(close(dec.p_theta + dec.q_theta + dec.chi_norm_sqr(), 1.0, STATE_TOL));
        }
    }

    /// Oracle: ½(p+q) + ½‖χ‖² + ½‖|Ψ_θ⟩⟨Ψ_θ| − |Ψ_{θ+π}⟩⟨Ψ_{θ+π}|‖₁ by dense eigendecomposition.
    #[test]
    fn helstrom_matches_trace_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let psi = PureState::random(3, &mut rng).unwrap();
            let c = Coalition::new(3, &[2], 0).unwrap();
            let dec = decompose_vs_ghz(&psi, &c, rng.random_range(0.0..PI)).unwrap();
            let u = nalgebra::DVector::from_column_slice(&dec.psi_theta);
            let v = nalgebra::DVector::from_column_slice(&dec.psi_theta_pi);
            let diff = &u * u.adjoint() - &v * v.adjoint();
            let tn: f64 = diff.symmetric_eigenvalues().iter().map(|l| l.abs()).sum();
            let oracle = 0.5 * (dec.p_theta + dec.q_theta) + 0.5 * dec.chi_norm_sqr() + 0.5 * tn;
            assert!(close(helstrom_guess_probability(&dec).unwrap(), oracle, 1e-9));
        }
    }

    #[test]
    fn helstrom_rejects_inconsistent_input() {
        let mut dec = decompose_vs_ghz(
            &ghz_state(2, 0.0).unwrap(),
            &Coalition::last_party(2).unwrap(),
            0.0,
        )
        .unwrap();
        dec.overlap = C64::new(0.6, 0.0);
        assert!(matches!(helstrom_guess_probability(&dec), Err(Error::Numerical(_))));
    }

    #[test]
    fn best_fidelity_examples() {
        for n in 2..=4 {
            let g = ghz_state(n, 0.0).unwrap().to_density().unwrap();
            let c = Coalition::last_party(n).unwrap();
            assert!(close(best_dishonest_fidelity(&g, &c).unwrap(), 1.0, 1e-9));
            let z = PureState::basis(n, 0).unwrap();
            assert!(close(best_dishonest_fidelity_pure(&z, &c).unwrap(), 0.5, 1e-9));
        }
        let bell_plus = ghz_state(2, 0.0).unwrap().tensor(&PureState::plus()).unwrap();
        let c = Coalition::new(3, &[2], 0).unwrap();
        assert!(close(best_dishonest_fidelity_pure(&bell_plus, &c).unwrap(), 0.5, 1e-9));
        let mixed = best_dishonest_fidelity_labeled(
            &[
                (0.5, ghz_state(3, 0.0).unwrap().to_density().unwrap()),
                (0.5, bell_plus.to_density().unwrap()),
            ],
            &c,
        )
        .unwrap();
        assert!(close(mixed, 0.75, 1e-9));
    }

    #[test]
    fn averaged_guess_examples() {
        let c = Coalition::new(3, &[2], 0).unwrap();
        let g = ghz_state(3, 0.0).unwrap();
        assert!(close(averaged_guess_probability(&g, &c, 1000).unwrap(), 1.0, 1e-12));
        let h = honest_ghz_dishonest_plus(&c, FRAC_PI_4).unwrap();
        let avg = averaged_guess_probability(&h, &c, DEFAULT_GUESS_GRID).unwrap();
        assert!(close(avg, 0.5 + 1.0 / PI, 1e-4));
        assert!(averaged_guess_probability(&h, &c, 999).is_err());
    }

    #[test]
    fn curve_examples() {
        assert!(close(theta_cheat_pass_curve(0.0).unwrap(), 0.5 + 1.0 / PI, 1e-15));
        assert!(close(theta_cheat_pass_curve(1.0 - 1e-9).unwrap(), 1.0, 1e-9));
        assert!(close(theta_cheat_pass_curve(0.05).unwrap(), 0.834, 1e-3));
        assert!(theta_cheat_pass_curve(1.0).is_err());
        assert!(close(xy_cheat_pass_curve(0.0).unwrap(), 0.853_553_390_593_273_8, 1e-15));
        assert!(close(xy_cheat_pass_curve(0.5).unwrap(), 1.0, 1e-15));
        assert!(close(
            xy_cheat_pass_curve(0.25).unwrap(),
            (0.25 + 0.5 * cos2_pi_8()) / 0.75,
            1e-15
        ));
        assert!(xy_cheat_pass_curve(0.51).is_err());
        // Quadrature oracle for the θ curve.
        for lam in [0.0, 0.3, 0.7] {
            let a = FRAC_PI_2 * (1.0 - lam);
            let m = 20_000;
            let h = a / m as f64;
            let integral: f64 = (0..m)
                .map(|i| ((i as f64 + 0.5) * h / 2.0).cos().powi(2) * h)
                .sum();
            let oracle = 2.0 / (PI * (1.0 - lam)) * integral;
            assert!(close(theta_cheat_pass_curve(lam).unwrap(), oracle, 1e-8));
        }
    }

    #[test]
    fn strategy_keys() {
        for k in STRATEGY_KEYS {
            assert!(make_strategy(k).is_ok(), "{k}");
        }
        assert!(make_strategy("xy-mixed:lambda=0.6").is_err());
        assert!(make_strategy("theta-rotated-bell:lambda=1").is_err());
        assert!(make_strategy("product-guesser:theta=7").is_err());
        assert!(make_strategy("nope").is_err());
        assert!(make_strategy("xy-rotated-bell:lambda=0.1").is_err());
        let s = make_strategy("projective-cheat:lambda=0.7").unwrap();
        assert!(s.validate_for(ProtocolKind::Theta).is_ok());
        assert!(s.validate_for(ProtocolKind::Xy).is_err());
    }

    #[test]
    fn rotated_bell_guesser_exact_xy() {
        let c = Coalition::new(3, &[2], 0).unwrap();
        let rho = honest_ghz_dishonest_plus(&c, FRAC_PI_4).unwrap().to_density().unwrap();
        let p = xy_guesser_pass_probability(&rho, &c, FRAC_PI_4).unwrap();
        assert!(close(p, cos2_pi_8(), 1e-12));
    }

    fn run(key: &str, kind: ProtocolKind, n: usize, rounds: u64, seed: u64) -> crate::protocol::PassStats {
        let s = make_strategy(key).unwrap();
        let c = Coalition::last_party(n).unwrap();
        let src = s.native_source(&c).unwrap();
        let roles = PartyRoles::with_coalition(n, c.dishonest().to_vec(), Arc::new(s));
        estimate_pass_probability(&src, &roles, kind, rounds, seed).unwrap()
    }

    #[test]
    fn perfect_loss50_always_passes() {
        let s = run("xy-perfect-loss50", ProtocolKind::Xy, 3, 20_000, 4);
        assert_eq!(s.estimate, 1.0);
        let l = s.loss_rates[2];
        assert!((l - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
    }

    #[test]
    fn theta_rotated_bell_matches_curve() {
        let s = run("theta-rotated-bell:lambda=0.3", ProtocolKind::Theta, 3, 40_000, 5);
        let target = theta_cheat_pass_curve(0.3).unwrap();
        assert!((s.estimate - target).abs() < 3.5 * s.stderr, "{} vs {target}", s.estimate);
        assert!((s.loss_rates[2] - 0.3).abs() < 4.0 * (0.21f64 / 40_000.0).sqrt());
    }

    #[test]
    fn product_guesser_xy_reaches_cos2() {
        let s = run("product-guesser:theta=pi/4", ProtocolKind::Xy, 3, 40_000, 6);
        assert!((s.estimate - cos2_pi_8()).abs() < 3.5 * s.stderr);
    }

    #[test]
    fn projective_cheat_tracks_curves() {
        let s = run("projective-cheat:lambda=0.2", ProtocolKind::Theta, 4, 40_000, 7);
        assert!((s.estimate - theta_cheat_pass_curve(0.2).unwrap()).abs() < 3.5 * s.stderr);
        let s = run("projective-cheat:lambda=0.2", ProtocolKind::Xy, 3, 40_000, 8);
        assert!((s.estimate - xy_cheat_pass_curve(0.2).unwrap()).abs() < 3.5 * s.stderr);
    }

    #[test]
    fn larger_coalitions_answer_jointly() {
        let s = make_strategy("xy-mixed:lambda=0.1").unwrap();
        let c = Coalition::new(5, &[1, 3], 0).unwrap();
        let src = s.native_source(&c).unwrap();
        let roles = PartyRoles::with_coalition(5, c.dishonest().to_vec(), Arc::new(s));
        let st = estimate_pass_probability(&src, &roles, ProtocolKind::Xy, 30_000, 9).unwrap();
        assert!((st.estimate - xy_cheat_pass_curve(0.1).unwrap()).abs() < 3.5 * st.stderr);
    }

    #[test]
    fn hidden_loss_angles_are_uniform() {
        let s = make_strategy("theta-rotated-bell:lambda=0.3").unwrap();
        let c = Coalition::last_party(3).unwrap();
        let src = s.native_source(&c).unwrap();
        let roles = PartyRoles::with_coalition(3, vec![2], Arc::new(s));
        let recs = simulate_rounds(&src, &roles, ProtocolKind::Theta, 20_000, 10).unwrap();
        let lost: Vec<f64> = recs
            .iter()
            .filter(|r| r.outcomes[2].is_loss())
            .map(|r| r.assignment.radians()[2])
            .collect();
        let (_, p) = crate::simnet::ks_uniform(&lost, 0.0, PI);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn curves_are_monotone() {
        let mut prev = (0.0, 0.0);
        for i in 0..=100 {
            let l = 0.005 * i as f64;
            let (t, x) = (theta_cheat_pass_curve(l).unwrap(), xy_cheat_pass_curve(l).unwrap());
            assert!(t >= prev.0 && x >= prev.1);
            prev = (t, x);
        }
    }
}
