//! The verification test: angle sampling, the parity condition, single-shot
//! rounds, Monte Carlo estimation and exact pass probabilities.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::qstate::{
    ghz_state, radians, sample_xy_plane, setting_pass_probability, sum_parity, DensityMatrix,
    MeasurementAngle, STATE_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    /// Continuous angles in `[0, π)`.
    Theta,
    /// Angles restricted to `{0, π/2}` (Pauli X / Y).
    Xy,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Theta => "theta",
            ProtocolKind::Xy => "xy",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "theta" => Ok(ProtocolKind::Theta),
            "xy" => Ok(ProtocolKind::Xy),
            other => Err(Error::UnknownKey(other.to_string())),
        }
    }
}

/// One angle per party with `Σθ_j ≡ 0 (mod π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleAssignment {
    angles: Vec<MeasurementAngle>,
    kind: ProtocolKind,
    parity: u8,
}

impl AngleAssignment {
    pub fn new(kind: ProtocolKind, angles: Vec<MeasurementAngle>) -> Result<Self> {
        if angles.len() < 2 {
            return Err(Error::InvalidAssignment("need at least two parties".into()));
        }
        if kind == ProtocolKind::Xy
            && angles.iter().any(|a| {
                let t = a.radians();
                t.abs() > STATE_TOL && (t - FRAC_PI_2).abs() > STATE_TOL
            })
        {
            return Err(Error::InvalidAssignment(
                "xy angles must be 0 or π/2".into(),
            ));
        }
        let parity = sum_parity(&radians(&angles), STATE_TOL).ok_or_else(|| {
            Error::InvalidAssignment("angle sum is not a multiple of π".into())
        })?;
        Ok(Self {
            angles,
            kind,
            parity,
        })
    }

    pub fn angles(&self) -> &[MeasurementAngle] {
        &self.angles
    }

    pub fn radians(&self) -> Vec<f64> {
        radians(&self.angles)
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    /// `(Σθ_j)/π mod 2`.
    pub fn parity(&self) -> u8 {
        self.parity
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

fn draw_free_angle<R: Rng + ?Sized>(kind: ProtocolKind, rng: &mut R) -> f64 {
    match kind {
        ProtocolKind::Theta => rng.random_range(0.0..PI),
        ProtocolKind::Xy => {
            if rng.random::<bool>() {
                FRAC_PI_2
            } else {
                0.0
            }
        }
    }
}

/// Completes a partial assignment: the `dependent` party gets `(−Σ others) mod π`.
fn complete(kind: ProtocolKind, mut angles: Vec<f64>, dependent: usize) -> Result<AngleAssignment> {
    let others: f64 = angles
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != dependent)
        .map(|(_, t)| t)
        .sum();
    angles[dependent] = match kind {
        ProtocolKind::Theta => MeasurementAngle::wrapped(-others).radians(),
        ProtocolKind::Xy => {
            let ys = angles
                .iter()
                .enumerate()
                .filter(|(j, t)| *j != dependent && **t > 0.0)
                .count();
            if ys % 2 == 1 {
                FRAC_PI_2
            } else {
                0.0
            }
        }
    };
    // Snap sums that wrapped to exactly π back to 0 to stay inside [0, π).
    let angles = angles
        .into_iter()
        .map(|t| MeasurementAngle::new(t).unwrap_or(MeasurementAngle::wrapped(t)))
        .collect();
    AngleAssignment::new(kind, angles)
}

/// Draws the first `n − 1` angles independently and completes the last one.
pub fn sample_angles<R: Rng + ?Sized>(
    kind: ProtocolKind,
    n: usize,
    rng: &mut R,
) -> Result<AngleAssignment> {
    if n < 2 {
        return Err(Error::Range(format!("need at least 2 parties, got {n}")));
    }
    let mut angles: Vec<f64> = (0..n - 1).map(|_| draw_free_angle(kind, rng)).collect();
    angles.push(0.0);
    complete(kind, angles, n - 1)
}

/// Like [`sample_angles`] but with `party`'s angle pinned; the dependent angle is
/// the last party other than `party`.
pub fn sample_angles_with_fixed<R: Rng + ?Sized>(
    kind: ProtocolKind,
    n: usize,
    party: usize,
    angle: MeasurementAngle,
    rng: &mut R,
) -> Result<AngleAssignment> {
    if n < 2 {
        return Err(Error::Range(format!("need at least 2 parties, got {n}")));
    }
    if party >= n {
        return Err(Error::Range(format!("party {party} outside 0..{n}")));
    }
    let dependent = if party == n - 1 { n - 2 } else { n - 1 };
    let angles: Vec<f64> = (0..n)
        .map(|j| {
            if j == party {
                angle.radians()
            } else if j == dependent {
                0.0
            } else {
                draw_free_angle(kind, rng)
            }
        })
        .collect();
    complete(kind, angles, dependent)
}

/// A party's reply to the Verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Zero,
    One,
    Loss,
}

impl Outcome {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Outcome::Zero
        } else {
            Outcome::One
        }
    }

    pub fn bit(self) -> Option<u8> {
        match self {
            Outcome::Zero => Some(0),
            Outcome::One => Some(1),
            Outcome::Loss => None,
        }
    }

    pub fn is_loss(self) -> bool {
        self == Outcome::Loss
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Outcome::Zero => s.serialize_u8(0),
            Outcome::One => s.serialize_u8(1),
            Outcome::Loss => s.serialize_str("LOSS"),
        }
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bit(u8),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Bit(0) => Ok(Outcome::Zero),
            Raw::Bit(1) => Ok(Outcome::One),
            Raw::Text(t) if t == "LOSS" => Ok(Outcome::Loss),
            _ => Err(serde::de::Error::custom("outcome must be 0, 1 or \"LOSS\"")),
        }
    }
}

/// `⊕_j Y_j == parity`.
pub fn parity_test(assignment: &AngleAssignment, outcomes: &[Outcome]) -> Result<bool> {
    if outcomes.len() != assignment.len() {
        return Err(Error::Arity {
            expected: assignment.len(),
            actual: outcomes.len(),
        });
    }
    let mut x = 0u8;
    for o in outcomes {
        x ^= o
            .bit()
            .ok_or_else(|| Error::InvalidInput("parity test on a round with LOSS".into()))?;
    }
    Ok(x == assignment.parity())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub assignment: AngleAssignment,
    pub outcomes: Vec<Outcome>,
    /// Absent when any party declared loss.
    pub passed: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct RoundLine {
    round: u64,
    angles: Vec<f64>,
    outcomes: Vec<Outcome>,
    passed: Option<u8>,
}

impl RoundRecord {
    pub fn new(round: u64, assignment: AngleAssignment, outcomes: Vec<Outcome>) -> Result<Self> {
        let passed = if outcomes.iter().any(|o| o.is_loss()) {
            if outcomes.len() != assignment.len() {
                return Err(Error::Arity {
                    expected: assignment.len(),
                    actual: outcomes.len(),
                });
            }
            None
        } else {
            Some(parity_test(&assignment, &outcomes)?)
        };
        Ok(Self {
            round,
            assignment,
            outcomes,
            passed,
        })
    }

    /// One JSON object: `round`, `angles`, `outcomes` (0, 1 or "LOSS"), `passed` (1, 0 or null).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RoundLine {
            round: self.round,
            angles: self.assignment.radians(),
            outcomes: self.outcomes.clone(),
            passed: self.passed.map(u8::from),
        })
        .expect("round record serializes")
    }

    pub fn from_json_line(line: &str, kind: ProtocolKind) -> Result<Self> {
        let raw: RoundLine =
            serde_json::from_str(line).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let angles = raw
            .angles
            .into_iter()
            .map(MeasurementAngle::new)
            .collect::<Result<Vec<_>>>()?;
        let rec = Self::new(raw.round, AngleAssignment::new(kind, angles)?, raw.outcomes)?;
        if rec.passed.map(u8::from) != raw.passed {
            return Err(Error::InvalidInput(format!(
                "round {}: stored pass flag disagrees with the parity test",
                rec.round
            )));
        }
        Ok(rec)
    }
}

pub fn write_jsonl<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub rounds: u64,
    pub valid_rounds: u64,
    pub passes: u64,
    pub estimate: f64,
    /// Binomial normal approximation `√(p̂(1−p̂)/N)`.
    pub stderr: f64,
    /// Fraction of all rounds in which each party declared loss.
    pub loss_rates: Vec<f64>,
}

impl PassStats {
    pub fn from_records(records: &[RoundRecord]) -> Result<Self> {
        let n = records.first().map(|r| r.outcomes.len()).unwrap_or(0);
        let mut losses = vec![0u64; n];
        let (mut valid, mut passes) = (0u64, 0u64);
        for r in records {
            for (j, o) in r.outcomes.iter().enumerate() {
                if o.is_loss() {
                    losses[j] += 1;
                }
            }
            if let Some(p) = r.passed {
                valid += 1;
                passes += u64::from(p);
            }
        }
        if valid == 0 {
            return Err(Error::UndefinedEstimate);
        }
        let estimate = passes as f64 / valid as f64;
        let total = records.len() as f64;
        Ok(Self {
            rounds: records.len() as u64,
            valid_rounds: valid,
            passes,
            estimate,
            stderr: (estimate * (1.0 - estimate) / valid as f64).sqrt(),
            loss_rates: losses.iter().map(|&l| l as f64 / total).collect(),
        })
    }
}

/// Classical information shared between the source and the dishonest coalition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SideInfo {
    /// Phase `r` the source applies to the honest share (or the pre-measurement basis).
    pub rotation: f64,
    /// Strategy-specific branch label.
    pub mode: u32,
}

/// Response policy of a dishonest coalition acting as one logical responder.
pub trait CoalitionPolicy: Send + Sync {
    fn side_info(&self, kind: ProtocolKind, rng: &mut dyn RngCore) -> SideInfo;

    /// Phase `diag(1, e^{iφ})` the collaborating source applies to the first honest
    /// qubit before distribution.
    fn source_rotation(&self, _side: &SideInfo) -> f64 {
        0.0
    }

    /// X–Y-plane basis angles for measuring the dishonest qubits before answering.
    /// `None` leaves them unmeasured.
    fn premeasure(&self, _side: &SideInfo, _dishonest: usize) -> Option<Vec<f64>> {
        None
    }

    /// Replies for every dishonest party, given their requested angles and any
    /// pre-measurement results.
    fn respond(
        &self,
        side: &SideInfo,
        kind: ProtocolKind,
        angles: &[f64],
        measured: Option<&[u8]>,
    ) -> Vec<Outcome>;
}

/// Who is honest, who answers for the coalition, and honest i.i.d. loss.
#[derive(Clone)]
pub struct PartyRoles {
    pub n: usize,
    pub dishonest: Vec<usize>,
    pub policy: Option<Arc<dyn CoalitionPolicy>>,
    pub honest_loss: f64,
}

impl fmt::Debug for PartyRoles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartyRoles")
            .field("n", &self.n)
            .field("dishonest", &self.dishonest)
            .field("policy", &self.policy.is_some())
            .field("honest_loss", &self.honest_loss)
            .finish()
    }
}

impl PartyRoles {
    pub fn all_honest(n: usize) -> Self {
        Self {
            n,
            dishonest: Vec::new(),
            policy: None,
            honest_loss: 0.0,
        }
    }

    pub fn with_coalition(n: usize, dishonest: Vec<usize>, policy: Arc<dyn CoalitionPolicy>) -> Self {
        Self {
            n,
            dishonest,
            policy: Some(policy),
            honest_loss: 0.0,
        }
    }

    pub fn honest_loss(mut self, q: f64) -> Self {
        self.honest_loss = q;
        self
    }

    pub fn is_dishonest(&self, party: usize) -> bool {
        self.dishonest.contains(&party)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Range("need at least 2 parties".into()));
        }
        if !(0.0..=1.0).contains(&self.honest_loss) {
            return Err(Error::Range("honest loss probability outside [0,1]".into()));
        }
        if self.dishonest.iter().any(|&d| d >= self.n) {
            return Err(Error::Range("dishonest party index out of range".into()));
        }
        if self.dishonest.len() >= self.n {
            return Err(Error::Range("at least one party must be honest".into()));
        }
        if !self.dishonest.is_empty() && self.policy.is_none() {
            return Err(Error::InvalidInput("dishonest parties need a policy".into()));
        }
        Ok(())
    }
}

/// Per-round random stream derived from `(seed, round)`.
pub fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

/// Runs one round on a Verifier-chosen assignment.
pub fn run_round_with_assignment<R: Rng>(
    source: &DensityMatrix,
    roles: &PartyRoles,
    assignment: AngleAssignment,
    side: Option<SideInfo>,
    round: u64,
    rng: &mut R,
) -> Result<RoundRecord> {
    let n = roles.n;
    if source.num_qubits() != n || assignment.len() != n {
        return Err(Error::Arity {
            expected: n,
            actual: if source.num_qubits() != n {
                source.num_qubits()
            } else {
                assignment.len()
            },
        });
    }
    let policy = roles.policy.as_deref().filter(|_| !roles.dishonest.is_empty());
    let side = side.unwrap_or_default();

    let rotated;
    let state = match policy.map(|p| p.source_rotation(&side)) {
        Some(phi) if phi != 0.0 => {
            let first_honest = (0..n).find(|j| !roles.is_dishonest(*j)).expect("validated");
            rotated = source.phase_qubit(first_honest, phi)?;
            &rotated
        }
        _ => source,
    };

    let requested = assignment.radians();
    let pre = policy.and_then(|p| p.premeasure(&side, roles.dishonest.len()));
    if let Some(pre) = &pre {
        if pre.len() != roles.dishonest.len() {
            return Err(Error::Protocol("pre-measurement basis count mismatch".into()));
        }
    }
    let basis: Vec<f64> = (0..n)
        .map(|j| match roles.dishonest.iter().position(|&d| d == j) {
            Some(k) => pre.as_ref().map_or(0.0, |p| p[k]),
            None => requested[j],
        })
        .collect();
    let bits = sample_xy_plane(state, &basis, rng)?;

    let mut outcomes: Vec<Outcome> = bits.iter().map(|&b| Outcome::from_bit(b)).collect();
    if roles.honest_loss > 0.0 {
        for (j, o) in outcomes.iter_mut().enumerate() {
            if !roles.is_dishonest(j) && rng.random::<f64>() < roles.honest_loss {
                *o = Outcome::Loss;
            }
        }
    }
    if let Some(policy) = policy {
        let d_angles: Vec<f64> = roles.dishonest.iter().map(|&j| requested[j]).collect();
        let measured: Option<Vec<u8>> =
            pre.as_ref().map(|_| roles.dishonest.iter().map(|&j| bits[j]).collect());
        let replies = policy.respond(&side, assignment.kind(), &d_angles, measured.as_deref());
        if replies.len() != roles.dishonest.len() {
            return Err(Error::Protocol(format!(
                "coalition answered {} of {} requests",
                replies.len(),
                roles.dishonest.len()
            )));
        }
        for (&j, o) in roles.dishonest.iter().zip(replies) {
            outcomes[j] = o;
        }
    }
    RoundRecord::new(round, assignment, outcomes)
}

/// Draws side information and the angle assignment, then plays one round.
pub fn run_round<R: Rng>(
    source: &DensityMatrix,
    roles: &PartyRoles,
    kind: ProtocolKind,
    round: u64,
    rng: &mut R,
) -> Result<RoundRecord> {
    roles.validate()?;
    let side = roles
        .policy
        .as_ref()
        .filter(|_| !roles.dishonest.is_empty())
        .map(|p| p.side_info(kind, rng));
    let assignment = sample_angles(kind, roles.n, rng)?;
    run_round_with_assignment(source, roles, assignment, side, round, rng)
}

/// Plays `rounds` independent rounds in parallel; record `i` uses `round_rng(seed, i)`.
pub fn simulate_rounds(
    source: &DensityMatrix,
    roles: &PartyRoles,
    kind: ProtocolKind,
    rounds: u64,
    seed: u64,
) -> Result<Vec<RoundRecord>> {
    roles.validate()?;
    (0..rounds)
        .into_par_iter()
        .map(|i| run_round(source, roles, kind, i, &mut round_rng(seed, i)))
        .collect()
}

pub fn estimate_pass_probability(
    source: &DensityMatrix,
    roles: &PartyRoles,
    kind: ProtocolKind,
    rounds: u64,
    seed: u64,
) -> Result<PassStats> {
    if rounds == 0 {
        return Err(Error::Range("rounds must be at least 1".into()));
    }
    PassStats::from_records(&simulate_rounds(source, roles, kind, rounds, seed)?)
}

/// Angle-averaged pass probability of the θ-test, `F₀ + ½(1 − F₀ − F_π)`.
pub fn exact_pass_probability_theta(rho: &DensityMatrix) -> Result<f64> {
    let n = rho.num_qubits();
    let f0 = rho.overlap_with_pure(&ghz_state(n, 0.0)?)?;
    let fpi = rho.overlap_with_pure(&ghz_state(n, PI)?)?;
    Ok(f0 + 0.5 * (1.0 - f0 - fpi))
}

/// Average of the per-setting pass probability over all `2^{n−1}` XY settings.
pub fn exact_pass_probability_xy(rho: &DensityMatrix) -> Result<f64> {
    let settings = xy_settings(rho.num_qubits())?;
    let total: f64 = settings
        .iter()
        .map(|a| setting_pass_probability(rho, a.angles()))
        .sum::<Result<f64>>()?;
    Ok(total / settings.len() as f64)
}

pub fn exact_pass_probability(rho: &DensityMatrix, kind: ProtocolKind) -> Result<f64> {
    match kind {
        ProtocolKind::Theta => exact_pass_probability_theta(rho),
        ProtocolKind::Xy => exact_pass_probability_xy(rho),
    }
}

/// Every XY assignment with an even number of π/2 entries.
pub fn xy_settings(n: usize) -> Result<Vec<AngleAssignment>> {
    if n < 2 {
        return Err(Error::Range(format!("need at least 2 parties, got {n}")));
    }
    (0u64..1 << n)
        .filter(|m| m.count_ones() % 2 == 0)
        .map(|m| {
            let angles = (0..n)
                .map(|j| {
                    MeasurementAngle::wrapped(if (m >> j) & 1 == 1 { FRAC_PI_2 } else { 0.0 })
                })
                .collect();
            AngleAssignment::new(ProtocolKind::Xy, angles)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{apply_channel, ChannelSpec, PureState};
    use rand::SeedableRng;

    fn ma(v: &[f64]) -> Vec<MeasurementAngle> {
        v.iter().map(|&t| MeasurementAngle::wrapped(t)).collect()
    }

    /// Replays predetermined uniform draws.
    struct Scripted(Vec<bool>);
    impl RngCore for Scripted {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }
        fn next_u64(&mut self) -> u64 {
            // `random::<bool>()` tests the top bit of a u32.
            if self.0.remove(0) {
                u64::MAX
            } else {
                0
            }
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0)
        }
    }

    #[test]
    fn xy_completion_examples() {
        let a = sample_angles(ProtocolKind::Xy, 3, &mut Scripted(vec![false, false])).unwrap();
        assert_eq!(a.radians(), vec![0.0, 0.0, 0.0]);
        assert_eq!(a.parity(), 0);
        let a = sample_angles(ProtocolKind::Xy, 3, &mut Scripted(vec![true, false])).unwrap();
        assert_eq!(a.radians(), vec![FRAC_PI_2, 0.0, FRAC_PI_2]);
        assert_eq!(a.parity(), 1);
        assert!(sample_angles(ProtocolKind::Xy, 1, &mut Scripted(vec![])).is_err());
    }

    #[test]
    fn parity_test_examples() {
        let even = AngleAssignment::new(ProtocolKind::Theta, ma(&[0.0, 0.0, 0.0])).unwrap();
        let odd = AngleAssignment::new(ProtocolKind::Xy, ma(&[FRAC_PI_2, FRAC_PI_2, 0.0])).unwrap();
        use Outcome::*;
        assert!(parity_test(&even, &[Zero, Zero, Zero]).unwrap());
        assert!(parity_test(&odd, &[One, Zero, Zero]).unwrap());
        assert!(!parity_test(&even, &[One, Zero, Zero]).unwrap());
        assert!(matches!(
            parity_test(&even, &[Loss, Zero, Zero]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn assignment_invariants_enforced() {
        assert!(AngleAssignment::new(ProtocolKind::Theta, ma(&[0.3, 0.3])).is_err());
        assert!(AngleAssignment::new(ProtocolKind::Xy, ma(&[0.3, PI - 0.3])).is_err());
        let a = AngleAssignment::new(ProtocolKind::Theta, ma(&[0.3, PI - 0.3])).unwrap();
        assert_eq!(a.parity(), 1);
    }

    #[test]
    fn fixed_angle_sampler_respects_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for party in 0..4 {
            let a = sample_angles_with_fixed(
                ProtocolKind::Theta,
                4,
                party,
                MeasurementAngle::new(1.0).unwrap(),
                &mut rng,
            )
            .unwrap();
            assert_eq!(a.angles()[party].radians(), 1.0);
        }
    }

    #[test]
    fn exact_theta_examples() {
        for n in 2..=5 {
            let g = ghz_state(n, 0.0).unwrap().to_density().unwrap();
            assert!((exact_pass_probability_theta(&g).unwrap() - 1.0).abs() < 1e-12);
            assert!((exact_pass_probability_xy(&g).unwrap() - 1.0).abs() < 1e-12);
            let mm = DensityMatrix::maximally_mixed(n).unwrap();
            assert!((exact_pass_probability_theta(&mm).unwrap() - 0.5).abs() < 1e-12);
            assert!((exact_pass_probability_xy(&mm).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    /// Brute-force oracle: midpoint-rule average of the per-setting pass
    /// probability over the free angles of an n = 3 θ-assignment.
    fn angle_average_oracle(rho: &DensityMatrix, grid: usize) -> f64 {
        let h = PI / grid as f64;
        let mut acc = 0.0;
        for i in 0..grid {
            for j in 0..grid {
                let (a, b) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let c = MeasurementAngle::wrapped(-(a + b)).radians();
                acc += setting_pass_probability(rho, &ma(&[a, b, c])).unwrap();
            }
        }
        acc / (grid * grid) as f64
    }

    #[test]
    fn dephased_ghz_exact_matches_oracle() {
        let g = ghz_state(3, 0.0).unwrap().to_density().unwrap();
        let deph = apply_channel(&g, &ChannelSpec::GhzDephasing { p: 1.0 }).unwrap();
        let oracle = angle_average_oracle(&deph, 64);
        // Frozen from the oracle: the fully dephased GHZ has no X–Y correlations.
        assert!((oracle - 0.5).abs() < 1e-12);
        assert!((exact_pass_probability_theta(&deph).unwrap() - oracle).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let rho = DensityMatrix::random(3, &mut rng).unwrap();
            let exact = exact_pass_probability_theta(&rho).unwrap();
            assert!((exact - angle_average_oracle(&rho, 48)).abs() < 1e-9);
        }
    }

    #[test]
    fn rotated_bell_plus_xy_raw_average() {
        // Enumeration oracle over the 4 XY settings, honest measurement of all three
        // qubits: the unentangled |+⟩ makes every Y request on it a coin flip, while
        // X requests reproduce the two-qubit correlator cos(π/4) or sin(π/4).
        let rho = ghz_state(2, PI / 4.0)
            .unwrap()
            .tensor(&PureState::plus())
            .unwrap()
            .to_density()
            .unwrap();
        let mut total = 0.0;
        for a in xy_settings(3).unwrap() {
            total += setting_pass_probability(&rho, a.angles()).unwrap();
        }
        let oracle = total / 4.0;
        let expect = 0.5 + (2f64.sqrt() / 4.0) * 0.5;
        assert!((oracle - expect).abs() < 1e-12);
        assert!((exact_pass_probability_xy(&rho).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn honest_rounds_on_ideal_ghz_always_pass() {
        let g = ghz_state(4, 0.0).unwrap().to_density().unwrap();
        let roles = PartyRoles::all_honest(4);
        for kind in [ProtocolKind::Theta, ProtocolKind::Xy] {
            let s = estimate_pass_probability(&g, &roles, kind, 6000, 3).unwrap();
            assert_eq!(s.estimate, 1.0);
            assert_eq!(s.stderr, 0.0);
            assert_eq!(s.passes, 6000);
        }
    }

    struct AlwaysLoss;
    impl CoalitionPolicy for AlwaysLoss {
        fn side_info(&self, _: ProtocolKind, _: &mut dyn RngCore) -> SideInfo {
            SideInfo::default()
        }
        fn respond(&self, _: &SideInfo, _: ProtocolKind, a: &[f64], _: Option<&[u8]>) -> Vec<Outcome> {
            vec![Outcome::Loss; a.len()]
        }
    }

    struct Silent;
    impl CoalitionPolicy for Silent {
        fn side_info(&self, _: ProtocolKind, _: &mut dyn RngCore) -> SideInfo {
            SideInfo::default()
        }
        fn respond(&self, _: &SideInfo, _: ProtocolKind, _: &[f64], _: Option<&[u8]>) -> Vec<Outcome> {
            Vec::new()
        }
    }

    #[test]
    fn degenerate_policies() {
        let g = ghz_state(3, 0.0).unwrap().to_density().unwrap();
        let roles = PartyRoles::with_coalition(3, vec![1], Arc::new(AlwaysLoss));
        let recs = simulate_rounds(&g, &roles, ProtocolKind::Theta, 200, 1).unwrap();
        assert!(recs.iter().all(|r| r.passed.is_none()));
        assert!(matches!(PassStats::from_records(&recs), Err(Error::UndefinedEstimate)));
        let rates = {
            let mut l = [0usize; 3];
            recs.iter().for_each(|r| {
                r.outcomes.iter().enumerate().for_each(|(j, o)| l[j] += o.is_loss() as usize)
            });
            l
        };
        assert_eq!(rates, [0, 200, 0]);

        let roles = PartyRoles::with_coalition(3, vec![2], Arc::new(Silent));
        assert!(matches!(
            run_round(&g, &roles, ProtocolKind::Xy, 0, &mut round_rng(0, 0)),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            estimate_pass_probability(&g, &PartyRoles::all_honest(3), ProtocolKind::Xy, 0, 0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn honest_loss_leaves_estimate_unbiased() {
        let rho = apply_channel(
            &ghz_state(3, 0.0).unwrap().to_density().unwrap(),
            &ChannelSpec::Depolarizing { v: 0.668 },
        )
        .unwrap();
        let exact = exact_pass_probability_theta(&rho).unwrap();
        let roles = PartyRoles::all_honest(3).honest_loss(0.2);
        let s = estimate_pass_probability(&rho, &roles, ProtocolKind::Theta, 40_000, 17).unwrap();
        assert!((s.estimate - exact).abs() < 4.0 * s.stderr);
        for l in &s.loss_rates {
            assert!((l - 0.2).abs() < 4.0 * (0.16f64 / 40_000.0).sqrt());
        }
    }

    #[test]
    fn json_line_round_trip() {
        let a = AngleAssignment::new(ProtocolKind::Xy, ma(&[FRAC_PI_2, 0.0, FRAC_PI_2])).unwrap();
        let r = RoundRecord::new(7, a, vec![Outcome::One, Outcome::Loss, Outcome::Zero]).unwrap();
        let line = r.to_json_line();
        assert_eq!(
            line,
            format!(
                "{{\"round\":7,\"angles\":[{},0.0,{}],\"outcomes\":[1,\"LOSS\",0],\"passed\":null}}",
                FRAC_PI_2, FRAC_PI_2
            )
        );
        assert_eq!(RoundRecord::from_json_line(&line, ProtocolKind::Xy).unwrap(), r);
    }

    #[test]
    fn seed_determinism() {
        let g = DensityMatrix::random(3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let roles = PartyRoles::all_honest(3);
        let a = simulate_rounds(&g, &roles, ProtocolKind::Theta, 500, 42).unwrap();
        let b = simulate_rounds(&g, &roles, ProtocolKind::Theta, 500, 42).unwrap();
        assert_eq!(a, b);
    }
}
