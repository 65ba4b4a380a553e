//! Message-passing session harness with loss caps, transcripts and loss audits.
//!
//! The Verifier sends one angle message per party, the source and parties produce
//! outcomes (the joint measurement of the shared state is sampled in one step, since
//! the parties' measurements commute), and the outcome messages reach the Verifier
//! in a shuffled order. Each round is a barrier: the parity test only runs once all
//! `n` replies have arrived.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::adversary::{CheatStrategy, Coalition};
use crate::error::{Error, Result};
use crate::protocol::{
    round_rng, run_round_with_assignment, sample_angles, AngleAssignment, CoalitionPolicy,
    Outcome, PartyRoles, PassStats, ProtocolKind, RoundRecord,
};
use crate::qstate::{ghz_state, DensityMatrix};
use crate::sources::{prepare, SourceModel};

const SHUFFLE_SALT: u64 = 0x5eed_0f_de11_7e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Message {
    Angle { round: u64, party: usize, theta: f64 },
    Outcome { round: u64, party: usize, outcome: Outcome },
    Abort { round: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub sender: usize,
    /// `None` is a broadcast.
    pub receiver: Option<usize>,
    #[serde(flatten)]
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub n: usize,
    pub verifier: usize,
    pub kind: ProtocolKind,
    /// `None` uses the strategy's native resource, or ideal GHZ without a strategy.
    pub source: Option<SourceModel>,
    pub strategy: Option<CheatStrategy>,
    pub dishonest: Vec<usize>,
    pub rounds: u64,
    pub lambda_max: f64,
    pub seed: u64,
    pub honest_loss: f64,
}

impl SessionConfig {
    pub fn honest(n: usize, kind: ProtocolKind, source: Option<SourceModel>, rounds: u64, seed: u64) -> Self {
        Self {
            n,
            verifier: 0,
            kind,
            source,
            strategy: None,
            dishonest: Vec::new(),
            rounds,
            lambda_max: 0.0,
            seed,
            honest_loss: 0.0,
        }
    }

    /// A single dishonest party `n − 1` running `strategy` on its native resource.
    pub fn cheating(n: usize, kind: ProtocolKind, strategy: CheatStrategy, rounds: u64, seed: u64) -> Self {
        Self {
            lambda_max: strategy.target_loss_rate(kind),
            strategy: Some(strategy),
            dishonest: vec![n - 1],
            ..Self::honest(n, kind, None, rounds, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Range("rounds must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.lambda_max) {
            return Err(Error::Range(format!("λ_max = {} outside [0, 1)", self.lambda_max)));
        }
        if !(0.0..=1.0).contains(&self.honest_loss) {
            return Err(Error::Range("honest loss probability outside [0, 1]".into()));
        }
        if let Some(m) = &self.source {
            if m.n() != self.n {
                return Err(Error::Dimension {
                    left: m.n(),
                    right: self.n,
                });
            }
        }
        match (&self.strategy, self.dishonest.is_empty()) {
            (Some(s), false) => s.validate_for(self.kind)?,
            (None, false) => return Err(Error::InvalidInput("dishonest parties need a strategy".into())),
            (Some(_), true) => return Err(Error::InvalidInput("strategy given without dishonest parties".into())),
            (None, true) => {}
        }
        Coalition::new(self.n, &self.dishonest, self.verifier)?;
        Ok(())
    }

    pub fn resolve_source(&self) -> Result<DensityMatrix> {
        match (&self.source, &self.strategy) {
            (Some(m), _) => prepare(m),
            (None, Some(s)) => s.native_source(&Coalition::new(self.n, &self.dishonest, self.verifier)?),
            (None, None) => ghz_state(self.n, 0.0)?.to_density(),
        }
    }

    pub fn roles(&self) -> PartyRoles {
        let roles = match &self.strategy {
            Some(s) if !self.dishonest.is_empty() => {
                PartyRoles::with_coalition(self.n, self.dishonest.clone(), Arc::new(s.clone()))
            }
            _ => PartyRoles::all_honest(self.n),
        };
        roles.honest_loss(self.honest_loss)
    }

    /// `λ_max + 3√(λ_max(1−λ_max)/rounds)`.
    pub fn loss_cap(&self) -> f64 {
        let l = self.lambda_max;
        l + 3.0 * (l * (1.0 - l) / self.rounds as f64).sqrt()
    }
}

/// Verifier-side state for one round: which angles went out, which replies came back.
#[derive(Debug, Clone)]
pub struct RoundCollector {
    round: u64,
    verifier: usize,
    assignment: AngleAssignment,
    sent: Vec<bool>,
    replies: Vec<Option<Outcome>>,
}

impl RoundCollector {
    pub fn new(round: u64, verifier: usize, assignment: AngleAssignment) -> Self {
        let n = assignment.len();
        Self {
            round,
            verifier,
            assignment,
            sent: vec![false; n],
            replies: vec![None; n],
        }
    }

    /// Angle messages for every party, marking them as sent.
    pub fn dispatch(&mut self) -> Vec<Envelope> {
        let thetas = self.assignment.radians();
        thetas
            .iter()
            .enumerate()
            .map(|(party, &theta)| {
                self.sent[party] = true;
                Envelope {
                    sender: self.verifier,
                    receiver: Some(party),
                    message: Message::Angle {
                        round: self.round,
                        party,
                        theta,
                    },
                }
            })
            .collect()
    }

    pub fn receive(&mut self, env: &Envelope) -> Result<()> {
        let Message::Outcome {
            round,
            party,
            outcome,
        } = env.message
        else {
            return Err(Error::Protocol("verifier expected an outcome message".into()));
        };
        if round != self.round || party >= self.replies.len() || env.sender != party {
            return Err(Error::Protocol(format!("misaddressed outcome for round {round}")));
        }
        if !self.sent[party] {
            return Err(Error::Protocol(format!("party {party} answered before receiving its angle")));
        }
        if self.replies[party].replace(outcome).is_some() {
            return Err(Error::Protocol(format!("party {party} answered twice in round {round}")));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<RoundRecord> {
        let outcomes = self
            .replies
            .iter()
            .enumerate()
            .map(|(j, o)| {
                o.ok_or_else(|| Error::Protocol(format!("party {j} sent no response in round {}", self.round)))
            })
            .collect::<Result<Vec<_>>>()?;
        RoundRecord::new(self.round, self.assignment, outcomes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditTest {
    ChiSquare,
    KolmogorovSmirnov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditStatus {
    #[serde(rename = "clean")]
    Clean,
    #[serde(rename = "flagged")]
    Flagged,
    #[serde(rename = "insufficient data")]
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyAudit {
    pub party: usize,
    pub loss_events: u64,
    pub test: AuditTest,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub status: AuditStatus,
}

impl PartyAudit {
    pub fn flagged(&self) -> bool {
        self.status == AuditStatus::Flagged
    }
}

pub const AUDIT_MIN_LOSSES: u64 = 100;
pub const AUDIT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub kind: ProtocolKind,
    pub seed: u64,
    pub messages: Vec<Envelope>,
    pub records: Vec<RoundRecord>,
    /// `None` when every round had a loss.
    pub stats: Option<PassStats>,
    pub loss_rates: Vec<f64>,
    pub loss_cap: f64,
    /// Parties whose loss rate exceeded the cap.
    pub over_cap: Vec<usize>,
    pub aborted: bool,
    pub audits: Vec<PartyAudit>,
}

pub fn run_session(config: &SessionConfig) -> Result<Transcript> {
    config.validate()?;
    let source = config.resolve_source()?;
    let roles = config.roles();
    let policy: Option<&dyn CoalitionPolicy> = roles.policy.as_deref().filter(|_| !roles.dishonest.is_empty());

    let rounds: Vec<(Vec<Envelope>, RoundRecord)> = (0..config.rounds)
        .into_par_iter()
        .map(|i| {
            let mut rng = round_rng(config.seed, i);
            let side = policy.map(|p| p.side_info(config.kind, &mut rng));
            let assignment = sample_angles(config.kind, config.n, &mut rng)?;
            let mut verifier = RoundCollector::new(i, config.verifier, assignment.clone());
            let mut log = verifier.dispatch();

            let produced = run_round_with_assignment(&source, &roles, assignment, side, i, &mut rng)?;
            let mut replies: Vec<Envelope> = produced
                .outcomes
                .iter()
                .enumerate()
                .map(|(party, &outcome)| Envelope {
                    sender: party,
                    receiver: Some(config.verifier),
                    message: Message::Outcome {
                        round: i,
                        party,
                        outcome,
                    },
                })
                .collect();
            replies.shuffle(&mut round_rng(config.seed ^ SHUFFLE_SALT, i));
            for env in &replies {
                verifier.receive(env)?;
            }
            log.extend(replies);
            Ok((log, verifier.finish()?))
        })
        .collect::<Result<_>>()?;

    let (mut messages, records): (Vec<Vec<Envelope>>, Vec<RoundRecord>) = rounds.into_iter().unzip();
    let mut messages: Vec<Envelope> = messages.drain(..).flatten().collect();

    let loss_rates = loss_rates(&records, config.n);
    let loss_cap = config.loss_cap();
    let over_cap: Vec<usize> = (0..config.n).filter(|&j| loss_rates[j] > loss_cap).collect();
    for &j in &over_cap {
        messages.push(Envelope {
            sender: config.verifier,
            receiver: None,
            message: Message::Abort {
                round: config.rounds,
                reason: format!(
                    "party {j} loss rate {:.6} exceeds cap {:.6}",
                    loss_rates[j], loss_cap
                ),
            },
        });
    }
    let stats = match PassStats::from_records(&records) {
        Ok(s) => Some(s),
        Err(Error::UndefinedEstimate) => None,
        Err(e) => return Err(e),
    };
    let audits = audit_records(&records, config.kind, config.n);
    Ok(Transcript {
        kind: config.kind,
        seed: config.seed,
        messages,
        records,
        stats,
        loss_rates,
        loss_cap,
        aborted: !over_cap.is_empty(),
        over_cap,
        audits,
    })
}

fn loss_rates(records: &[RoundRecord], n: usize) -> Vec<f64> {
    let mut l = vec![0u64; n];
    for r in records {
        for (j, o) in r.outcomes.iter().enumerate() {
            l[j] += u64::from(o.is_loss());
        }
    }
    l.iter().map(|&x| x as f64 / records.len().max(1) as f64).collect()
}

pub fn audit_loss_pattern(transcript: &Transcript) -> Vec<PartyAudit> {
    audit_records(&transcript.records, transcript.kind, transcript.loss_rates.len())
}

/// Per-party test of whether declared losses depend on the requested angle:
/// a 2×2 chi-square of LOSS against basis for XY, a KS uniformity test of the
/// lost angles for θ.
pub fn audit_records(records: &[RoundRecord], kind: ProtocolKind, n: usize) -> Vec<PartyAudit> {
    (0..n)
        .map(|party| {
            let mut lost = Vec::new();
            let mut table = [[0u64; 2]; 2];
            for r in records {
                let theta = r.assignment.radians()[party];
                let is_loss = r.outcomes[party].is_loss();
                if is_loss {
                    lost.push(theta);
                }
                table[usize::from(theta > FRAC_PI_4)][usize::from(is_loss)] += 1;
            }
            let loss_events = lost.len() as u64;
            let test = match kind {
                ProtocolKind::Xy => AuditTest::ChiSquare,
                ProtocolKind::Theta => AuditTest::KolmogorovSmirnov,
            };
            if loss_events < AUDIT_MIN_LOSSES {
                return PartyAudit {
                    party,
                    loss_events,
                    test,
                    statistic: None,
                    p_value: None,
                    status: AuditStatus::InsufficientData,
                };
            }
            let (stat, p) = match kind {
                ProtocolKind::Xy => chi_square_2x2(table),
                ProtocolKind::Theta => ks_uniform(&lost, 0.0, PI),
            };
            PartyAudit {
                party,
                loss_events,
                test,
                statistic: Some(stat),
                p_value: Some(p),
                status: if p < AUDIT_ALPHA {
                    AuditStatus::Flagged
                } else {
                    AuditStatus::Clean
                },
            }
        })
        .collect()
}

/// Pearson chi-square statistic and p-value (1 degree of freedom) for a 2×2 table.
pub fn chi_square_2x2(t: [[u64; 2]; 2]) -> (f64, f64) {
    let [[a, b], [c, d]] = t.map(|r| r.map(|x| x as f64));
    let n = a + b + c + d;
    let den = (a + b) * (c + d) * (a + c) * (b + d);
    if den == 0.0 {
        return (0.0, 1.0);
    }
    let stat = n * (a * d - b * c).powi(2) / den;
    let dist = ChiSquared::new(1.0).expect("one degree of freedom");
    (stat, dist.sf(stat))
}

/// One-sample Kolmogorov–Smirnov test against Uniform[lo, hi]: `(D, p)`, with the
/// asymptotic Kolmogorov distribution and Stephens' small-sample correction.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 1.0);
    }
    let mut u: Vec<f64> = samples.iter().map(|x| (x - lo) / (hi - lo)).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}

/// `Pr[K > x]` for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        let f = -PI * PI / (8.0 * x * x);
        let cdf: f64 = (1..=20)
            .map(|k| (f * ((2 * k - 1) as f64).powi(2)).exp())
            .sum::<f64>()
            * (2.0 * PI).sqrt()
            / x;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=20)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary<'a> {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub rounds: u64,
    pub stats: Option<&'a PassStats>,
    pub loss_rates: &'a [f64],
    pub loss_cap: f64,
    pub over_cap: &'a [usize],
    pub aborted: bool,
    pub audits: &'a [PartyAudit],
}

impl Transcript {
    pub fn summary(&self) -> SessionSummary<'_> {
        SessionSummary {
            protocol: self.kind,
            seed: self.seed,
            rounds: self.records.len() as u64,
            stats: self.stats.as_ref(),
            loss_rates: &self.loss_rates,
            loss_cap: self.loss_cap,
            over_cap: &self.over_cap,
            aborted: self.aborted,
            audits: &self.audits,
        }
    }

    pub fn write_messages<W: Write>(&self, mut out: W) -> Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut out, m).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes `messages.jsonl`, `rounds.jsonl` and `summary.json` into `dir`.
    /// `extra` is merged into the summary object.
    pub fn export(&self, dir: &Path, extra: Option<serde_json::Value>) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_messages(BufWriter::new(fs::File::create(dir.join("messages.jsonl"))?))?;
        crate::protocol::write_jsonl(
            &self.records,
            BufWriter::new(fs::File::create(dir.join("rounds.jsonl"))?),
        )?;
        let mut summary = serde_json::to_value(self.summary()).map_err(|e| Error::Io(e.to_string()))?;
        if let (Some(serde_json::Value::Object(extra)), serde_json::Value::Object(obj)) = (extra, &mut summary) {
            obj.extend(extra);
        }
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("summary.json"), text + "\n")?;
        Ok(())
    }
}

/// Seeded stream for auxiliary draws that must not disturb the round streams.
pub fn aux_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT.rotate_left(17));
    rng.set_stream(stream);
    rng
}
