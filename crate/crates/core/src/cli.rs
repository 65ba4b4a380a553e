//! Command-line front end.
//!
//! Settings come from flags, then from an optional `--config` file of `key = value`
//! lines (keys are the long flag names without dashes, e.g. `lambda-max = 0.1`),
//! then from defaults. Flags win over the file.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::adversary::{make_strategy, theta_cheat_pass_curve, xy_cheat_pass_curve, CheatStrategy, Coalition};
use crate::analytics::{
    dishonest_fidelity_bound, honest_fidelity_bound, verdict, Decision, TrustModel, Verdict,
};
use crate::error::{Error, Result};
use crate::params::parse_real;
use crate::protocol::{
    round_rng, run_round_with_assignment, sample_angles_with_fixed, CoalitionPolicy, PartyRoles,
    PassStats, ProtocolKind,
};
use crate::qstate::{partial_trace, MeasurementAngle};
use crate::simnet::{aux_rng, run_session, SessionConfig, Transcript};
use crate::sources::{prepare, SourceModel};

#[derive(Debug, Parser)]
#[command(name = "ghzverify", version, about = "Simulate and analyse GHZ entanglement verification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run a session and issue a GME verdict (exit 0 verified, 2 inconclusive, 1 error).
    Verify,
    /// Cheating bounds and simulated optimal-cheat pass rates over a loss grid.
    Curves,
    /// Pass probability of the product guesser as a function of the dishonest angle.
    DishonestAngleProfile,
    /// Full session with message log, round records, audits and summary.
    Session,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub rounds: Option<u64>,
    #[arg(long, global = true)]
    pub parties: Option<usize>,
    /// theta | xy
    #[arg(long, global = true)]
    pub protocol: Option<String>,
    /// Source model key, e.g. `dephased-ghz:p=0.4` or `depolarized-ghz:pass=0.834`.
    #[arg(long, global = true)]
    pub source: Option<String>,
    /// Cheating strategy key, e.g. `xy-mixed:lambda=0.2`.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// Per-party loss rate the Verifier accepts; also the λ of the GME threshold.
    #[arg(long, global = true)]
    pub lambda_max: Option<f64>,
    /// Output file (verify, curves, profile) or directory (session).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// all-honest | dishonest-allowed
    #[arg(long, global = true)]
    pub trust: Option<String>,
    /// Required margin in standard errors.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Comma-separated dishonest party indices (default: the last party when a strategy is set).
    #[arg(long, global = true)]
    pub dishonest: Option<String>,
    /// I.i.d. loss probability of honest parties.
    #[arg(long, global = true)]
    pub honest_loss: Option<f64>,
    #[arg(long, global = true)]
    pub verifier: Option<usize>,
    /// Phase θ′ of the rotated resource for the angle profile (accepts `pi/4`).
    #[arg(long, global = true)]
    pub theta_prime: Option<String>,
    /// Loss grid for `curves`: `a,b,c` or `start:stop:step`.
    #[arg(long, global = true)]
    pub lambdas: Option<String>,
    /// Dishonest-angle grid for the profile: `a,b,c` or `start:stop:step`.
    #[arg(long, global = true)]
    pub thetas: Option<String>,
}

const CONFIG_KEYS: &[&str] = &[
    "seed", "rounds", "parties", "protocol", "source", "strategy", "lambda-max", "out", "format",
    "trust", "sigma", "dishonest", "honest-loss", "verifier", "theta-prime", "lambdas", "thetas",
];

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: u64,
    pub parties: usize,
    pub protocol: ProtocolKind,
    pub source: Option<SourceModel>,
    pub strategy: Option<CheatStrategy>,
    pub lambda_max: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub trust: TrustModel,
    pub sigma: f64,
    pub dishonest: Option<Vec<usize>>,
    pub honest_loss: f64,
    pub verifier: usize,
    pub theta_prime: f64,
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
}

pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim().replace('_', "-");
        if !CONFIG_KEYS.contains(&k.as_str()) {
            return Err(Error::UnknownKey(k));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

/// `a,b,c` or inclusive `start:stop:step`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let grid = if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(parse_real).collect::<Result<_>>()?;
        let [a, b, step] = parts[..] else {
            return Err(Error::InvalidInput(format!("range '{s}' must be start:stop:step")));
        };
        if !(step > 0.0) || b < a {
            return Err(Error::InvalidInput(format!("empty range '{s}'")));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| a + step * i as f64).collect()
    } else {
        s.split(',').map(parse_real).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    Ok(grid)
}

fn default_lambdas() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

fn default_thetas() -> Vec<f64> {
    (0..180).map(|i| PI * i as f64 / 180.0).collect()
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => parse_config_file(&fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        let get = |flag: Option<String>, key: &str| flag.or_else(|| file.get(key).cloned());
        fn num<T: std::str::FromStr>(v: Option<String>, key: &str) -> Result<Option<T>> {
            v.map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|_| Error::InvalidInput(format!("bad value '{s}' for {key}")))
            })
            .transpose()
        }
        let real = |v: Option<String>| v.map(|s| parse_real(&s)).transpose();

        let parties = num(get(args.parties.map(|x| x.to_string()), "parties"), "parties")?.unwrap_or(3);
        if parties < 2 {
            return Err(Error::Range("need at least 2 parties".into()));
        }
        let protocol = get(args.protocol.clone(), "protocol")
            .map(|s| s.parse())
            .transpose()?
            .unwrap_or(ProtocolKind::Theta);
        let format = match get(args.format.map(|f| format!("{f:?}").to_lowercase()), "format") {
            Some(s) => Some(Format::from_str(&s, true).map_err(|_| Error::UnknownKey(s))?),
            None => None,
        };
        let dishonest = get(args.dishonest.clone(), "dishonest")
            .map(|s| {
                s.split(',')
                    .map(|x| x.trim().parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad party '{x}'"))))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let cfg = Self {
            seed: num(get(args.seed.map(|x| x.to_string()), "seed"), "seed")?.unwrap_or(0),
            rounds: num(get(args.rounds.map(|x| x.to_string()), "rounds"), "rounds")?.unwrap_or(6000),
            parties,
            protocol,
            source: get(args.source.clone(), "source")
                .map(|s| SourceModel::parse(&s, parties))
                .transpose()?,
            strategy: get(args.strategy.clone(), "strategy")
                .map(|s| make_strategy(&s))
                .transpose()?,
            lambda_max: real(get(args.lambda_max.map(|x| x.to_string()), "lambda-max"))?,
            out: get(args.out.as_ref().map(|p| p.display().to_string()), "out").map(PathBuf::from),
            format,
            trust: get(args.trust.clone(), "trust")
                .map(|s| s.parse())
                .transpose()?
                .unwrap_or(TrustModel::DishonestAllowed),
            sigma: real(get(args.sigma.map(|x| x.to_string()), "sigma"))?.unwrap_or(3.0),
            dishonest,
            honest_loss: real(get(args.honest_loss.map(|x| x.to_string()), "honest-loss"))?.unwrap_or(0.0),
            verifier: num(get(args.verifier.map(|x| x.to_string()), "verifier"), "verifier")?.unwrap_or(0),
            theta_prime: real(get(args.theta_prime.clone(), "theta-prime"))?.unwrap_or(FRAC_PI_4),
            lambdas: get(args.lambdas.clone(), "lambdas")
                .map(|s| parse_grid(&s))
                .transpose()?
                .unwrap_or_else(default_lambdas),
            thetas: get(args.thetas.clone(), "thetas")
                .map(|s| parse_grid(&s))
                .transpose()?
                .unwrap_or_else(default_thetas),
        };
        if cfg.rounds == 0 {
            return Err(Error::Range("rounds must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn session_config(&self) -> SessionConfig {
        let dishonest = match (&self.strategy, &self.dishonest) {
            (_, Some(d)) => d.clone(),
            (Some(_), None) => vec![self.parties - 1],
            (None, None) => Vec::new(),
        };
        let lambda_max = self.lambda_max.unwrap_or_else(|| {
            self.strategy
                .as_ref()
                .map_or(0.0, |s| s.target_loss_rate(self.protocol))
        });
        SessionConfig {
            n: self.parties,
            verifier: self.verifier,
            kind: self.protocol,
            source: self.source.clone(),
            strategy: self.strategy.clone(),
            dishonest,
            rounds: self.rounds,
            lambda_max,
            seed: self.seed,
            honest_loss: self.honest_loss,
        }
    }
}

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A table of optional numbers, emitted as CSV or a JSON array of objects.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut s = self.header.join(",");
                s.push('\n');
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(|c| c.map(fmt_num).unwrap_or_default()).collect();
                    s.push_str(&cells.join(","));
                    s.push('\n');
                }
                s
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        Value::Object(
                            self.header
                                .iter()
                                .zip(r)
                                .map(|(h, c)| (h.to_string(), c.map_or(Value::Null, |x| json!(x))))
                                .collect(),
                        )
                    })
                    .collect();
                serde_json::to_string_pretty(&rows).expect("table serializes") + "\n"
            }
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Independent seed for sweep point `index`.
fn point_seed(seed: u64, index: u64) -> u64 {
    aux_rng(seed, index).next_u64()
}

/// Session verdict; forced INCONCLUSIVE when a loss cap was exceeded.
fn session_verdict(cfg: &RunConfig, session: &SessionConfig, t: &Transcript) -> Result<(PassStats, Verdict)> {
    let stats = t.stats.clone().ok_or(Error::UndefinedEstimate)?;
    let mut v = verdict(&stats, cfg.protocol, cfg.trust, session.lambda_max, cfg.sigma)?;
    if t.aborted {
        v.decision = Decision::Inconclusive;
    }
    Ok((stats, v))
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Decision> {
    let session = cfg.session_config();
    let t = run_session(&session)?;
    let (stats, v) = session_verdict(cfg, &session, &t)?;
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => {
            let doc = json!({
                "protocol": cfg.protocol,
                "source": session.source.as_ref().map(|s| s.to_string()),
                "strategy": cfg.strategy.as_ref().map(|s| s.key().to_string()),
                "seed": cfg.seed,
                "stats": stats,
                "fidelity_bounds": {
                    "honest": honest_fidelity_bound(stats.estimate),
                    "dishonest": dishonest_fidelity_bound(stats.estimate),
                },
                "verdict": v,
                "aborted": t.aborted,
                "audits": t.audits,
            });
            serde_json::to_string_pretty(&doc).expect("verify report serializes") + "\n"
        }
        Format::Csv => {
            let mut s = String::from(
                "estimate,stderr,valid_rounds,honest_bound,dishonest_bound,threshold,margin,decision\n",
            );
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_num(stats.estimate),
                fmt_num(stats.stderr),
                stats.valid_rounds,
                fmt_num(honest_fidelity_bound(stats.estimate)),
                fmt_num(dishonest_fidelity_bound(stats.estimate)),
                fmt_num(v.threshold),
                fmt_num(v.margin),
                v.decision
            ));
            s
        }
    };
    emit(cfg.out.as_deref(), &text)?;
    Ok(v.decision)
}

fn simulate_point(cfg: &RunConfig, kind: ProtocolKind, key: &str, seed: u64) -> Result<Option<PassStats>> {
    let strategy = make_strategy(key)?;
    let mut session = SessionConfig::cheating(cfg.parties, kind, strategy, cfg.rounds, seed);
    session.verifier = cfg.verifier;
    Ok(run_session(&session)?.stats)
}

/// Columns: `lambda, theta_bound, xy_bound, sim_theta, sim_theta_stderr, sim_xy, sim_xy_stderr`.
/// The simulated columns use `theta-rotated-bell:lambda=λ` and `xy-mixed:lambda=λ`; XY
/// columns are empty above λ = 1/2.
pub fn cmd_curves(cfg: &RunConfig) -> Result<String> {
    for &l in &cfg.lambdas {
        if !(0.0..1.0).contains(&l) {
            return Err(Error::Range(format!("λ = {l} outside [0, 1)")));
        }
    }
    let rows = cfg
        .lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            let i = i as u64;
            let theta = simulate_point(cfg, ProtocolKind::Theta, &format!("theta-rotated-bell:lambda={l}"), point_seed(cfg.seed, 2 * i))?;
            let (xy_bound, xy) = if l <= 0.5 {
                let s = simulate_point(cfg, ProtocolKind::Xy, &format!("xy-mixed:lambda={l}"), point_seed(cfg.seed, 2 * i + 1))?;
                (Some(xy_cheat_pass_curve(l)?), s)
            } else {
                (None, None)
            };
            Ok(vec![
                Some(l),
                Some(theta_cheat_pass_curve(l)?),
                xy_bound,
                theta.as_ref().map(|s| s.estimate),
                theta.as_ref().map(|s| s.stderr),
                xy.as_ref().map(|s| s.estimate),
                xy.as_ref().map(|s| s.stderr),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let table = Table {
        header: vec!["lambda", "theta_bound", "xy_bound", "sim_theta", "sim_theta_stderr", "sim_xy", "sim_xy_stderr"],
        rows,
    };
    Ok(table.render(cfg.format.unwrap_or(Format::Csv)))
}

/// Columns: `theta, optimal, simulated, simulated_stderr`.
///
/// `theta` is the angle requested from the (first) dishonest party. The resource
/// defaults to `rotated-bell-plus` with phase `θ′`, and the coalition answers as
/// `product-guesser:theta=θ′`. `optimal` is the exact pass probability of that
/// response at a representative honest assignment; `simulated` is a single-shot
/// estimate with the dishonest angle pinned.
pub fn cmd_dishonest_angle_profile(cfg: &RunConfig) -> Result<String> {
    let n = cfg.parties;
    let source = match &cfg.source {
        Some(m) => m.clone(),
        None => SourceModel::RotatedBellPlus {
            n,
            theta: cfg.theta_prime,
        },
    };
    let rho = prepare(&source)?;
    let dishonest = cfg.dishonest.clone().unwrap_or_else(|| vec![n - 1]);
    let coalition = Coalition::new(n, &dishonest, cfg.verifier)?;
    let d0 = coalition.dishonest()[0];
    let tp = cfg.theta_prime.rem_euclid(2.0 * PI);
    let guesser = make_strategy(&format!("product-guesser:theta={tp}"))?;
    let policy: Arc<dyn CoalitionPolicy> = Arc::new(guesser);
    let roles = PartyRoles::with_coalition(n, coalition.dishonest().to_vec(), policy.clone());
    let rho_h = partial_trace(&rho, coalition.honest())?;

    let rows = cfg
        .thetas
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| {
            let angle = MeasurementAngle::new(theta)?;
            // Representative assignment: the dependent honest party takes −θ_D.
            let mut rep = vec![0.0; n];
            rep[d0] = theta;
            rep[coalition.honest()[coalition.k() - 1]] = MeasurementAngle::wrapped(-theta).radians();
            let parity = crate::qstate::sum_parity(&rep, 1e-9).expect("constructed to satisfy the constraint");
            let hon: Vec<f64> = coalition.honest().iter().map(|&j| rep[j]).collect();
            let guess = u8::from((tp + theta).cos() < 0.0);
            let sign = if parity ^ guess == 0 { 1.0 } else { -1.0 };
            let optimal = (0.5 * (1.0 + sign * rho_h.parity_correlator(&hon)?)).clamp(0.0, 1.0);

            let seed = point_seed(cfg.seed, i as u64);
            let records = (0..cfg.rounds)
                .map(|r| {
                    let mut rng = round_rng(seed, r);
                    let side = policy.side_info(ProtocolKind::Theta, &mut rng);
                    let a = sample_angles_with_fixed(ProtocolKind::Theta, n, d0, angle, &mut rng)?;
                    run_round_with_assignment(&rho, &roles, a, Some(side), r, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let stats = PassStats::from_records(&records)?;
            Ok(vec![Some(theta), Some(optimal), Some(stats.estimate), Some(stats.stderr)])
        })
        .collect::<Result<Vec<_>>>()?;
    let table = Table {
        header: vec!["theta", "optimal", "simulated", "simulated_stderr"],
        rows,
    };
    Ok(table.render(cfg.format.unwrap_or(Format::Csv)))
}

pub fn cmd_session(cfg: &RunConfig) -> Result<Transcript> {
    let session = cfg.session_config();
    let t = run_session(&session)?;
    let extra = session_verdict(cfg, &session, &t).ok().map(|(_, v)| {
        json!({
            "source": session.source.as_ref().map(|s| s.to_string()),
            "strategy": cfg.strategy.as_ref().map(|s| s.key().to_string()),
            "verdict": v,
        })
    });
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("session-out"));
    t.export(&dir, extra)?;
    let summary = fs::read_to_string(dir.join("summary.json"))?;
    io::stdout().lock().write_all(summary.as_bytes())?;
    Ok(t)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = RunConfig::resolve(&cli.global)?;
    match cli.command {
        Command::Verify => Ok(match cmd_verify(&cfg)? {
            Decision::GmeVerified => 0,
            Decision::Inconclusive => 2,
        }),
        Command::Curves => {
            emit(cfg.out.as_deref(), &cmd_curves(&cfg)?)?;
            Ok(0)
        }
        Command::DishonestAngleProfile => {
            emit(cfg.out.as_deref(), &cmd_dishonest_angle_profile(&cfg)?)?;
            Ok(0)
        }
        Command::Session => {
            cmd_session(&cfg)?;
            Ok(0)
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
