//! Scenario catalog, sweep driver and reports.
//!
//! A [`Scenario`] is a base config plus an optional sweep over one config
//! field (addressed by a dotted path such as `intervention.n_ai`). Every leg,
//! and the human-only twin when `paired_baseline` is set, runs the same
//! replicate seeds, so deltas are paired differences.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::behavior::ai_posts_in;
use crate::config::{AgentProfile, InterventionConfig, SimulationConfig};
use crate::engine::{map_replicates, SimulationTrace};
use crate::error::Error;
use crate::metrics::{distribution_delta, terminal_distribution, transition_matrix, MeanSd, TransitionMatrix};
use crate::rng::{derive_stream, POPULATION_KEY};
use crate::stance::{Stance, StanceDistribution, StyleTag};
use crate::TOOL_VERSION;

pub const DEFAULT_REPLICATES: u32 = 30;
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_ROUNDS: u32 = 50;
pub const DEFAULT_HUMANS: usize = 200;
pub const DEFAULT_AI: u32 = 80;
pub const POPULATION_SEED: u64 = 7;

pub const COUNT_VALUES: [u32; 6] = [0, 5, 20, 40, 80, 160];
pub const PERIOD_VALUES: [u32; 3] = [1, 4, 8];
pub const WITHDRAWAL_VALUES: [u32; 4] = [10, 20, 30, 50];
pub const VISIBILITY_VALUES: [f64; 3] = [0.0, 0.5, 1.0];

/// Human-only terminal rows of the four topic populations, as (Favor, NI, Against) percentages.
pub const TOPIC_PROFILES: [(&str, [f64; 3]); 4] = [
    ("abortion", [84.5, 8.0, 7.5]),
    ("brexit", [8.0, 81.0, 11.0]),
    ("capitalism", [89.4, 8.5, 2.0]),
    ("feminism", [79.5, 20.5, 0.0]),
];

/// Initial mix of the 50-agent visibility population. Its human-only mean
/// terminal Against share (about 9%) is close to a 10% equilibrium.
pub const VISIBILITY_PROFILE: [f64; 3] = [50.0, 8.0, 42.0];
pub const VISIBILITY_HUMANS: usize = 50;

pub const BUILTIN_SCENARIOS: [&str; 6] = [
    "cross-topic",
    "count-sweep",
    "frequency-sweep",
    "withdrawal-sweep",
    "style-contrast",
    "visibility-sweep",
];

/// Beta-shaped entropy law on [0,1] given by its mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyLaw {
    pub mean: f64,
    pub spread: f64,
}

impl Default for EntropyLaw {
    fn default() -> Self {
        Self {
            mean: 0.35,
            spread: 0.2,
        }
    }
}

impl EntropyLaw {
    /// Beta shape parameters, or `None` when the law is a point mass.
    fn shape(&self) -> Option<(f64, f64)> {
        let m = self.mean.clamp(0.0, 1.0);
        let max_var = m * (1.0 - m);
        if self.spread <= 0.0 || max_var <= 0.0 {
            return None;
        }
        // the Beta family cannot exceed the Bernoulli variance
        let var = (self.spread * self.spread).min(0.999 * max_var);
        let k = max_var / var - 1.0;
        Some((m * k, (1.0 - m) * k))
    }
}

/// Splits `n` into stance counts by largest-remainder rounding. Remainder ties
/// go to the earlier stance in (Favor, NI, Against) order.
pub fn largest_remainder(target: &StanceDistribution, n: usize) -> [usize; 3] {
    let exact = target.as_array().map(|p| p * n as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn generate_population(
    target: &StanceDistribution,
    law: EntropyLaw,
    n: usize,
    seed: u64,
    topic: &str,
) -> Result<Vec<AgentProfile>, Error> {
    if n == 0 {
        return Err(Error::Scenario("infeasible rounding: population size is 0".into()));
    }
    let counts = largest_remainder(target, n);
    let width = (n - 1).to_string().len().max(3);
    let mut rng = derive_stream(seed, POPULATION_KEY, 0);
    let beta = law
        .shape()
        .map(|(a, b)| Beta::new(a, b).map_err(|e| Error::Scenario(format!("entropy law: {e}"))))
        .transpose()?;
    let stances = Stance::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&s, c)| std::iter::repeat_n(s, c));
    Ok(stances
        .enumerate()
        .map(|(i, initial_stance)| {
            let entropy = match &beta {
                Some(b) => b.sample(&mut rng),
                None => law.mean,
            };
            AgentProfile {
                id: format!("{topic}-{i:0width$}"),
                topic: topic.to_string(),
                initial_stance,
                entropy: entropy.clamp(0.0, 1.0),
            }
        })
        .collect())
}

/// Distribution from percentages that may not sum to exactly 100.
pub fn distribution_from_percentages(p: [f64; 3]) -> StanceDistribution {
    StanceDistribution::from_weights(p).expect("topic percentages are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    /// Dotted path into the config, e.g. `intervention.n_ai`.
    pub parameter: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub base_config: SimulationConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub paired_baseline: bool,
}

/// One concrete config of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub label: String,
    pub value: Option<serde_json::Value>,
    pub config: SimulationConfig,
}

fn set_path(config: &SimulationConfig, path: &str, value: &serde_json::Value) -> Result<SimulationConfig, Error> {
    let mut doc = serde_json::to_value(config)?;
    let pointer = format!("/{}", path.replace('.', "/"));
    let slot = doc
        .pointer_mut(&pointer)
        .ok_or_else(|| Error::Scenario(format!("unknown or unset sweep parameter {path:?}")))?;
    *slot = value.clone();
    serde_json::from_value(doc)
        .map_err(|e| Error::Scenario(format!("sweep value {value} does not fit {path:?}: {e}")))
}

fn value_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Scenario {
    pub fn legs(&self) -> Result<Vec<Leg>, Error> {
        match &self.sweep {
            None => Ok(vec![Leg {
                label: "intervention".into(),
                value: None,
                config: self.base_config.clone(),
            }]),
            Some(sweep) => sweep
                .values
                .iter()
                .map(|v| {
                    Ok(Leg {
                        label: format!("{}={}", sweep.parameter, value_label(v)),
                        value: Some(v.clone()),
                        config: set_path(&self.base_config, &sweep.parameter, v)?,
                    })
                })
                .collect(),
        }
    }

    pub fn baseline_config(&self) -> Option<SimulationConfig> {
        self.paired_baseline.then(|| {
            let mut c = self.base_config.clone();
            c.intervention = None;
            c
        })
    }

    pub fn with_overrides(mut self, seed: Option<u64>, replicates: Option<u32>) -> Self {
        if let Some(s) = seed {
            self.base_config.seed = s;
        }
        if let Some(r) = replicates {
            self.base_config.replicates = r;
        }
        self
    }
}

fn base_config(population: Vec<AgentProfile>, target: Stance, replicates: u32, seed: u64) -> SimulationConfig {
    let mut c = SimulationConfig::new(DEFAULT_ROUNDS, population, seed)
        .with_intervention(InterventionConfig::sustained(DEFAULT_AI, target, DEFAULT_ROUNDS));
    c.replicates = replicates;
    c
}

/// The 200-agent Abortion-profile population used by the control-dimension sweeps.
pub fn abortion_population(n: usize) -> Vec<AgentProfile> {
    let (topic, p) = TOPIC_PROFILES[0];
    generate_population(&distribution_from_percentages(p), EntropyLaw::default(), n, POPULATION_SEED, topic)
        .expect("n > 0")
}

/// Base for the control-dimension sweeps: Abortion population, 80 sustained
/// Against agents, T = 50.
pub fn default_sweep_base() -> SimulationConfig {
    base_config(abortion_population(DEFAULT_HUMANS), Stance::Against, DEFAULT_REPLICATES, DEFAULT_SEED)
}

/// AI target for a topic: the polar stance opposite to whichever of Favor and
/// Against holds the larger share, ties going to Favor. NI is not a position
/// to oppose, so an NI plurality falls through to the polar comparison.
pub fn opposing_target(population: &[AgentProfile]) -> Stance {
    let d = StanceDistribution::of(population.iter().map(|p| p.initial_stance)).expect("non-empty");
    let predominant = if d.against > d.favor { Stance::Against } else { Stance::Favor };
    predominant.opposite()
}

pub fn scenario_cross_topic(
    topics: Vec<(String, Vec<AgentProfile>)>,
    replicates: u32,
    seed: u64,
) -> Vec<Scenario> {
    topics
        .into_iter()
        .map(|(name, population)| {
            let target = opposing_target(&population);
            Scenario {
                name: format!("cross-topic/{name}"),
                base_config: base_config(population, target, replicates, seed),
                sweep: None,
                paired_baseline: true,
            }
        })
        .collect()
}

/// Cross-topic scenarios over synthetic populations matching the human-only rows.
pub fn builtin_cross_topic(replicates: u32, seed: u64) -> Vec<Scenario> {
    let topics = TOPIC_PROFILES
        .iter()
        .map(|(name, p)| {
            let pop = generate_population(
                &distribution_from_percentages(*p),
                EntropyLaw::default(),
                DEFAULT_HUMANS,
                POPULATION_SEED,
                name,
            )
            .expect("n > 0");
            (name.to_string(), pop)
        })
        .collect();
    scenario_cross_topic(topics, replicates, seed)
}

fn sweep_scenario(name: &str, base: SimulationConfig, parameter: &str, values: Vec<serde_json::Value>) -> Scenario {
    Scenario {
        name: name.into(),
        base_config: base,
        sweep: Some(Sweep {
            parameter: parameter.into(),
            values,
        }),
        paired_baseline: true,
    }
}

pub fn scenario_count_sweep(base: SimulationConfig) -> Scenario {
    let values = COUNT_VALUES.iter().map(|&v| v.into()).collect();
    sweep_scenario("count-sweep", base, "intervention.n_ai", values)
}

pub fn scenario_frequency_sweep(base: SimulationConfig) -> Scenario {
    let values = PERIOD_VALUES.iter().map(|&v| v.into()).collect();
    sweep_scenario("frequency-sweep", base, "intervention.post_period", values)
}

pub fn scenario_withdrawal_sweep(base: SimulationConfig) -> Scenario {
    let values = WITHDRAWAL_VALUES.iter().map(|&v| v.into()).collect();
    sweep_scenario("withdrawal-sweep", base, "intervention.activation_end", values)
}

pub fn scenario_style_contrast(base: SimulationConfig) -> Scenario {
    let values = [StyleTag::Compassionate, StyleTag::Condemnation]
        .iter()
        .map(|s| serde_json::to_value(s).expect("style serializes"))
        .collect();
    sweep_scenario("style-contrast", base, "intervention.style", values)
}

pub fn scenario_visibility_sweep(base: SimulationConfig) -> Scenario {
    let values = VISIBILITY_VALUES.iter().map(|&v| v.into()).collect();
    sweep_scenario("visibility-sweep", base, "intervention.visibility", values)
}

/// Base for the visibility sweep: 50 humans and one Against agent.
pub fn visibility_base() -> SimulationConfig {
    let pop = generate_population(
        &distribution_from_percentages(VISIBILITY_PROFILE),
        EntropyLaw::default(),
        VISIBILITY_HUMANS,
        POPULATION_SEED,
        "abortion",
    )
    .expect("n > 0");
    let mut c = base_config(pop, Stance::Against, DEFAULT_REPLICATES, DEFAULT_SEED);
    if let Some(iv) = c.intervention.as_mut() {
        iv.n_ai = 1;
    }
    c
}

/// Resolves a built-in scenario name.
pub fn builtin(name: &str) -> Result<Vec<Scenario>, Error> {
    Ok(match name {
        "cross-topic" => builtin_cross_topic(DEFAULT_REPLICATES, DEFAULT_SEED),
        "count-sweep" => vec![scenario_count_sweep(default_sweep_base())],
        "frequency-sweep" => vec![scenario_frequency_sweep(default_sweep_base())],
        "withdrawal-sweep" => vec![scenario_withdrawal_sweep(default_sweep_base())],
        "style-contrast" => vec![scenario_style_contrast(default_sweep_base())],
        "visibility-sweep" => vec![scenario_visibility_sweep(visibility_base())],
        other => {
            return Err(Error::Scenario(format!(
                "unknown scenario {other:?}; built-ins are: {}",
                BUILTIN_SCENARIOS.join(", ")
            )))
        }
    })
}

/// Contents of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioFile {
    Builtin {
        builtin: String,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        replicates: Option<u32>,
    },
    Inline {
        scenario: Scenario,
    },
    Many {
        scenarios: Vec<Scenario>,
    },
}

impl ScenarioFile {
    pub fn resolve(self) -> Result<Vec<Scenario>, Error> {
        match self {
            ScenarioFile::Builtin {
                builtin: name,
                seed,
                replicates,
            } => Ok(builtin(&name)?
                .into_iter()
                .map(|s| s.with_overrides(seed, replicates))
                .collect()),
            ScenarioFile::Inline { scenario } => Ok(vec![scenario]),
            ScenarioFile::Many { scenarios } => Ok(scenarios),
        }
    }
}

/// Humans grouped into entropy terciles (low, mid, high) by rank.
pub fn entropy_terciles(population: &[AgentProfile]) -> [Vec<String>; 3] {
    let mut ranked: Vec<&AgentProfile> = population.iter().collect();
    ranked.sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then(a.id.cmp(&b.id)));
    let n = ranked.len();
    [0, 1, 2].map(|g| {
        ranked[g * n / 3..(g + 1) * n / 3]
            .iter()
            .map(|p| p.id.clone())
            .collect()
    })
}

/// Per-replicate reduction of one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegResult {
    pub config_digest: String,
    pub replicate_seeds: Vec<u64>,
    pub terminal: Vec<StanceDistribution>,
    /// Terminal shares within the low, mid and high entropy terciles.
    pub tercile_terminal: Vec<[Option<StanceDistribution>; 3]>,
    /// Mean human shares per round across replicates.
    pub trajectory: Vec<StanceDistribution>,
    pub transitions: TransitionMatrix,
    pub ai_posting_rounds: u32,
}

fn tercile_shares(trace: &SimulationTrace, terciles: &[Vec<String>; 3]) -> [Option<StanceDistribution>; 3] {
    let last = trace.final_record();
    [0, 1, 2].map(|g| StanceDistribution::of(terciles[g].iter().filter_map(|id| last.stances.get(id).copied())).ok())
}

fn posting_rounds(config: &SimulationConfig) -> u32 {
    match &config.intervention {
        Some(iv) if iv.n_ai > 0 => (1..=config.rounds).filter(|&r| ai_posts_in(iv, r)).count() as u32,
        _ => 0,
    }
}

pub fn run_leg(config: &SimulationConfig) -> LegResult {
    struct One {
        seed: u64,
        terminal: StanceDistribution,
        terciles: [Option<StanceDistribution>; 3],
        series: Vec<StanceDistribution>,
        transitions: TransitionMatrix,
    }
    let terciles = entropy_terciles(&config.population);
    let runs = map_replicates(config, true, |_, trace| One {
        seed: trace.seed,
        terminal: terminal_distribution(&trace),
        terciles: tercile_shares(&trace, &terciles),
        series: trace.share_series(),
        transitions: transition_matrix(&trace).expect("rounds >= 1"),
    });

    let rounds = config.rounds as usize + 1;
    let mut sums = vec![[0.0f64; 3]; rounds];
    let mut transitions = TransitionMatrix::default();
    for run in &runs {
        for (acc, d) in sums.iter_mut().zip(&run.series) {
            for (a, x) in acc.iter_mut().zip(d.as_array()) {
                *a += x;
            }
        }
        transitions.merge(&run.transitions);
    }
    let trajectory = sums
        .into_iter()
        .map(|s| StanceDistribution::from_weights(s).expect("positive mass"))
        .collect();

    LegResult {
        config_digest: config.digest(),
        replicate_seeds: runs.iter().map(|r| r.seed).collect(),
        terminal: runs.iter().map(|r| r.terminal).collect(),
        tercile_terminal: runs.iter().map(|r| r.terciles).collect(),
        trajectory,
        transitions,
        ai_posting_rounds: posting_rounds(config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareStats {
    pub favor: MeanSd,
    pub ni: MeanSd,
    pub against: MeanSd,
}

impl ShareStats {
    fn of(rows: &[[f64; 3]]) -> Self {
        let col = |i: usize| MeanSd::of(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
        Self {
            favor: col(0),
            ni: col(1),
            against: col(2),
        }
    }

    pub fn get(&self, s: Stance) -> &MeanSd {
        match s {
            Stance::Favor => &self.favor,
            Stance::NotInferrable => &self.ni,
            Stance::Against => &self.against,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub label: String,
    pub value: Option<serde_json::Value>,
    pub config_digest: String,
    pub n: usize,
    /// Terminal shares (fractions).
    pub terminal: ShareStats,
    /// Paired terminal deltas vs. the baseline, in percentage points.
    pub delta: Option<ShareStats>,
    /// Paired delta of the AI target stance (pp).
    pub target_delta: Option<MeanSd>,
    /// Paired target-stance delta within the low, mid and high entropy terciles (pp).
    pub tercile_target_delta: Option<[MeanSd; 3]>,
    /// Terminal target-stance effect of a withdrawal leg (pp), for activation-window sweeps.
    pub persistence_effect: Option<f64>,
    pub trajectory: Vec<StanceDistribution>,
    pub transitions: TransitionMatrix,
    pub ai_posting_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub tool_version: String,
    pub sweep_parameter: Option<String>,
    pub target_stance: Option<Stance>,
    pub replicates: u32,
    pub baseline: Option<LegSummary>,
    pub legs: Vec<LegSummary>,
}

impl ExperimentReport {
    pub fn leg(&self, label_suffix: &str) -> Option<&LegSummary> {
        self.legs.iter().find(|l| l.label.ends_with(label_suffix))
    }
}

fn summarize(
    label: String,
    value: Option<serde_json::Value>,
    leg: &LegResult,
    baseline: Option<&LegResult>,
    target: Option<Stance>,
    withdrawal: bool,
) -> LegSummary {
    let rows: Vec<[f64; 3]> = leg.terminal.iter().map(|d| d.as_array()).collect();
    let paired = baseline.filter(|b| b.replicate_seeds == leg.replicate_seeds);
    let delta_rows: Option<Vec<[f64; 3]>> = paired.map(|b| {
        leg.terminal
            .iter()
            .zip(&b.terminal)
            .map(|(r, b)| distribution_delta(r, b).as_array())
            .collect()
    });
    let delta = delta_rows.as_deref().map(ShareStats::of);
    let target_delta = target.and_then(|t| delta.as_ref().map(|d| *d.get(t)));
    let tercile_target_delta = target.and_then(|t| {
        paired.map(|b| {
            [0, 1, 2].map(|g| {
                let vals: Vec<f64> = leg
                    .tercile_terminal
                    .iter()
                    .zip(&b.tercile_terminal)
                    .filter_map(|(r, b)| Some(100.0 * (r[g]?.share(t) - b[g]?.share(t))))
                    .collect();
                MeanSd::of(&vals)
            })
        })
    });
    LegSummary {
        label,
        value,
        config_digest: leg.config_digest.clone(),
        n: leg.terminal.len(),
        terminal: ShareStats::of(&rows),
        delta,
        persistence_effect: if withdrawal { target_delta.map(|d| d.mean) } else { None },
        target_delta,
        tercile_target_delta,
        trajectory: leg.trajectory.clone(),
        transitions: leg.transitions,
        ai_posting_rounds: leg.ai_posting_rounds,
    }
}

/// Runs every leg, asking `run` for each config. `run` may serve cached results.
pub fn run_scenario_with<F>(scenario: &Scenario, mut run: F) -> Result<ExperimentReport, Error>
where
    F: FnMut(&SimulationConfig) -> Result<LegResult, Error>,
{
    let legs = scenario.legs()?;
    for leg in &legs {
        crate::config::validate_config(leg.config.clone())?;
    }
    let baseline = scenario.baseline_config().map(|c| run(&c)).transpose()?;
    let target = scenario.base_config.intervention.as_ref().map(|iv| iv.target_stance);
    let withdrawal = scenario
        .sweep
        .as_ref()
        .is_some_and(|s| s.parameter == "intervention.activation_end");

    let mut summaries = Vec::with_capacity(legs.len());
    for leg in legs {
        let result = run(&leg.config)?;
        let leg_target = leg.config.intervention.as_ref().map(|iv| iv.target_stance).or(target);
        summaries.push(summarize(leg.label, leg.value, &result, baseline.as_ref(), leg_target, withdrawal));
    }
    Ok(ExperimentReport {
        scenario: scenario.name.clone(),
        tool_version: TOOL_VERSION.to_string(),
        sweep_parameter: scenario.sweep.as_ref().map(|s| s.parameter.clone()),
        target_stance: target,
        replicates: scenario.base_config.replicates,
        baseline: baseline.map(|b| summarize("baseline".into(), None, &b, None, None, false)),
        legs: summaries,
    })
}

pub fn run_scenario(scenario: &Scenario) -> Result<ExperimentReport, Error> {
    run_scenario_with(scenario, |c| Ok(run_leg(c)))
}

/// Runs a scenario with per-leg results cached under `dir/legs/<digest>.json`.
/// Legs whose cache file exists are loaded instead of recomputed.
pub fn run_scenario_resumable(scenario: &Scenario, dir: &Path) -> Result<ExperimentReport, Error> {
    let legs_dir = dir.join("legs");
    fs::create_dir_all(&legs_dir)?;
    run_scenario_with(scenario, |config| {
        let digest = config.digest();
        let path = legs_dir.join(format!("{digest}.json"));
        if path.exists() {
            let cached: LegResult = serde_json::from_slice(&fs::read(&path)?)?;
            if cached.config_digest == digest {
                return Ok(cached);
            }
        }
        let result = run_leg(config);
        fs::write(legs_dir.join(format!("{digest}.config.json")), serde_json::to_vec(config)?)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(&result)?)?;
        fs::rename(&tmp, &path)?;
        Ok(result)
    })
}

fn provenance_line(report: &ExperimentReport) -> String {
    format!("# beliefdyn {} scenario={}", report.tool_version, report.scenario)
}

fn all_legs(report: &ExperimentReport) -> impl Iterator<Item = &LegSummary> {
    report.baseline.iter().chain(report.legs.iter())
}

/// Writes `report.json`, `trajectories.csv`, `terminal.csv` and `transitions.csv`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let mut json = BufWriter::new(fs::File::create(dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut json, report)?;
    json.write_all(b"\n")?;
    json.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join("trajectories.csv"))?);
    writeln!(w, "{}", provenance_line(report))?;
    writeln!(w, "leg,config_digest,round,favor_share,ni_share,against_share")?;
    for leg in all_legs(report) {
        for (round, d) in leg.trajectory.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6}",
                leg.label, leg.config_digest, round, d.favor, d.ni, d.against
            )?;
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join("terminal.csv"))?);
    writeln!(w, "{}", provenance_line(report))?;
    writeln!(
        w,
        "leg,config_digest,n,favor_mean,favor_sd,ni_mean,ni_sd,against_mean,against_sd,\
         target_delta_pp_mean,target_delta_pp_sd,low_entropy_delta_pp,mid_entropy_delta_pp,high_entropy_delta_pp"
    )?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for leg in all_legs(report) {
        let t = &leg.terminal;
        let terc = leg.tercile_target_delta.map(|g| g.map(|m| m.mean));
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
            leg.label,
            leg.config_digest,
            leg.n,
            t.favor.mean,
            t.favor.sd,
            t.ni.mean,
            t.ni.sd,
            t.against.mean,
            t.against.sd,
            fmt(leg.target_delta.map(|d| d.mean)),
            fmt(leg.target_delta.map(|d| d.sd)),
            fmt(terc.map(|g| g[0])),
            fmt(terc.map(|g| g[1])),
            fmt(terc.map(|g| g[2])),
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join("transitions.csv"))?);
    writeln!(w, "{}", provenance_line(report))?;
    writeln!(w, "leg,config_digest,{}", TransitionMatrix::CSV_HEADER)?;
    for leg in all_legs(report) {
        let prefix = format!("{},{}", leg.label, leg.config_digest);
        leg.transitions.write_csv(&mut w, Some(&prefix))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_matches_abortion_row() {
        let d = distribution_from_percentages([84.5, 8.0, 7.5]);
        assert_eq!(largest_remainder(&d, 200), [169, 16, 15]);
        assert_eq!(largest_remainder(&StanceDistribution::point(Stance::Favor), 7), [7, 0, 0]);
        // 10/3 each: remainder goes to Favor first
        assert_eq!(largest_remainder(&StanceDistribution::UNIFORM, 10), [4, 3, 3]);
    }

    #[test]
    fn rounding_always_sums_to_n() {
        for &(_, p) in &TOPIC_PROFILES {
            let d = distribution_from_percentages(p);
            for n in 1..300 {
                assert_eq!(largest_remainder(&d, n).iter().sum::<usize>(), n);
            }
        }
    }

    #[test]
    fn generated_population_is_deterministic_with_exact_counts() {
        let d = distribution_from_percentages([84.5, 8.0, 7.5]);
        let a = generate_population(&d, EntropyLaw::default(), 200, 3, "abortion").unwrap();
        let b = generate_population(&d, EntropyLaw::default(), 200, 3, "abortion").unwrap();
        assert_eq!(a, b);
        let counts = Stance::ALL.map(|s| a.iter().filter(|p| p.initial_stance == s).count());
        assert_eq!(counts, [169, 16, 15]);
        assert!(a.iter().all(|p| (0.0..=1.0).contains(&p.entropy)));
        let mean = a.iter().map(|p| p.entropy).sum::<f64>() / 200.0;
        assert!((mean - 0.35).abs() < 0.05, "mean entropy {mean}");
        let ids: std::collections::HashSet<_> = a.iter().map(|p| &p.id).collect();
        assert_eq!(ids.len(), 200);
    }

    #[test]
    fn point_mass_population() {
        let pop = generate_population(
            &StanceDistribution::point(Stance::Favor),
            EntropyLaw { mean: 0.0, spread: 0.0 },
            5,
            1,
            "t",
        )
        .unwrap();
        assert!(pop.iter().all(|p| p.initial_stance == Stance::Favor && p.entropy == 0.0));
        assert!(generate_population(&StanceDistribution::UNIFORM, EntropyLaw::default(), 0, 1, "t").is_err());
    }

    fn pop_with(counts: [usize; 3]) -> Vec<AgentProfile> {
        let d = StanceDistribution::from_counts(counts.map(|c| c as u64)).unwrap();
        generate_population(&d, EntropyLaw::default(), counts.iter().sum(), 1, "t").unwrap()
    }

    #[test]
    fn cross_topic_targets() {
        assert_eq!(opposing_target(&pop_with([169, 16, 15])), Stance::Against);
        assert_eq!(opposing_target(&pop_with([16, 162, 22])), Stance::Favor);
        assert_eq!(opposing_target(&pop_with([10, 10, 10])), Stance::Against);
        let scenarios = builtin_cross_topic(2, 1);
        let targets: Vec<(String, Stance)> = scenarios
            .iter()
            .map(|s| (s.name.clone(), s.base_config.intervention.as_ref().unwrap().target_stance))
            .collect();
        assert_eq!(
            targets,
            vec![
                ("cross-topic/abortion".into(), Stance::Against),
                ("cross-topic/brexit".into(), Stance::Favor),
                ("cross-topic/capitalism".into(), Stance::Against),
                ("cross-topic/feminism".into(), Stance::Against),
            ]
        );
        for s in &scenarios {
            let iv = s.base_config.intervention.as_ref().unwrap();
            assert_eq!((iv.n_ai, iv.post_period, iv.visibility, iv.style), (80, 1, 1.0, StyleTag::Neutral));
            assert_eq!(s.base_config.rounds, 50);
            assert_eq!(s.base_config.population.len(), 200);
            assert!(s.paired_baseline);
        }
    }

    #[test]
    fn sweep_values_are_applied() {
        let s = scenario_count_sweep(default_sweep_base());
        let legs = s.legs().unwrap();
        let n: Vec<u32> = legs.iter().map(|l| l.config.intervention.as_ref().unwrap().n_ai).collect();
        assert_eq!(n, vec![0, 5, 20, 40, 80, 160]);
        let s = scenario_style_contrast(default_sweep_base());
        let styles: Vec<StyleTag> = s.legs().unwrap().iter().map(|l| l.config.intervention.as_ref().unwrap().style).collect();
        assert_eq!(styles, vec![StyleTag::Compassionate, StyleTag::Condemnation]);
        let p: Vec<u32> = scenario_frequency_sweep(default_sweep_base())
            .legs()
            .unwrap()
            .iter()
            .map(|l| l.config.intervention.as_ref().unwrap().post_period)
            .collect();
        assert_eq!(p, vec![1, 4, 8]);
        let e: Vec<u32> = scenario_withdrawal_sweep(default_sweep_base())
            .legs()
            .unwrap()
            .iter()
            .map(|l| l.config.intervention.as_ref().unwrap().activation_end)
            .collect();
        assert_eq!(e, vec![10, 20, 30, 50]);
        let v: Vec<f64> = scenario_visibility_sweep(visibility_base())
            .legs()
            .unwrap()
            .iter()
            .map(|l| l.config.intervention.as_ref().unwrap().visibility)
            .collect();
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn incompatible_sweep_value_is_rejected() {
        let mut s = scenario_count_sweep(default_sweep_base());
        s.sweep.as_mut().unwrap().values = vec!["lots".into()];
        assert!(matches!(s.legs(), Err(Error::Scenario(_))));
        s.sweep.as_mut().unwrap().parameter = "intervention.nope".into();
        assert!(matches!(s.legs(), Err(Error::Scenario(_))));
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let err = builtin("nope").unwrap_err().to_string();
        for name in BUILTIN_SCENARIOS {
            assert!(err.contains(name));
        }
    }

    #[test]
    fn scenario_file_forms() {
        let f: ScenarioFile = serde_json::from_str(r#"{"builtin":"count-sweep","replicates":3}"#).unwrap();
        let s = f.resolve().unwrap();
        assert_eq!(s[0].base_config.replicates, 3);
        let inline = serde_json::json!({"scenario": scenario_frequency_sweep(default_sweep_base())});
        let f: ScenarioFile = serde_json::from_value(inline).unwrap();
        assert_eq!(f.resolve().unwrap()[0].name, "frequency-sweep");
    }

    #[test]
    fn posting_round_counts() {
        let mut c = default_sweep_base();
        assert_eq!(posting_rounds(&c), 50);
        c.intervention.as_mut().unwrap().activation_end = 50;
        assert_eq!(posting_rounds(&c), 49);
        c.intervention.as_mut().unwrap().post_period = 8;
        assert_eq!(posting_rounds(&c), 6);
        c.intervention.as_mut().unwrap().post_period = 60;
        assert_eq!(posting_rounds(&c), 0);
    }

    #[test]
    fn terciles_partition_population() {
        let pop = abortion_population(200);
        let t = entropy_terciles(&pop);
        assert_eq!(t.iter().map(Vec::len).sum::<usize>(), 200);
        let max_low = t[0].iter().map(|id| pop.iter().find(|p| &p.id == id).unwrap().entropy).fold(0.0, f64::max);
        let min_high = t[2].iter().map(|id| pop.iter().find(|p| &p.id == id).unwrap().entropy).fold(1.0, f64::min);
        assert!(max_low <= min_high);
    }
}
