use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use beliefdyn::adapter::{AdapterRole, NdjsonAdapter};
use beliefdyn::engine::{replicate_config, run_with_adapter};
use beliefdyn::experiments::{
    self, EntropyLaw, Scenario, ScenarioFile, BUILTIN_SCENARIOS, POPULATION_SEED, TOPIC_PROFILES,
};
use beliefdyn::error::MetricsError;
use beliefdyn::metrics::{self, ConfusionMatrix, MeanSd, TransitionMatrix};
use beliefdyn::{
    run_replicates, run_simulation, validate_config, SimulationConfig, SimulationTrace, Stance,
    StanceDistribution, TOOL_VERSION,
};
use serde::Serialize;

use crate::{Failure, Format, Overrides};

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Fails unless `force` is set or none of `files` exist.
fn guard_outputs(dir: &Path, files: &[&str], force: bool) -> Result<(), Failure> {
    if force {
        return Ok(());
    }
    if let Some(existing) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
        return Err(Failure::user(anyhow!(
            "{} already exists; pass --force to overwrite",
            existing.display()
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::user(e)
    }
}

fn load_config(path: &Path, population: Option<&Path>, overrides: &Overrides) -> Result<SimulationConfig, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
    if let Some(pop_path) = population {
        let file = fs::File::open(pop_path).with_context(|| format!("cannot read population {}", pop_path.display()))?;
        let pop = beliefdyn::config::read_population(BufReader::new(file))
            .map_err(|e| anyhow!("population {}: {e}", pop_path.display()))?;
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| anyhow!("config {} must be a JSON object", path.display()))?;
        obj.insert("population".into(), serde_json::to_value(pop).expect("profiles serialize"));
    }
    let mut config: SimulationConfig =
        serde_json::from_value(doc).with_context(|| format!("config {}", path.display()))?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(r) = overrides.replicates {
        config.replicates = r;
    }
    validate_config(config).map_err(|report| {
        let lines: Vec<String> = report.0.iter().map(|e| format!("  {e}")).collect();
        Failure::user(anyhow!("invalid config:\n{}", lines.join("\n")))
    })
}

#[derive(Serialize)]
struct TerminalFile<'a> {
    tool_version: &'a str,
    config_digest: &'a str,
    seed: u64,
    terminal: StanceDistribution,
}

#[derive(Serialize)]
struct ReplicateTerminal {
    seed: u64,
    terminal: StanceDistribution,
}

#[derive(Serialize)]
struct ReplicatesTerminalFile<'a> {
    tool_version: &'a str,
    config_digest: &'a str,
    seed: u64,
    replicates: Vec<ReplicateTerminal>,
    favor: MeanSd,
    ni: MeanSd,
    against: MeanSd,
}

fn rounded(d: StanceDistribution) -> StanceDistribution {
    StanceDistribution {
        favor: round6(d.favor),
        ni: round6(d.ni),
        against: round6(d.against),
    }
}

fn write_trace_files(trace: &SimulationTrace, trace_path: &Path, summary_path: &Path) -> Result<(), Failure> {
    let mut w = create(trace_path)?;
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    let mut w = create(summary_path)?;
    trace.write_summary_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::user(anyhow!(e)))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn run(
    config_path: &Path,
    population: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
    adapter: Option<&str>,
    adapter_timeout_ms: u64,
    force: bool,
) -> Result<(), Failure> {
    let config = load_config(config_path, population, overrides)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    guard_outputs(out, &["trace.jsonl", "summary.csv", "terminal.json"], force)?;

    let mut adapter = adapter
        .map(|addr| {
            NdjsonAdapter::open(addr, AdapterRole::Ai, Duration::from_millis(adapter_timeout_ms))
                .with_context(|| format!("cannot open adapter {addr:?}"))
                .map_err(Failure::adapter)
        })
        .transpose()?;
    let has_adapter = adapter.is_some();
    let mut simulate = move |c: &SimulationConfig| -> Result<SimulationTrace, Failure> {
        match adapter.as_mut() {
            Some(a) => run_with_adapter(c, a).map_err(Failure::adapter),
            None => Ok(run_simulation(c)),
        }
    };

    let digest = config.digest();
    if config.replicates == 1 {
        let trace = simulate(&config)?;
        write_trace_files(&trace, &out.join("trace.jsonl"), &out.join("summary.csv"))?;
        write_json(
            &out.join("terminal.json"),
            &TerminalFile {
                tool_version: TOOL_VERSION,
                config_digest: &digest,
                seed: config.seed,
                terminal: rounded(metrics::terminal_distribution(&trace)),
            },
        )?;
        return Ok(());
    }

    let traces = if has_adapter {
        (0..config.replicates)
            .map(|k| simulate(&replicate_config(&config, k)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        run_replicates(&config)
    };
    let dir = out.join("replicates");
    fs::create_dir_all(&dir)?;
    let terminals: Vec<StanceDistribution> = traces.iter().map(metrics::terminal_distribution).collect();
    let mut rows = Vec::with_capacity(traces.len());
    for (k, (trace, terminal)) in traces.iter().zip(&terminals).enumerate() {
        write_trace_files(
            trace,
            &dir.join(format!("trace-{k:03}.jsonl")),
            &dir.join(format!("summary-{k:03}.csv")),
        )?;
        rows.push(ReplicateTerminal {
            seed: trace.seed,
            terminal: rounded(*terminal),
        });
    }
    let column = |f: fn(&StanceDistribution) -> f64| MeanSd::of(&terminals.iter().map(f).collect::<Vec<_>>());
    let (favor, ni, against) = (column(|d| d.favor), column(|d| d.ni), column(|d| d.against));
    write_json(
        &out.join("terminal.json"),
        &ReplicatesTerminalFile {
            tool_version: TOOL_VERSION,
            config_digest: &digest,
            seed: config.seed,
            replicates: rows,
            favor,
            ni,
            against,
        },
    )
}

fn resolve_scenarios(arg: &str) -> Result<Vec<Scenario>, Failure> {
    let path = Path::new(arg);
    let file = if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
        serde_json::from_str::<ScenarioFile>(&text).with_context(|| {
            format!(
                "scenario file {} must name a builtin ({}) or inline a scenario",
                path.display(),
                BUILTIN_SCENARIOS.join(", ")
            )
        })?
    } else {
        ScenarioFile::Builtin {
            builtin: arg.to_string(),
            seed: None,
            replicates: None,
        }
    };
    Ok(file.resolve()?)
}

const REPORT_FILES: [&str; 4] = ["report.json", "trajectories.csv", "terminal.csv", "transitions.csv"];

fn scenario_dir(out: &Path, scenario: &Scenario, many: bool) -> PathBuf {
    if many {
        out.join(scenario.name.replace(['/', '\\'], "-"))
    } else {
        out.to_path_buf()
    }
}

pub fn sweep(scenario: &str, out: &Path, overrides: &Overrides, force: bool) -> Result<(), Failure> {
    let scenarios: Vec<Scenario> = resolve_scenarios(scenario)?
        .into_iter()
        .map(|s| s.with_overrides(overrides.seed, overrides.replicates))
        .collect();
    let many = scenarios.len() > 1;
    for s in &scenarios {
        guard_outputs(&scenario_dir(out, s, many), &REPORT_FILES, force)?;
    }
    for s in &scenarios {
        let dir = scenario_dir(out, s, many);
        let report = experiments::run_scenario_resumable(s, &dir)?;
        experiments::write_report(&report, &dir)?;
        eprintln!("{}: {} legs written to {}", s.name, report.legs.len(), dir.display());
    }
    Ok(())
}

pub fn compare(
    config_path: &Path,
    population: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
    force: bool,
) -> Result<(), Failure> {
    let config = load_config(config_path, population, overrides)?;
    if config.intervention.is_none() {
        return Err(Failure::user(anyhow!("compare needs a config with an intervention")));
    }
    guard_outputs(out, &REPORT_FILES, force)?;
    let scenario = Scenario {
        name: "compare".into(),
        base_config: config,
        sweep: None,
        paired_baseline: true,
    };
    let report = experiments::run_scenario_resumable(&scenario, out)?;
    experiments::write_report(&report, out)?;
    Ok(())
}

fn parse_triple(raw: &str) -> Result<[f64; 3], Failure> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::user(anyhow!("{raw:?} is not a favor,ni,against triple: {e}")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| Failure::user(anyhow!("{raw:?} must have exactly three components")))
}

#[allow(clippy::too_many_arguments)]
pub fn gen_population(
    topic: Option<&str>,
    shares: Option<&str>,
    n: usize,
    seed: Option<u64>,
    entropy_mean: Option<f64>,
    entropy_spread: Option<f64>,
    out: Option<&Path>,
    force: bool,
) -> Result<(), Failure> {
    let (name, weights) = match (topic, shares) {
        (Some(t), _) => {
            let (name, p) = TOPIC_PROFILES
                .iter()
                .find(|(name, _)| *name == t)
                .ok_or_else(|| {
                    let known: Vec<&str> = TOPIC_PROFILES.iter().map(|(n, _)| *n).collect();
                    Failure::user(anyhow!("unknown topic {t:?}; known topics: {}", known.join(", ")))
                })?;
            (name.to_string(), *p)
        }
        (None, Some(s)) => ("agent".to_string(), parse_triple(s)?),
        (None, None) => return Err(Failure::user(anyhow!("pass --topic or --shares"))),
    };
    let target = StanceDistribution::from_weights(weights).map_err(Failure::user)?;
    let defaults = EntropyLaw::default();
    let law = EntropyLaw {
        mean: entropy_mean.unwrap_or(defaults.mean),
        spread: entropy_spread.unwrap_or(defaults.spread),
    };
    if !(0.0..=1.0).contains(&law.mean) || law.spread.is_nan() || law.spread < 0.0 {
        return Err(Failure::user(anyhow!(
            "entropy law needs mean in [0, 1] and spread >= 0"
        )));
    }
    let pop = experiments::generate_population(&target, law, n, seed.unwrap_or(POPULATION_SEED), &name)?;
    match out {
        Some(path) => {
            if path.exists() && !force {
                return Err(Failure::user(anyhow!(
                    "{} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
            let mut w = create(path)?;
            beliefdyn::config::write_population(&mut w, &pop)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            beliefdyn::config::write_population(&mut w, &pop)?;
        }
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<SimulationTrace, Failure> {
    let file = fs::File::open(path).with_context(|| format!("cannot read trace {}", path.display()))?;
    SimulationTrace::read_jsonl(BufReader::new(file))
        .map_err(|e| Failure::user(anyhow!("trace {}: {e}", path.display())))
}

#[derive(Serialize)]
struct MatrixJson {
    counts: [[u64; 3]; 3],
    favor: Option<[f64; 3]>,
    ni: Option<[f64; 3]>,
    against: Option<[f64; 3]>,
}

pub fn transition_matrix(traces: &[PathBuf], format: Format) -> Result<(), Failure> {
    let mut pooled = TransitionMatrix::default();
    for path in traces {
        let trace = read_trace(path)?;
        let m = metrics::transition_matrix(&trace)
            .map_err(|e| Failure::user(anyhow!("trace {}: {e}", path.display())))?;
        pooled.merge(&m);
    }
    let stdout = io::stdout();
    let mut w = stdout.lock();
    match format {
        Format::Csv => {
            writeln!(w, "{}", TransitionMatrix::CSV_HEADER)?;
            pooled.write_csv(&mut w, None)?;
        }
        Format::Json => {
            let row = |s| pooled.row(s).map(|r| r.map(round6));
            let json = MatrixJson {
                counts: pooled.counts,
                favor: row(Stance::Favor),
                ni: row(Stance::NotInferrable),
                against: row(Stance::Against),
            };
            serde_json::to_writer_pretty(&mut w, &json).map_err(|e| Failure::user(anyhow!(e)))?;
            writeln!(w)?;
        }
    }
    Ok(())
}

const HEADER_TOKENS: [&str; 5] = ["stance", "gold", "pred", "label", "prediction"];

fn is_header(field: &str) -> bool {
    HEADER_TOKENS.contains(&field.trim().to_ascii_lowercase().as_str())
}

fn parse_stance(raw: &str, path: &Path, line: u64) -> Result<Stance, Failure> {
    raw.trim()
        .parse::<Stance>()
        .map_err(|e| Failure::user(anyhow!("{} line {line}: {e}", path.display())))
}

/// Rows of a headerless (or `gold,pred`-headed) CSV, with their line numbers.
fn csv_rows(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rows.is_empty() && i == 0 && record.get(0).is_some_and(is_header) {
            continue;
        }
        rows.push((line, record));
    }
    Ok(rows)
}

fn stance_column(path: &Path) -> Result<Vec<Stance>, Failure> {
    csv_rows(path)?
        .into_iter()
        .map(|(line, r)| parse_stance(r.get(0).unwrap_or(""), path, line))
        .collect()
}

#[derive(Serialize)]
struct AgreementJson {
    n: u64,
    accuracy: f64,
    cohen_kappa: Option<f64>,
    macro_f1: f64,
    confusion: [[u64; 3]; 3],
}

pub fn agreement(pairs: Option<&Path>, gold: Option<&Path>, pred: Option<&Path>, format: Format) -> Result<(), Failure> {
    let rows: Vec<(Stance, Stance)> = match (pairs, gold, pred) {
        (Some(path), _, _) => csv_rows(path)?
            .into_iter()
            .map(|(line, r)| {
                if r.len() != 2 {
                    return Err(Failure::user(anyhow!(
                        "{} line {line}: expected 2 columns (gold,pred), found {}",
                        path.display(),
                        r.len()
                    )));
                }
                Ok((parse_stance(&r[0], path, line)?, parse_stance(&r[1], path, line)?))
            })
            .collect::<Result<_, _>>()?,
        (None, Some(g), Some(p)) => {
            let (gs, ps) = (stance_column(g)?, stance_column(p)?);
            if gs.len() != ps.len() {
                return Err(Failure::user(anyhow!(
                    "row count mismatch: {} has {}, {} has {}",
                    g.display(),
                    gs.len(),
                    p.display(),
                    ps.len()
                )));
            }
            gs.into_iter().zip(ps).collect()
        }
        _ => return Err(Failure::user(anyhow!("pass a gold,pred CSV or both --gold and --pred"))),
    };

    let cm = ConfusionMatrix::from_pairs(rows);
    let metric_err = |e: MetricsError| Failure::user(anyhow!(e));
    let accuracy = metrics::accuracy(&cm).map_err(metric_err)?;
    let kappa = match metrics::cohen_kappa(&cm) {
        Ok(k) => Some(k),
        Err(MetricsError::DegenerateMarginals) => None,
        Err(e) => return Err(metric_err(e)),
    };
    let f1 = metrics::macro_f1(&cm).map_err(metric_err)?;

    let stdout = io::stdout();
    let mut w = stdout.lock();
    match format {
        Format::Json => {
            let json = AgreementJson {
                n: cm.total(),
                accuracy: round6(accuracy),
                cohen_kappa: kappa.map(round6),
                macro_f1: round6(f1),
                confusion: cm.counts,
            };
            serde_json::to_writer_pretty(&mut w, &json).map_err(|e| Failure::user(anyhow!(e)))?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "metric,value")?;
            writeln!(w, "n,{}", cm.total())?;
            writeln!(w, "accuracy,{accuracy:.6}")?;
            match kappa {
                Some(k) => writeln!(w, "cohen_kappa,{k:.6}")?,
                None => writeln!(w, "cohen_kappa,")?,
            }
            writeln!(w, "macro_f1,{f1:.6}")?;
        }
    }
    Ok(())
}

fn distribution_arg(raw: &str) -> Result<StanceDistribution, Failure> {
    let path = Path::new(raw);
    if path.is_file() {
        return Ok(metrics::terminal_distribution(&read_trace(path)?));
    }
    StanceDistribution::from_weights(parse_triple(raw)?).map_err(|e| Failure::user(anyhow!("{raw:?}: {e}")))
}

pub fn jsd(p: &str, q: &str, format: Format) -> Result<(), Failure> {
    let d = metrics::js_divergence(&distribution_arg(p)?, &distribution_arg(q)?);
    match format {
        Format::Json => println!("{{\"jsd\":{}}}", round6(d)),
        Format::Csv => println!("jsd\n{d:.6}"),
    }
    Ok(())
}
