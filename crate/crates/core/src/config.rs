//! Agent profiles, intervention and behavior parameters, simulation configs and
//! their validation.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ValidationError, ValidationReport};
use crate::stance::{Stance, StyleTag};

/// One human-like agent. `entropy` is a normalized persuadability in [0,1];
/// 0 means the agent never changes stance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub id: String,
    pub topic: String,
    pub initial_stance: Stance,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    pub n_ai: u32,
    pub target_stance: Stance,
    /// AI agents post when `(round - activation_start) % post_period == 0`.
    pub post_period: u32,
    pub activation_start: u32,
    /// Exclusive: no AI posts at or after this round.
    pub activation_end: u32,
    #[serde(default)]
    pub style: StyleTag,
    /// Fraction of humans whose feeds may contain AI posts.
    pub visibility: f64,
}

impl InterventionConfig {
    /// Fully visible, neutral intervention posting in every round `1..=rounds`.
    pub fn sustained(n_ai: u32, target_stance: Stance, rounds: u32) -> Self {
        Self {
            n_ai,
            target_stance,
            post_period: 1,
            activation_start: 0,
            activation_end: rounds + 1,
            style: StyleTag::Neutral,
            visibility: 1.0,
        }
    }
}

/// Parameters of the surrogate human update rule and the persuasion weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorParams {
    pub w_social: f64,
    pub w_inertia: f64,
    pub temperature: f64,
    /// Laplace pseudo-count added to every stance when computing feed shares.
    pub smoothing: f64,
    pub feed_size: usize,
    pub compassion_gain: f64,
    pub condemnation_gain: f64,
    pub condemnation_base: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            w_social: 1.0,
            w_inertia: 0.5,
            temperature: 0.25,
            smoothing: 1.0,
            feed_size: 20,
            compassion_gain: 1.5,
            condemnation_gain: 2.0,
            condemnation_base: 0.5,
        }
    }
}

fn default_replicates() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub rounds: u32,
    pub population: Vec<AgentProfile>,
    #[serde(default)]
    pub intervention: Option<InterventionConfig>,
    #[serde(default)]
    pub behavior: BehaviorParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
}

impl SimulationConfig {
    pub fn new(rounds: u32, population: Vec<AgentProfile>, seed: u64) -> Self {
        Self {
            rounds,
            population,
            intervention: None,
            behavior: BehaviorParams::default(),
            seed,
            replicates: 1,
        }
    }

    pub fn with_intervention(mut self, intervention: InterventionConfig) -> Self {
        self.intervention = Some(intervention);
        self
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_non_negative(field: &'static str, value: f64, errors: &mut Vec<ValidationError>) {
    if !value.is_finite() || value < 0.0 {
        errors.push(ValidationError::NegativeParameter { field, value });
    }
}

/// Returns the config unchanged iff every invariant holds; otherwise reports
/// every violation found.
pub fn validate_config(config: SimulationConfig) -> Result<SimulationConfig, ValidationReport> {
    let mut errors = Vec::new();

    if config.rounds == 0 {
        errors.push(ValidationError::ZeroRounds);
    }
    if config.replicates == 0 {
        errors.push(ValidationError::ZeroReplicates);
    }
    if config.population.is_empty() {
        errors.push(ValidationError::EmptyPopulation);
    }
    let mut seen = HashSet::new();
    for p in &config.population {
        if !(0.0..=1.0).contains(&p.entropy) {
            errors.push(ValidationError::EntropyOutOfRange {
                id: p.id.clone(),
                value: p.entropy,
            });
        }
        if !seen.insert(p.id.as_str()) {
            errors.push(ValidationError::DuplicateId(p.id.clone()));
        }
    }

    if let Some(iv) = &config.intervention {
        if iv.activation_start >= iv.activation_end {
            errors.push(ValidationError::BadActivationWindow {
                start: iv.activation_start,
                end: iv.activation_end,
            });
        }
        if iv.post_period == 0 {
            errors.push(ValidationError::ZeroPostPeriod);
        }
        if !(0.0..=1.0).contains(&iv.visibility) {
            errors.push(ValidationError::VisibilityOutOfRange(iv.visibility));
        }
    }

    let b = &config.behavior;
    if !(b.temperature.is_finite() && b.temperature > 0.0) {
        errors.push(ValidationError::NonPositiveTemperature(b.temperature));
    }
    if !(b.smoothing.is_finite() && b.smoothing > 0.0) {
        errors.push(ValidationError::NonPositiveSmoothing(b.smoothing));
    }
    if b.feed_size == 0 {
        errors.push(ValidationError::ZeroFeedSize);
    }
    check_non_negative("w_social", b.w_social, &mut errors);
    check_non_negative("w_inertia", b.w_inertia, &mut errors);
    check_non_negative("compassion_gain", b.compassion_gain, &mut errors);
    check_non_negative("condemnation_gain", b.condemnation_gain, &mut errors);
    check_non_negative("condemnation_base", b.condemnation_base, &mut errors);

    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ValidationReport(errors))
    }
}

/// Reads a JSON Lines population file. Blank lines are skipped.
pub fn read_population<R: BufRead>(reader: R) -> Result<Vec<AgentProfile>, Error> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let profile = serde_json::from_str(&line).map_err(|source| Error::Line {
            line: i + 1,
            source,
        })?;
        out.push(profile);
    }
    Ok(out)
}

pub fn write_population<W: Write>(mut w: W, population: &[AgentProfile]) -> Result<(), Error> {
    for p in population {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: &str, stance: Stance, entropy: f64) -> AgentProfile {
        AgentProfile {
            id: id.into(),
            topic: "abortion".into(),
            initial_stance: stance,
            entropy,
        }
    }

    fn sample_config() -> SimulationConfig {
        SimulationConfig::new(
            50,
            vec![
                profile("u1", Stance::Favor, 0.3),
                profile("u2", Stance::Against, 0.0),
            ],
            11,
        )
        .with_intervention(InterventionConfig::sustained(80, Stance::Against, 50))
    }

    #[test]
    fn well_formed_config_is_returned_unchanged() {
        let cfg = sample_config();
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
    }

    #[test]
    fn entropy_out_of_range_names_agent() {
        let mut cfg = sample_config();
        cfg.population.push(profile("u7", Stance::NotInferrable, 1.2));
        let report = validate_config(cfg).unwrap_err();
        assert_eq!(
            report.0,
            vec![ValidationError::EntropyOutOfRange {
                id: "u7".into(),
                value: 1.2
            }]
        );
        assert!(report.to_string().contains("u7"));
    }

    #[test]
    fn bad_window_and_temperature_are_both_reported() {
        let mut cfg = sample_config();
        let iv = cfg.intervention.as_mut().unwrap();
        iv.activation_start = 30;
        iv.activation_end = 10;
        cfg.behavior.temperature = 0.0;
        let report = validate_config(cfg).unwrap_err();
        assert!(report
            .0
            .contains(&ValidationError::BadActivationWindow { start: 30, end: 10 }));
        assert!(report.0.contains(&ValidationError::NonPositiveTemperature(0.0)));
        assert_eq!(report.0.len(), 2);
    }

    #[test]
    fn empty_population_and_duplicates() {
        let mut cfg = sample_config();
        cfg.population.clear();
        assert_eq!(
            validate_config(cfg).unwrap_err().0,
            vec![ValidationError::EmptyPopulation]
        );
        let mut cfg = sample_config();
        cfg.population.push(profile("u1", Stance::Favor, 0.1));
        assert_eq!(
            validate_config(cfg).unwrap_err().0,
            vec![ValidationError::DuplicateId("u1".into())]
        );
    }

    #[test]
    fn behavior_defaults_fill_missing_fields() {
        let cfg: SimulationConfig = serde_json::from_str(
            r#"{"rounds":3,"population":[{"id":"a","topic":"t","initial_stance":"ni","entropy":0.5}],
                "behavior":{"temperature":0.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.behavior.temperature, 0.5);
        assert_eq!(cfg.behavior.feed_size, 20);
        assert_eq!(cfg.replicates, 1);
        assert!(cfg.intervention.is_none());
    }

    #[test]
    fn population_file_fields_are_exact() {
        let pop = vec![profile("u1", Stance::Favor, 0.25)];
        let mut buf = Vec::new();
        write_population(&mut buf, &pop).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"id\":\"u1\",\"topic\":\"abortion\",\"initial_stance\":\"favor\",\"entropy\":0.25}\n"
        );
        assert_eq!(read_population(&buf[..]).unwrap(), pop);
        let extra = br#"{"id":"u1","topic":"t","initial_stance":"favor","entropy":0.1,"x":1}"#;
        assert!(matches!(
            read_population(&extra[..]),
            Err(Error::Line { line: 1, .. })
        ));
    }

    #[test]
    fn digest_changes_with_seed() {
        let a = sample_config();
        let mut b = a.clone();
        b.seed += 1;
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    proptest::proptest! {
        #[test]
        fn config_json_round_trip(
            seed in proptest::prelude::any::<u64>(),
            entropy in 0.0f64..=1.0,
            n_ai in 0u32..500,
            vis in 0.0f64..=1.0,
            style in 0usize..3,
        ) {
            let mut cfg = sample_config();
            cfg.seed = seed;
            cfg.population[0].entropy = entropy;
            let iv = cfg.intervention.as_mut().unwrap();
            iv.n_ai = n_ai;
            iv.visibility = vis;
            iv.style = [StyleTag::Neutral, StyleTag::Compassionate, StyleTag::Condemnation][style];
            let text = serde_json::to_string(&cfg).unwrap();
            let back: SimulationConfig = serde_json::from_str(&text).unwrap();
            proptest::prop_assert_eq!(back, cfg);
        }
    }
}
