//! The round loop.
//!
//! Round 0 materializes one synthetic post per human at its initial stance.
//! Each round `t >= 1` then (1) lets scheduled AI agents post, (2) lets every
//! human read a feed drawn from the posts of round `t - 1`, update, and post
//! its stance, and (3) records the round. Humans update synchronously.
//!
//! All randomness for agent `a` in round `t` comes from
//! `derive_stream(seed, a, t)`, and posts are kept in a canonical order, so a
//! trajectory does not depend on the order of the population list.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{external_agent_step, AgentAdapter};
use crate::behavior::{ai_posts_in, ai_policy, human_update, FeedView, HumanState};
use crate::config::{BehaviorParams, SimulationConfig};
use crate::error::{AdapterError, Error};
use crate::post::{Post, RoundRecord};
use crate::rng::{derive_stream, replicate_seed, VISIBILITY_KEY};
use crate::stance::StanceDistribution;
use crate::TOOL_VERSION;

/// Humans whose feeds may contain AI posts. Fixed for a whole run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VisibilityAssignment {
    exposed_ids: BTreeSet<String>,
}

impl VisibilityAssignment {
    /// Picks `round(visibility * n)` humans, independent of list order.
    pub fn assign<'a, I>(seed: u64, ids: I, visibility: f64) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut ids: Vec<&str> = ids.into_iter().collect();
        ids.sort_unstable();
        let k = ((visibility.clamp(0.0, 1.0) * ids.len() as f64).round() as usize).min(ids.len());
        let mut rng = derive_stream(seed, VISIBILITY_KEY, 0);
        ids.shuffle(&mut rng);
        Self {
            exposed_ids: ids[..k].iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn everyone<'a, I: IntoIterator<Item = &'a str>>(ids: I) -> Self {
        Self {
            exposed_ids: ids.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn nobody() -> Self {
        Self::default()
    }

    pub fn is_exposed(&self, id: &str) -> bool {
        self.exposed_ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.exposed_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposed_ids.is_empty()
    }
}

/// The posts `agent_id` reads this round.
///
/// Candidates are every human post plus, for exposed agents, every AI post;
/// the agent's own post is excluded. Above `feed_size` candidates a uniform
/// subsample without replacement is drawn from `rng`.
pub fn assemble_feed<'a, R: Rng + ?Sized>(
    agent_id: &str,
    previous_round_posts: &'a [Post],
    exposure: &VisibilityAssignment,
    params: &BehaviorParams,
    rng: &mut R,
) -> Vec<&'a Post> {
    let sees_ai = exposure.is_exposed(agent_id);
    let candidates: Vec<&Post> = previous_round_posts
        .iter()
        .filter(|p| (sees_ai || !p.is_ai) && p.author_id != agent_id)
        .collect();
    if candidates.len() <= params.feed_size {
        return candidates;
    }
    index::sample(rng, candidates.len(), params.feed_size)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub config_digest: String,
    pub seed: u64,
    /// `rounds + 1` records; record 0 holds the initial stances.
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "header")]
struct TraceHeader {
    config_digest: String,
    seed: u64,
    rounds: u32,
    tool_version: String,
}

impl SimulationTrace {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("trace has at least the initial record")
    }

    /// Human stance shares per round.
    pub fn share_series(&self) -> Vec<StanceDistribution> {
        self.records
            .iter()
            .map(|r| StanceDistribution::of(r.stances.values().copied()).expect("non-empty population"))
            .collect()
    }

    /// JSON Lines: a header line, then one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), Error> {
        let header = TraceHeader {
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            rounds: self.records.len().saturating_sub(1) as u32,
            tool_version: TOOL_VERSION.to_string(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, Error> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Trace("empty trace file".into()))?;
        let header: TraceHeader = serde_json::from_str(&first?)
            .map_err(|source| Error::Line { line: 1, source })?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let record: RoundRecord =
                serde_json::from_str(&line?).map_err(|source| Error::Line { line: i + 1, source })?;
            if let Some(prev) = records.last().map(|r: &RoundRecord| r.round) {
                if record.round <= prev {
                    return Err(Error::Trace(format!(
                        "round {} follows round {prev}",
                        record.round
                    )));
                }
            }
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::Trace("trace has no records".into()));
        }
        Ok(Self {
            config_digest: header.config_digest,
            seed: header.seed,
            records,
        })
    }

    /// CSV of human shares per round, 6 decimals, preceded by a `#` provenance line.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# beliefdyn {TOOL_VERSION} config_digest={} seed={}",
            self.config_digest, self.seed
        )?;
        writeln!(w, "round,favor_share,ni_share,against_share")?;
        for (record, d) in self.records.iter().zip(self.share_series()) {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6}",
                record.round, d.favor, d.ni, d.against
            )?;
        }
        Ok(())
    }
}

fn ai_id(k: u32) -> String {
    format!("ai-{k:03}")
}

fn canonical_order(posts: &mut [Post]) {
    posts.sort_by(|a, b| (a.is_ai, &a.author_id).cmp(&(b.is_ai, &b.author_id)));
}

fn simulate(
    config: &SimulationConfig,
    mut adapter: Option<&mut dyn AgentAdapter>,
) -> Result<SimulationTrace, AdapterError> {
    let seed = config.seed;
    let params = &config.behavior;
    let mut humans: Vec<HumanState> = config.population.iter().cloned().map(HumanState::new).collect();
    humans.sort_by(|a, b| a.profile.id.cmp(&b.profile.id));

    let exposure = match &config.intervention {
        Some(iv) if iv.n_ai > 0 => VisibilityAssignment::assign(
            seed,
            humans.iter().map(|h| h.profile.id.as_str()),
            iv.visibility,
        ),
        _ => VisibilityAssignment::nobody(),
    };
    let ai_ids: Vec<String> = config
        .intervention
        .as_ref()
        .map(|iv| (0..iv.n_ai).map(ai_id).collect())
        .unwrap_or_default();
    let ai_view = VisibilityAssignment::everyone(ai_ids.iter().map(String::as_str));

    let stance_map = |humans: &[HumanState]| -> BTreeMap<String, _> {
        humans
            .iter()
            .map(|h| (h.profile.id.clone(), h.current_stance))
            .collect()
    };

    let mut previous: Vec<Post> = humans
        .iter()
        .map(|h| Post::human(h.profile.id.clone(), 0, h.current_stance))
        .collect();
    canonical_order(&mut previous);
    let mut records = Vec::with_capacity(config.rounds as usize + 1);
    records.push(RoundRecord {
        round: 0,
        stances: stance_map(&humans),
        posts: previous.clone(),
    });

    for round in 1..=config.rounds {
        let mut posts = Vec::with_capacity(previous.len() + ai_ids.len());

        if let Some(iv) = config.intervention.as_ref().filter(|iv| ai_posts_in(iv, round)) {
            for id in &ai_ids {
                let post = match adapter.as_deref_mut() {
                    Some(adapter) => {
                        let mut rng = derive_stream(seed, id, round as u64);
                        let feed: Vec<Post> = assemble_feed(id, &previous, &ai_view, params, &mut rng)
                            .into_iter()
                            .cloned()
                            .collect();
                        external_agent_step(round, &feed, id, iv.style, adapter)?
                    }
                    None => ai_policy(iv, round, id).expect("scheduled round"),
                };
                posts.push(post);
            }
        }

        let updated: Vec<_> = humans
            .iter()
            .map(|h| {
                let mut rng = derive_stream(seed, &h.profile.id, round as u64);
                let feed = assemble_feed(&h.profile.id, &previous, &exposure, params, &mut rng);
                let view = FeedView::new(feed, h.profile.entropy, params);
                human_update(h, &view, params, &mut rng)
            })
            .collect();
        for (h, stance) in humans.iter_mut().zip(updated) {
            h.current_stance = stance;
            posts.push(Post::human(h.profile.id.clone(), round, stance));
        }
        canonical_order(&mut posts);

        records.push(RoundRecord {
            round,
            stances: stance_map(&humans),
            posts: posts.clone(),
        });
        previous = posts;
    }

    Ok(SimulationTrace {
        config_digest: config.digest(),
        seed,
        records,
    })
}

/// Runs one simulation with the surrogate AI policy. Deterministic in `config.seed`.
pub fn run_simulation(config: &SimulationConfig) -> SimulationTrace {
    simulate(config, None).expect("no adapter, no adapter errors")
}

/// Runs one simulation whose AI posts come from an external adapter.
pub fn run_with_adapter(
    config: &SimulationConfig,
    adapter: &mut dyn AgentAdapter,
) -> Result<SimulationTrace, AdapterError> {
    simulate(config, Some(adapter))
}

/// The config of replicate `k`: seed replaced by the derived replicate seed.
pub fn replicate_config(config: &SimulationConfig, k: u32) -> SimulationConfig {
    let mut c = config.clone();
    c.seed = replicate_seed(config.seed, k as u64);
    c.replicates = 1;
    c
}

/// Runs every replicate and reduces each trace with `f` as soon as it
/// finishes. Output order is replicate order regardless of `parallel`.
pub fn map_replicates<T, F>(config: &SimulationConfig, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u32, SimulationTrace) -> T + Sync + Send,
{
    let run = |k: u32| f(k, run_simulation(&replicate_config(config, k)));
    if parallel {
        (0..config.replicates).into_par_iter().map(run).collect()
    } else {
        (0..config.replicates).map(run).collect()
    }
}

pub fn run_replicates(config: &SimulationConfig) -> Vec<SimulationTrace> {
    map_replicates(config, true, |_, t| t)
}

pub fn run_replicates_sequential(config: &SimulationConfig) -> Vec<SimulationTrace> {
    map_replicates(config, false, |_, t| t)
}
