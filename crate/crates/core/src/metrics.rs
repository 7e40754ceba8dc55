//! Measurement: distributions and deltas, transition matrices, agreement
//! metrics and Jensen-Shannon divergence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::SimulationTrace;
use crate::error::MetricsError;
use crate::stance::{Stance, StanceDistribution};

/// Human stance shares at the final round.
pub fn terminal_distribution(trace: &SimulationTrace) -> StanceDistribution {
    StanceDistribution::of(trace.final_record().stances.values().copied())
        .expect("population is non-empty")
}

/// Signed per-stance change `run - baseline` in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionDelta {
    pub favor: f64,
    pub ni: f64,
    pub against: f64,
}

impl DistributionDelta {
    pub fn as_array(&self) -> [f64; 3] {
        [self.favor, self.ni, self.against]
    }

    pub fn get(&self, stance: Stance) -> f64 {
        self.as_array()[stance.index()]
    }
}

pub fn distribution_delta(run: &StanceDistribution, baseline: &StanceDistribution) -> DistributionDelta {
    let [f, n, a] = [0, 1, 2].map(|i| 100.0 * (run.as_array()[i] - baseline.as_array()[i]));
    DistributionDelta {
        favor: f,
        ni: n,
        against: a,
    }
}

/// Pooled per-step stance transitions. Rows are the stance at `t`, columns
/// the stance at `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl TransitionMatrix {
    pub fn observe(&mut self, from: Stance, to: Stance) {
        self.counts[from.index()][to.index()] += 1;
    }

    pub fn support(&self, from: Stance) -> u64 {
        self.counts[from.index()].iter().sum()
    }

    pub fn is_empty_row(&self, from: Stance) -> bool {
        self.support(from) == 0
    }

    /// Row probabilities, or `None` for a row without observations.
    pub fn row(&self, from: Stance) -> Option<[f64; 3]> {
        let n = self.support(from);
        (n > 0).then(|| self.counts[from.index()].map(|c| c as f64 / n as f64))
    }

    pub fn probability(&self, from: Stance, to: Stance) -> Option<f64> {
        self.row(from).map(|r| r[to.index()])
    }

    /// Adds the counts of `other`; empty rows contribute nothing.
    pub fn merge(&mut self, other: &TransitionMatrix) {
        for i in 0..3 {
            for j in 0..3 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    /// CSV with a `support` column. Empty rows print zero probabilities and support 0.
    pub fn write_csv<W: Write>(&self, mut w: W, label: Option<&str>) -> std::io::Result<()> {
        for from in Stance::ALL {
            let row = self.row(from).unwrap_or([0.0; 3]);
            if let Some(label) = label {
                write!(w, "{label},")?;
            }
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{}",
                from.token(),
                row[0],
                row[1],
                row[2],
                self.support(from)
            )?;
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "from,favor,ni,against,support";
}

pub fn transition_matrix(trace: &SimulationTrace) -> Result<TransitionMatrix, MetricsError> {
    if trace.records.len() < 2 {
        return Err(MetricsError::InsufficientTrace(trace.records.len()));
    }
    let mut m = TransitionMatrix::default();
    for pair in trace.records.windows(2) {
        for (id, &from) in &pair[0].stances {
            if let Some(&to) = pair[1].stances.get(id) {
                m.observe(from, to);
            }
        }
    }
    Ok(m)
}

/// Gold labels on rows, predictions on columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn from_pairs<I: IntoIterator<Item = (Stance, Stance)>>(pairs: I) -> Self {
        let mut cm = Self::default();
        for (gold, pred) in pairs {
            cm.counts[gold.index()][pred.index()] += 1;
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn gold(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn predicted(&self, k: usize) -> u64 {
        (0..3).map(|g| self.counts[g][k]).sum()
    }

    fn nonempty_total(&self) -> Result<f64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::EmptyConfusion),
            n => Ok(n as f64),
        }
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let n = cm.nonempty_total()?;
    Ok((0..3).map(|k| cm.counts[k][k]).sum::<u64>() as f64 / n)
}

pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let n = cm.nonempty_total()?;
    let observed = accuracy(cm)?;
    let expected: f64 = (0..3)
        .map(|k| (cm.gold(k) as f64 / n) * (cm.predicted(k) as f64 / n))
        .sum();
    if (1.0 - expected).abs() < 1e-15 {
        return Err(MetricsError::DegenerateMarginals);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Unweighted mean of per-class F1. Classes with neither gold nor predicted
/// instances are left out of the mean.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.nonempty_total()?;
    let mut sum = 0.0;
    let mut classes = 0;
    for k in 0..3 {
        let (tp, gold, pred) = (cm.counts[k][k], cm.gold(k), cm.predicted(k));
        if gold == 0 && pred == 0 {
            continue;
        }
        classes += 1;
        let precision = if pred > 0 { tp as f64 / pred as f64 } else { 0.0 };
        let recall = if gold > 0 { tp as f64 / gold as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / classes as f64)
}

/// Jensen-Shannon divergence in bits, bounded in [0, 1].
pub fn js_divergence(p: &StanceDistribution, q: &StanceDistribution) -> f64 {
    let (p, q) = (p.as_array(), q.as_array());
    let mut js = 0.0;
    for i in 0..3 {
        let m = 0.5 * (p[i] + q[i]);
        if p[i] > 0.0 {
            js += 0.5 * p[i] * (p[i] / m).log2();
        }
        if q[i] > 0.0 {
            js += 0.5 * q[i] * (q[i] / m).log2();
        }
    }
    js.clamp(0.0, 1.0)
}

/// Mean terminal change in the `target` share (pp) of each run against its
/// paired human-only baseline.
pub fn persistence_effect(
    pairs: &[(&SimulationTrace, &SimulationTrace)],
    target: Stance,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoTraces);
    }
    let mut total = 0.0;
    for (run, baseline) in pairs {
        if run.records.len() != baseline.records.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} vs {} rounds",
                run.records.len(),
                baseline.records.len()
            )));
        }
        let (a, b) = (run.final_record(), baseline.final_record());
        if a.stances.len() != b.stances.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} vs {} agents",
                a.stances.len(),
                b.stances.len()
            )));
        }
        total += distribution_delta(&terminal_distribution(run), &terminal_distribution(baseline))
            .get(target);
    }
    Ok(total / pairs.len() as f64)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, sd, n }
    }
}
