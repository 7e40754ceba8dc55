//! Stance labels, post styles and stance distributions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Three-valued belief label. Serialization order is fixed as (Favor, NI, Against).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Favor,
    #[serde(rename = "ni")]
    NotInferrable,
    Against,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Favor, Stance::NotInferrable, Stance::Against];

    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::NotInferrable => 1,
            Stance::Against => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Stance::ALL.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Stance::Favor => "favor",
            Stance::NotInferrable => "ni",
            Stance::Against => "against",
        }
    }

    /// The polar opposite. NI has no opposite and maps to itself.
    pub fn opposite(self) -> Stance {
        match self {
            Stance::Favor => Stance::Against,
            Stance::Against => Stance::Favor,
            Stance::NotInferrable => Stance::NotInferrable,
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stance token {0:?} (expected favor, ni or against)")]
pub struct UnknownStance(pub String);

impl FromStr for Stance {
    type Err = UnknownStance;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "favor" => Ok(Stance::Favor),
            "ni" => Ok(Stance::NotInferrable),
            "against" => Ok(Stance::Against),
            other => Err(UnknownStance(other.to_string())),
        }
    }
}

/// Rhetorical framing attached to a post. Human posts are always `Neutral`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleTag {
    #[default]
    Neutral,
    Compassionate,
    Condemnation,
}

impl StyleTag {
    pub fn token(self) -> &'static str {
        match self {
            StyleTag::Neutral => "neutral",
            StyleTag::Compassionate => "compassionate",
            StyleTag::Condemnation => "condemnation",
        }
    }
}

/// Shares of the three stances. Components lie in [0,1] and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceDistribution {
    pub favor: f64,
    pub ni: f64,
    pub against: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("distribution component {0} is negative or not finite")]
    InvalidComponent(f64),
    #[error("distribution has zero total mass")]
    ZeroMass,
}

impl StanceDistribution {
    pub const UNIFORM: StanceDistribution = StanceDistribution {
        favor: 1.0 / 3.0,
        ni: 1.0 / 3.0,
        against: 1.0 / 3.0,
    };

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: [f64; 3]) -> Result<Self, DistributionError> {
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(DistributionError::InvalidComponent(w));
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(DistributionError::ZeroMass);
        }
        let [f, n, a] = weights.map(|w| w / total);
        Ok(Self::closed(f, n, a))
    }

    pub fn from_counts(counts: [u64; 3]) -> Result<Self, DistributionError> {
        Self::from_weights(counts.map(|c| c as f64))
    }

    /// Empirical distribution of a set of stances.
    pub fn of<I: IntoIterator<Item = Stance>>(stances: I) -> Result<Self, DistributionError> {
        let mut counts = [0u64; 3];
        for s in stances {
            counts[s.index()] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn point(stance: Stance) -> Self {
        let mut w = [0.0; 3];
        w[stance.index()] = 1.0;
        Self::from_array(w)
    }

    // Rounding can leave the sum a few ulps away from 1; push the residual into the
    // largest component so the sum is exact to within one ulp.
    fn closed(f: f64, n: f64, a: f64) -> Self {
        let mut v = [f, n, a];
        let residual = 1.0 - (v[0] + v[1] + v[2]);
        let largest = (0..3)
            .max_by(|&i, &j| v[i].total_cmp(&v[j]))
            .unwrap_or(0);
        v[largest] = (v[largest] + residual).clamp(0.0, 1.0);
        Self::from_array(v)
    }

    fn from_array(v: [f64; 3]) -> Self {
        Self {
            favor: v[0],
            ni: v[1],
            against: v[2],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.favor, self.ni, self.against]
    }

    pub fn share(&self, stance: Stance) -> f64 {
        self.as_array()[stance.index()]
    }

    /// Stance with the largest share; ties resolve in (Favor, NI, Against) order.
    pub fn majority(&self) -> Stance {
        let v = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if v[i] > v[best] {
                best = i;
            }
        }
        Stance::ALL[best]
    }

    pub fn is_valid(&self) -> bool {
        let v = self.as_array();
        v.iter().all(|x| (0.0..=1.0).contains(x)) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}
