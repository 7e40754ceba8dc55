use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stance::{Stance, StyleTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub author_id: String,
    pub round: u32,
    pub stance: Stance,
    pub is_ai: bool,
    pub style: StyleTag,
    /// Only present for posts produced by an external adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Post {
    pub fn human(author_id: impl Into<String>, round: u32, stance: Stance) -> Self {
        Self {
            author_id: author_id.into(),
            round,
            stance,
            is_ai: false,
            style: StyleTag::Neutral,
            text: None,
        }
    }

    pub fn ai(author_id: impl Into<String>, round: u32, stance: Stance, style: StyleTag) -> Self {
        Self {
            author_id: author_id.into(),
            round,
            stance,
            is_ai: true,
            style,
            text: None,
        }
    }
}

/// Everything that happened in one round: every human's stance after the
/// round and every post emitted in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub stances: BTreeMap<String, Stance>,
    pub posts: Vec<Post>,
}
