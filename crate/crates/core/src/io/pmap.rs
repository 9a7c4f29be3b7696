//! Glob-based precision map: which tensor names are stored ternary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Ternary,
    Dense,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Ternary => "ternary",
            Precision::Dense => "dense",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionRule {
    pub pattern: String,
    pub precision: Precision,
}

/// Ordered rules; the first matching pattern wins, unmatched names are dense.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrecisionMap {
    pub rules: Vec<PrecisionRule>,
}

impl Default for PrecisionMap {
    /// Decoder attention and FFN weights are ternary; everything else
    /// (vision tower, projector, embeddings, norms) stays dense.
    fn default() -> Self {
        let rule = |p: &str, precision| PrecisionRule {
            pattern: p.to_string(),
            precision,
        };
        Self {
            rules: vec![
                rule("llm.blocks.*.attn.w?.weight", Precision::Ternary),
                rule("llm.blocks.*.ffn.*.weight", Precision::Ternary),
                rule("*", Precision::Dense),
            ],
        }
    }
}

impl PrecisionMap {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::PrecisionMap(e.to_string()))
    }

    pub fn classify(&self, name: &str) -> Precision {
        self.rules
            .iter()
            .find(|r| glob_match(&r.pattern, name))
            .map_or(Precision::Dense, |r| r.precision)
    }
}

/// `*` matches any run of characters (including none), `?` exactly one.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ni));
            pi += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}
