use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EcrError, Result};

/// Semantic factor carried by an anchor group.
///
/// The declaration order is the canonical prefix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactorCode {
    /// Task
    T,
    /// Language
    L,
    /// Emotion
    E,
    /// Intent
    I,
    /// Tone / strategy
    P,
}

impl FactorCode {
    pub const ALL: [FactorCode; 5] = [
        FactorCode::T,
        FactorCode::L,
        FactorCode::E,
        FactorCode::I,
        FactorCode::P,
    ];

    pub fn letter(self) -> char {
        match self {
            FactorCode::T => 'T',
            FactorCode::L => 'L',
            FactorCode::E => 'E',
            FactorCode::I => 'I',
            FactorCode::P => 'P',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'T' => Some(FactorCode::T),
            'L' => Some(FactorCode::L),
            'E' => Some(FactorCode::E),
            'I' => Some(FactorCode::I),
            'P' => Some(FactorCode::P),
            _ => None,
        }
    }

    /// Corpus field holding this factor's label, if the schema has one.
    pub fn corpus_field(self) -> Option<&'static str> {
        match self {
            FactorCode::T => Some("task"),
            FactorCode::L => Some("language"),
            FactorCode::E => Some("emotion"),
            FactorCode::I => Some("intent"),
            FactorCode::P => None,
        }
    }

    pub(crate) fn to_u8(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_u8(v: u8) -> Result<Self> {
        Self::ALL
            .get(v as usize)
            .copied()
            .ok_or_else(|| EcrError::Format(format!("unknown factor code {v}")))
    }
}

impl fmt::Display for FactorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for FactorCode {
    type Err = EcrError;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_letter(c.to_ascii_uppercase())
                .ok_or_else(|| EcrError::invalid(format!("unknown factor `{s}`"))),
            _ => Err(EcrError::invalid(format!("unknown factor `{s}`"))),
        }
    }
}

/// Parses a selection such as `T,L,E,I` or `L+E+I`. The empty string and
/// `none` yield an empty selection. Output is sorted canonically and deduplicated.
pub fn parse_factor_list(s: &str) -> Result<Vec<FactorCode>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut out = s
        .split([',', '+'])
        .map(str::parse)
        .collect::<Result<Vec<FactorCode>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn format_factor_list(factors: &[FactorCode]) -> String {
    if factors.is_empty() {
        return "none".to_string();
    }
    factors
        .iter()
        .map(|f| f.letter().to_string())
        .collect::<Vec<_>>()
        .join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_list_sorts_canonically() {
        assert_eq!(
            parse_factor_list("I,L,e").unwrap(),
            vec![FactorCode::L, FactorCode::E, FactorCode::I]
        );
        assert_eq!(parse_factor_list("L+E+I").unwrap().len(), 3);
        assert!(parse_factor_list("").unwrap().is_empty());
        assert!(parse_factor_list("none").unwrap().is_empty());
        assert!(parse_factor_list("L,X").is_err());
    }

    #[test]
    fn u8_round_trip() {
        for f in FactorCode::ALL {
            assert_eq!(FactorCode::from_u8(f.to_u8()).unwrap(), f);
        }
        assert!(FactorCode::from_u8(9).is_err());
    }
}
