use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identifier of a pseudonym, rendered as `nym-<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct NymId(pub u32);

impl fmt::Display for NymId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nym-{}", self.0)
    }
}

impl FromStr for NymId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("nym-").unwrap_or(s);
        digits
            .parse()
            .map(NymId)
            .map_err(|_| format!("invalid nym id: {s:?}"))
    }
}

impl From<NymId> for String {
    fn from(n: NymId) -> String {
        n.to_string()
    }
}

impl TryFrom<String> for NymId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Usage mode of a nym, fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NymMode {
    Ephemeral,
    Persistent,
    Preconfigured,
}

impl fmt::Display for NymMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NymMode::Ephemeral => "ephemeral",
            NymMode::Persistent => "persistent",
            NymMode::Preconfigured => "preconfigured",
        })
    }
}

impl FromStr for NymMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ephemeral" | "amnesiac" => Ok(NymMode::Ephemeral),
            "persistent" => Ok(NymMode::Persistent),
            "preconfigured" | "pre-configured" => Ok(NymMode::Preconfigured),
            _ => Err(format!("unknown nym mode: {s:?}")),
        }
    }
}

/// Simulated time in milliseconds.
pub type SimTime = u64;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!("nym-7".parse::<NymId>().unwrap(), NymId(7));
        assert_eq!("7".parse::<NymId>().unwrap(), NymId(7));
        assert!("nym-x".parse::<NymId>().is_err());
    }
}
