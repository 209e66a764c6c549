use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TransportError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelayId(pub String);

impl fmt::Display for RelayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RelayId {
    fn from(s: &str) -> Self {
        RelayId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayFlags {
    pub guard: bool,
    pub exit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relay {
    pub id: RelayId,
    pub flags: RelayFlags,
}

impl Relay {
    pub fn new(id: &str, guard: bool, exit: bool) -> Self {
        Relay { id: RelayId(id.to_owned()), flags: RelayFlags { guard, exit } }
    }
}

/// Parses a relay directory: one relay per line, `<id> [flag,flag...]`
/// with flags from `guard`, `exit`, `middle`. Blank lines and `#`
/// comments are ignored.
pub fn parse_relay_directory(text: &str) -> Result<Vec<Relay>, TransportError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line");
        let mut flags = RelayFlags::default();
        if let Some(list) = parts.next() {
            for f in list.split(',').filter(|f| !f.is_empty()) {
                match f {
                    "guard" => flags.guard = true,
                    "exit" => flags.exit = true,
                    "middle" => {}
                    other => {
                        return Err(TransportError::BadDirectory(format!("line {}: unknown flag {other:?}", n + 1)))
                    }
                }
            }
        }
        if parts.next().is_some() {
            return Err(TransportError::BadDirectory(format!("line {}: trailing fields", n + 1)));
        }
        if out.iter().any(|r: &Relay| r.id.0 == id) {
            return Err(TransportError::BadDirectory(format!("line {}: duplicate relay {id}", n + 1)));
        }
        out.push(Relay { id: RelayId(id.to_owned()), flags });
    }
    Ok(out)
}

impl FromStr for Relay {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = parse_relay_directory(s)?;
        match v.len() {
            1 => Ok(v.remove(0)),
            _ => Err(TransportError::BadDirectory("expected exactly one relay".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_directory() {
        let text = "# test net\nr1 guard\nr2 middle\nr3 exit,guard\n\nr4\n";
        let d = parse_relay_directory(text).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d[0].flags.guard && !d[0].flags.exit);
        assert!(d[2].flags.guard && d[2].flags.exit);
        assert_eq!(d[3].flags, RelayFlags::default());
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_relay_directory("r1 bogus").is_err());
        assert!(parse_relay_directory("r1 guard extra").is_err());
        assert!(parse_relay_directory("r1\nr1").is_err());
    }
}
