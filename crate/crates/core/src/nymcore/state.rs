use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NymState {
    Created,
    Running,
    Paused,
    Storing,
    Terminated,
}

impl NymState {
    /// The legal transition relation.
    pub fn can_transition(self, to: NymState) -> bool {
        use NymState::*;
        matches!(
            (self, to),
            (Created, Running) | (Running, Paused) | (Paused, Running) | (Paused, Storing) | (Storing, Running)
                | (Running, Terminated) | (Paused, Terminated)
        )
    }

    pub fn is_live(self) -> bool {
        matches!(self, NymState::Running | NymState::Paused)
    }
}

impl fmt::Display for NymState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What closing a session requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreAction {
    StoreThenTerminate,
    Discard,
}

#[cfg(test)]
mod tests {
    use super::NymState::*;
    use super::*;

    #[test]
    fn relation() {
        let all = [Created, Running, Paused, Storing, Terminated];
        let legal: Vec<(NymState, NymState)> =
            all.iter().flat_map(|&a| all.iter().map(move |&b| (a, b))).filter(|(a, b)| a.can_transition(*b)).collect();
        assert_eq!(legal.len(), 7);
        assert!(all.iter().all(|s| !Terminated.can_transition(*s)));
        assert!(!Storing.can_transition(Terminated));
        assert!(!Created.can_transition(Paused));
    }
}
