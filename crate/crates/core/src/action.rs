use serde::{Deserialize, Serialize};

/// Decision at one time step: stop (insert an ad) or continue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Stop,
    Continue,
}

impl Action {
    /// Numeric label used in exported tables: 1 for stop, 2 for continue.
    pub fn code(self) -> u8 {
        match self {
            Action::Stop => 1,
            Action::Continue => 2,
        }
    }

    pub fn is_stop(self) -> bool {
        self == Action::Stop
    }
}
