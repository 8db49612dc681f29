use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReasoningStep;

/// How much of the reasoning history the evaluator sees at step t.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// No evaluation.
    None,
    /// Steps 1..=t.
    FullTrajectory,
    /// Step t only.
    CurrentStep,
    /// Steps t-1 and t; step 1 alone at t = 1.
    #[default]
    SecondOrderMarkov,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::None,
        Strategy::FullTrajectory,
        Strategy::CurrentStep,
        Strategy::SecondOrderMarkov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::FullTrajectory => "full_trajectory",
            Strategy::CurrentStep => "current_step",
            Strategy::SecondOrderMarkov => "second_order_markov",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Strategy::None),
            "full_trajectory" | "full" => Ok(Strategy::FullTrajectory),
            "current_step" | "current" => Ok(Strategy::CurrentStep),
            "second_order_markov" | "markovian" | "markov" => Ok(Strategy::SecondOrderMarkov),
            other => Err(format!("unknown evaluation strategy `{other}`")),
        }
    }
}

/// The steps the evaluator sees for the last step of `history`.
pub fn select_window(history: &[ReasoningStep], strategy: Strategy) -> &[ReasoningStep] {
    let t = history.len();
    match strategy {
        Strategy::None => &[],
        Strategy::FullTrajectory => history,
        Strategy::CurrentStep => &history[t.saturating_sub(1)..],
        Strategy::SecondOrderMarkov => &history[t.saturating_sub(2)..],
    }
}
