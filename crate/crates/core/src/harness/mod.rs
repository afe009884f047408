//! Cross-validation harness: fold plans, training loops, scenarios,
//! evaluation and report files.

pub mod config;
pub mod eval;
pub mod folds;
pub mod run;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{RunConfig, DATA_ENV};
pub use eval::{mean_std, Summary};
pub use folds::{make_fold_plan, FoldPlan};
pub use run::{run_all, RunOutcome};
pub use train::{train_classifier, train_seq2res, CheckpointSink, TrainConfig, TrainLog};

/// What the classifier sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "No_Sep")]
    NoSep,
    #[serde(rename = "S2S_Sep")]
    S2sSep,
    #[serde(rename = "GT_Sep")]
    GtSep,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::NoSep, Scenario::S2sSep, Scenario::GtSep];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::NoSep => "No_Sep",
            Scenario::S2sSep => "S2S_Sep",
            Scenario::GtSep => "GT_Sep",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| crate::Error::Config(format!("unknown scenario `{s}`")))
    }
}
