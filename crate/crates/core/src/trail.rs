//! Audit records shared across pipeline stages.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-readable reason a candidate did not make it into the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DropCode {
    DurRatio,
    SrcExplicit,
    TgtAlternative,
    NonDiscourseIntensifier,
    NonDiscourseQuoted,
    NonDiscourseFinal,
    NonDiscourseFiller,
    Unalignable,
    SegInvalid,
    Dup,
}

impl DropCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DropCode::DurRatio => "DUR_RATIO",
            DropCode::SrcExplicit => "SRC_EXPLICIT",
            DropCode::TgtAlternative => "TGT_ALTERNATIVE",
            DropCode::NonDiscourseIntensifier => "NON_DISCOURSE_INTENSIFIER",
            DropCode::NonDiscourseQuoted => "NON_DISCOURSE_QUOTED",
            DropCode::NonDiscourseFinal => "NON_DISCOURSE_FINAL",
            DropCode::NonDiscourseFiller => "NON_DISCOURSE_FILLER",
            DropCode::Unalignable => "UNALIGNABLE",
            DropCode::SegInvalid => "SEG_INVALID",
            DropCode::Dup => "DUP",
        }
    }
}

impl fmt::Display for DropCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One filter decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub filter: String,
    pub passed: bool,
    pub detail: String,
}

impl FilterRecord {
    pub fn pass(filter: &str, detail: impl Into<String>) -> Self {
        FilterRecord {
            filter: filter.to_string(),
            passed: true,
            detail: detail.into(),
        }
    }

    pub fn fail(filter: &str, detail: impl Into<String>) -> Self {
        FilterRecord {
            filter: filter.to_string(),
            passed: false,
            detail: detail.into(),
        }
    }
}
