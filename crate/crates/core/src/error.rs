use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;

use crate::glmm::GlmmFit;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A single record violates its own invariants.
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("unknown {field} code {code}")]
    UnknownCode { field: &'static str, code: i64 },

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("missing dates: {}", format_dates(.0))]
    MissingDates(Vec<NaiveDate>),

    #[error("date {0} is not covered by the {1} source")]
    UncoveredDate(NaiveDate, &'static str),

    #[error("ride {ride} has {found} segments, expected {expected}")]
    SegmentMismatch {
        ride: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("categorical level {0} was not seen when the design was built")]
    UnseenLevel(String),

    #[error("response is constant; at least one 0 and one 1 are required")]
    DegenerateResponse,

    #[error("labels contain a single class")]
    SingleClass,

    #[error("fit did not converge after {} inner iterations", .0.iterations.inner)]
    NotConverged(Box<GlmmFit>),
}

fn format_dates(dates: &[NaiveDate]) -> String {
    let mut out = String::new();
    for (i, d) in dates.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&alloc::format!("{d}"));
    }
    out
}

/// A non-fatal finding attached to a result: something was clipped,
/// skipped or approximated and the caller may want to report it.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: String::from(code),
            message: message.into(),
        }
    }
}
