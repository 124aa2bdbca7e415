//! Single-stimulus subjective quality tests.
//!
//! Raters see every (video, condition) pair once in a seeded random order and
//! score each on the five-level scale. Finished sessions are written as CSV
//! and summarized into a mean opinion score report.

use std::path::PathBuf;

use thiserror::Error;

pub mod catalog;
pub mod http;
pub mod mos;
pub mod rng;
pub mod session;
pub mod store;

pub use catalog::Catalog;
pub use mos::{compute_mos, MosReport, MosRow, MosStats};
pub use session::{create_session, Condition, PlaylistItem, RatingAck, RatingRecord, SubjectiveSession};
pub use store::SessionStore;

#[derive(Debug, Error)]
pub enum SubjectiveError {
    #[error("invalid selection: {0}")]
    Selection(String),
    #[error("no media for video `{video}` under condition `{condition}`")]
    MediaMissing { video: String, condition: String },
    #[error("rating submitted for item {found}, but item {expected} is next")]
    OutOfOrder { expected: usize, found: usize },
    #[error("rating {0} is outside 1..=5")]
    RatingRange(i64),
    #[error("session is already complete")]
    SessionComplete,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown media token")]
    UnknownToken,
    #[error("media token is not for the current item")]
    TokenExpired,
    #[error("no ratings recorded")]
    NoRatings,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed csv: {0}")]
    CsvFormat(String),
}

pub type Result<T> = std::result::Result<T, SubjectiveError>;
