use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::session::{RatingRecord, MAX_RATING, MIN_RATING};
use crate::{Result, SubjectiveError};

pub const MOS_HEADER: [&str; 7] = ["video_id", "condition", "n", "mos", "stddev", "ci95_lo", "ci95_hi"];

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosStats {
    pub n: usize,
    pub mos: f64,
    /// Sample standard deviation; 0 for a single rating.
    pub stddev: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
}

impl MosStats {
    /// `None` for an empty slice. Sums are taken in integers, so the result
    /// does not depend on the order of `ratings`.
    pub fn from_ratings(ratings: &[u8]) -> Option<Self> {
        let n = ratings.len();
        if n == 0 {
            return None;
        }
        let sum: u64 = ratings.iter().map(|&r| r as u64).sum();
        let sum_sq: u64 = ratings.iter().map(|&r| (r as u64).pow(2)).sum();
        let mos = sum as f64 / n as f64;
        let stddev = if n > 1 {
            // n * sum((x - mean)^2) = n * sum(x^2) - sum(x)^2, exactly
            let scaled = n as u128 * sum_sq as u128 - (sum as u128).pow(2);
            (scaled as f64 / (n as f64 * (n - 1) as f64)).sqrt()
        } else {
            0.0
        };
        let half = Z95 * stddev / (n as f64).sqrt();
        let (lo, hi) = (MIN_RATING as f64, MAX_RATING as f64);
        Some(Self {
            n,
            mos,
            stddev,
            ci95_lo: (mos - half).clamp(lo, hi),
            ci95_hi: (mos + half).clamp(lo, hi),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRow {
    pub video_id: String,
    pub condition: String,
    pub n: usize,
    pub mos: f64,
    pub stddev: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
}

impl MosRow {
    pub fn stats(&self) -> MosStats {
        MosStats {
            n: self.n,
            mos: self.mos,
            stddev: self.stddev,
            ci95_lo: self.ci95_lo,
            ci95_hi: self.ci95_hi,
        }
    }
}

/// Rows sorted by (video, condition).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosReport {
    pub rows: Vec<MosRow>,
}

impl MosReport {
    pub fn get(&self, video_id: &str, condition: &str) -> Option<&MosRow> {
        self.rows
            .iter()
            .find(|r| r.video_id == video_id && r.condition == condition)
    }
}

/// Group ratings by (video, condition) and summarize each group.
pub fn compute_mos(records: &[RatingRecord]) -> Result<MosReport> {
    if records.is_empty() {
        return Err(SubjectiveError::NoRatings);
    }
    let mut groups: BTreeMap<(&str, &str), Vec<u8>> = BTreeMap::new();
    for r in records {
        if !(MIN_RATING..=MAX_RATING).contains(&(r.rating as i64)) {
            return Err(SubjectiveError::RatingRange(r.rating as i64));
        }
        groups
            .entry((r.video_id.as_str(), r.condition.as_str()))
            .or_default()
            .push(r.rating);
    }
    let rows = groups
        .into_iter()
        .map(|((video_id, condition), ratings)| {
            let s = MosStats::from_ratings(&ratings).expect("groups are non-empty");
            MosRow {
                video_id: video_id.to_string(),
                condition: condition.to_string(),
                n: s.n,
                mos: s.mos,
                stddev: s.stddev,
                ci95_lo: s.ci95_lo,
                ci95_hi: s.ci95_hi,
            }
        })
        .collect();
    Ok(MosReport { rows })
}

/// Values are written in shortest round-trip form so a parsed report is
/// bit-identical to the one written.
pub fn write_mos_csv<W: Write>(out: W, report: &MosReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(MOS_HEADER)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_mos_csv<R: Read>(input: R) -> Result<MosReport> {
    let mut r = csv::Reader::from_reader(input);
    if !r.headers()?.iter().eq(MOS_HEADER) {
        return Err(SubjectiveError::CsvFormat("unexpected MOS header".into()));
    }
    let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(MosReport { rows })
}
