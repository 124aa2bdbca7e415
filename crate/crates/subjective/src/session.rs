use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::{shuffle, XorShift64Star};
use crate::{Result, SubjectiveError};

pub const RATINGS_HEADER: [&str; 7] = [
    "session_id",
    "participant",
    "position",
    "video_id",
    "condition",
    "rating",
    "timestamp_ms",
];

pub const MIN_RATING: i64 = 1;
pub const MAX_RATING: i64 = 5;

/// What a rater is shown: the source clip or the output of a named model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Original,
    Model(String),
}

impl Condition {
    pub const ORIGINAL: &'static str = "original";

    pub fn as_str(&self) -> &str {
        match self {
            Condition::Original => Self::ORIGINAL,
            Condition::Model(name) => name,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = SubjectiveError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(SubjectiveError::Selection("empty condition name".into())),
            Self::ORIGINAL => Ok(Condition::Original),
            name => Ok(Condition::Model(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaylistItem {
    pub video_id: String,
    pub condition: Condition,
    pub media_path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rating {
    pub value: u8,
    pub timestamp_ms: u64,
}

/// Acknowledgment of an accepted rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RatingAck {
    pub index: usize,
    /// Cursor after the rating was stored.
    pub cursor: usize,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct SubjectiveSession {
    id: String,
    participant: String,
    playlist: Vec<PlaylistItem>,
    /// Append-only; `ratings[i]` belongs to `playlist[i]`, so its length is the cursor.
    ratings: Vec<Rating>,
    seed: u64,
}

/// Build a session over the full `videos` x `conditions` cross product,
/// shuffled with a generator seeded from `seed` (random when `None`).
///
/// `media` resolves each pair to the file that will be served for it.
pub fn create_session(
    participant: &str,
    videos: &[String],
    conditions: &[Condition],
    seed: Option<u64>,
    media: impl Fn(&str, &Condition) -> Option<PathBuf>,
) -> Result<SubjectiveSession> {
    if videos.is_empty() || conditions.is_empty() {
        return Err(SubjectiveError::Selection(
            "at least one video and one condition are required".into(),
        ));
    }
    if let Some(dup) = first_duplicate(videos) {
        return Err(SubjectiveError::Selection(format!("video `{dup}` selected twice")));
    }
    if let Some(dup) = first_duplicate(conditions) {
        return Err(SubjectiveError::Selection(format!("condition `{dup}` selected twice")));
    }
    let mut playlist = Vec::with_capacity(videos.len() * conditions.len());
    for video in videos {
        for condition in conditions {
            let media_path = media(video, condition).ok_or_else(|| SubjectiveError::MediaMissing {
                video: video.clone(),
                condition: condition.to_string(),
            })?;
            playlist.push(PlaylistItem {
                video_id: video.clone(),
                condition: condition.clone(),
                media_path,
            });
        }
    }
    let seed = seed.unwrap_or_else(rand::random);
    shuffle(&mut playlist, &mut XorShift64Star::new(seed));
    Ok(SubjectiveSession {
        id: uuid::Uuid::new_v4().simple().to_string(),
        participant: participant.to_string(),
        playlist,
        ratings: Vec::new(),
        seed,
    })
}

fn first_duplicate<T: Eq + std::hash::Hash + fmt::Display>(items: &[T]) -> Option<&T> {
    let mut seen = HashSet::new();
    items.iter().find(|v| !seen.insert(*v))
}

impl SubjectiveSession {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn participant(&self) -> &str {
        &self.participant
    }

    pub fn playlist(&self) -> &[PlaylistItem] {
        &self.playlist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Index of the next item to rate.
    pub fn cursor(&self) -> usize {
        self.ratings.len()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn is_complete(&self) -> bool {
        self.cursor() == self.playlist.len()
    }

    pub fn current(&self) -> Option<&PlaylistItem> {
        self.playlist.get(self.cursor())
    }

    /// Record `rating` for the item at `index`, which must be the cursor.
    pub fn submit_rating(&mut self, index: usize, rating: i64, timestamp_ms: u64) -> Result<RatingAck> {
        if self.is_complete() {
            return Err(SubjectiveError::SessionComplete);
        }
        if index != self.cursor() {
            return Err(SubjectiveError::OutOfOrder {
                expected: self.cursor(),
                found: index,
            });
        }
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(SubjectiveError::RatingRange(rating));
        }
        self.ratings.push(Rating {
            value: rating as u8,
            timestamp_ms,
        });
        Ok(RatingAck {
            index,
            cursor: self.cursor(),
            complete: self.is_complete(),
        })
    }

    /// One record per rated item, in playlist order.
    pub fn records(&self) -> Vec<RatingRecord> {
        self.playlist
            .iter()
            .zip(&self.ratings)
            .enumerate()
            .map(|(position, (item, r))| RatingRecord {
                session_id: self.id.clone(),
                participant: self.participant.clone(),
                position,
                video_id: item.video_id.clone(),
                condition: item.condition.to_string(),
                rating: r.value,
                timestamp_ms: r.timestamp_ms,
            })
            .collect()
    }
}

/// One row of a ratings CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: String,
    pub participant: String,
    pub position: usize,
    pub video_id: String,
    pub condition: String,
    pub rating: u8,
    pub timestamp_ms: u64,
}

pub fn write_ratings_csv<W: Write>(out: W, records: &[RatingRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RATINGS_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_ratings_csv<R: Read>(input: R) -> Result<Vec<RatingRecord>> {
    let mut r = csv::Reader::from_reader(input);
    if !r.headers()?.iter().eq(RATINGS_HEADER) {
        return Err(SubjectiveError::CsvFormat("unexpected ratings header".into()));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
