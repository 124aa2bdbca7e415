//! Thread-safe registry of live sessions and finalized results.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;

use crate::catalog::Catalog;
use crate::mos::{compute_mos, write_mos_csv, MosReport};
use crate::rng::XorShift64Star;
use crate::session::{
    create_session, read_ratings_csv, write_ratings_csv, Condition, RatingAck, RatingRecord, SubjectiveSession,
};
use crate::{Result, SubjectiveError};

pub const MOS_REPORT_FILE: &str = "mos_report.csv";

/// What the client sees for the current item; the condition is never exposed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextItem {
    Item {
        index: usize,
        video_id: String,
        media_token: String,
        playlist_length: usize,
    },
    Done {
        playlist_length: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreatedSession {
    pub session_id: String,
    pub playlist_length: usize,
    pub seed: u64,
}

struct LiveSession {
    session: SubjectiveSession,
    /// One opaque token per playlist position.
    tokens: Vec<String>,
}

pub struct SessionStore {
    catalog: Catalog,
    results_dir: PathBuf,
    /// Source of session seeds when a request does not supply one.
    seeder: Option<Mutex<XorShift64Star>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
    tokens: RwLock<HashMap<String, (String, usize)>>,
    /// Copy-on-write, so reports read an immutable snapshot.
    finalized: Mutex<Arc<Vec<RatingRecord>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn session_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("session_{id}.csv"))
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
fn write_atomic(path: &Path, fill: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let io_err = |source| SubjectiveError::Io {
        path: path.to_path_buf(),
        source,
    };
    fill(BufWriter::new(File::create(&tmp).map_err(io_err)?))?;
    fs::rename(&tmp, path).map_err(io_err)
}

impl SessionStore {
    /// Open a store writing into `results_dir`; ratings CSVs already there
    /// are loaded so the MOS report spans restarts.
    pub fn open(catalog: Catalog, results_dir: impl Into<PathBuf>, seed: Option<u64>) -> Result<Self> {
        let results_dir = results_dir.into();
        fs::create_dir_all(&results_dir).map_err(|source| SubjectiveError::Io {
            path: results_dir.clone(),
            source,
        })?;
        let mut previous = Vec::new();
        let mut files: Vec<PathBuf> = fs::read_dir(&results_dir)
            .map_err(|source| SubjectiveError::Io {
                path: results_dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("session_") && n.ends_with(".csv"))
            })
            .collect();
        files.sort();
        for path in files {
            let file = File::open(&path).map_err(|source| SubjectiveError::Io { path: path.clone(), source })?;
            previous.extend(read_ratings_csv(file)?);
        }
        if !previous.is_empty() {
            info!("loaded {} earlier ratings from {}", previous.len(), results_dir.display());
        }
        Ok(Self {
            catalog,
            results_dir,
            seeder: seed.map(|s| Mutex::new(XorShift64Star::new(s))),
            sessions: RwLock::new(HashMap::new()),
            tokens: RwLock::new(HashMap::new()),
            finalized: Mutex::new(Arc::new(previous)),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn results_dir(&self) -> &Path {
        &self.results_dir
    }

    /// `None` for `videos` or `conditions` selects everything in the catalog.
    pub fn create(
        &self,
        participant: &str,
        videos: Option<Vec<String>>,
        conditions: Option<Vec<String>>,
        seed: Option<u64>,
    ) -> Result<CreatedSession> {
        let videos = videos.unwrap_or_else(|| self.catalog.videos());
        let conditions = match conditions {
            Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<Condition>>>()?,
            None => self.catalog.conditions(),
        };
        let seed = seed.or_else(|| self.seeder.as_ref().map(|s| s.lock().unwrap().next_u64()));
        let session = create_session(participant, &videos, &conditions, seed, |v, c| self.catalog.media_path(v, c))?;
        let id = session.id().to_string();
        let tokens: Vec<String> = (0..session.playlist().len())
            .map(|_| uuid::Uuid::new_v4().simple().to_string())
            .collect();
        let created = CreatedSession {
            session_id: id.clone(),
            playlist_length: session.playlist().len(),
            seed: session.seed(),
        };
        info!(
            "session {id} for `{participant}`: {} items, seed {}",
            created.playlist_length, created.seed
        );
        {
            let mut index = self.tokens.write().unwrap();
            for (pos, t) in tokens.iter().enumerate() {
                index.insert(t.clone(), (id.clone(), pos));
            }
        }
        self.sessions
            .write()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(LiveSession { session, tokens })));
        Ok(created)
    }

    fn live(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SubjectiveError::UnknownSession(id.to_string()))
    }

    pub fn next(&self, id: &str) -> Result<NextItem> {
        let live = self.live(id)?;
        let live = live.lock().unwrap();
        let s = &live.session;
        let playlist_length = s.playlist().len();
        Ok(match s.current() {
            Some(item) => NextItem::Item {
                index: s.cursor(),
                video_id: item.video_id.clone(),
                media_token: live.tokens[s.cursor()].clone(),
                playlist_length,
            },
            None => NextItem::Done { playlist_length },
        })
    }

    /// Store a rating; the session's CSV and the MOS report file are
    /// written before this returns for the final item.
    pub fn rate(&self, id: &str, index: usize, rating: i64) -> Result<RatingAck> {
        let live = self.live(id)?;
        let mut live = live.lock().unwrap();
        let ack = live.session.submit_rating(index, rating, now_ms())?;
        if ack.complete {
            self.finalize(&live.session)?;
        }
        Ok(ack)
    }

    fn finalize(&self, session: &SubjectiveSession) -> Result<()> {
        let records = session.records();
        let path = session_file(&self.results_dir, session.id());
        write_atomic(&path, |w| write_ratings_csv(w, &records))?;
        let mut finalized = self.finalized.lock().unwrap();
        let mut all = Vec::clone(&finalized);
        all.extend(records);
        let report = compute_mos(&all)?;
        write_atomic(&self.results_dir.join(MOS_REPORT_FILE), |w| write_mos_csv(w, &report))?;
        *finalized = Arc::new(all);
        info!("session {} complete: {}", session.id(), path.display());
        Ok(())
    }

    /// Path served for `token`, valid only while its item is the one being rated.
    pub fn media(&self, token: &str) -> Result<PathBuf> {
        let (id, pos) = self
            .tokens
            .read()
            .unwrap()
            .get(token)
            .cloned()
            .ok_or(SubjectiveError::UnknownToken)?;
        let live = self.live(&id)?;
        let live = live.lock().unwrap();
        if live.session.cursor() != pos {
            return Err(SubjectiveError::TokenExpired);
        }
        Ok(live.session.playlist()[pos].media_path.clone())
    }

    /// Ratings from every finalized session.
    pub fn finalized_records(&self) -> Arc<Vec<RatingRecord>> {
        Arc::clone(&self.finalized.lock().unwrap())
    }

    pub fn report(&self) -> Result<MosReport> {
        compute_mos(&self.finalized_records())
    }

    /// Snapshot of a live session.
    pub fn session(&self, id: &str) -> Result<SubjectiveSession> {
        Ok(self.live(id)?.lock().unwrap().session.clone())
    }
}
