use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BlindedItem, RatingRecord, StudyPlan, DEMOGRAPHIC_QUESTIONS, RATING_MAX, RATING_MIN};

/// One line of the append-only rating log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "record", rename_all = "snake_case")]
pub enum LogEntry {
    Rating(RatingRecord),
    Demographics {
        rater_id: String,
        answers: BTreeMap<String, String>,
        #[serde(default)]
        timestamp: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rater_id: String,
    pub completed_items: usize,
    pub total_items: usize,
    pub demographics_submitted: bool,
}

impl Progress {
    pub fn done(&self) -> bool {
        self.completed_items == self.total_items
    }
}

type SlotKey = (String, String, String);

#[derive(Default)]
struct State {
    log: Vec<LogEntry>,
    latest: BTreeMap<SlotKey, RatingRecord>,
    demographics: BTreeMap<String, BTreeMap<String, String>>,
}

/// Ratings and demographics for one immutable plan. Every accepted write is
/// appended to the log before it becomes visible; later submissions for the
/// same slot supersede earlier ones while the log keeps both.
pub struct RatingStore {
    plan: StudyPlan,
    path: Option<PathBuf>,
    inner: Mutex<(State, Option<File>)>,
}

impl RatingStore {
    /// A store that keeps its log in memory only.
    pub fn in_memory(plan: StudyPlan) -> Self {
        RatingStore {
            plan,
            path: None,
            inner: Mutex::new((State::default(), None)),
        }
    }

    /// Opens (or creates) a JSONL log, replaying existing entries.
    pub fn open(path: impl AsRef<Path>, plan: StudyPlan) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let state = if path.exists() {
            replay(&path, &plan)?
        } else {
            State::default()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RatingStore {
            plan,
            path: Some(path),
            inner: Mutex::new((state, Some(file))),
        })
    }

    pub fn plan(&self) -> &StudyPlan {
        &self.plan
    }

    fn append(&self, entry: LogEntry) -> Result<()> {
        validate(&self.plan, &entry)?;
        let mut guard = self.inner.lock().expect("rating store poisoned");
        let (state, file) = &mut *guard;
        if let Some(f) = file {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new(""));
            f.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
            f.flush().map_err(|e| Error::io(path, e))?;
        }
        apply(state, entry);
        Ok(())
    }

    pub fn record_rating(&self, record: RatingRecord) -> Result<()> {
        self.append(LogEntry::Rating(record))
    }

    pub fn record_demographics(
        &self,
        rater_id: &str,
        answers: BTreeMap<String, String>,
        timestamp: u64,
    ) -> Result<()> {
        self.append(LogEntry::Demographics {
            rater_id: rater_id.to_string(),
            answers,
            timestamp,
        })
    }

    /// Current value of every rated slot, ordered by (rater, pair, slot).
    pub fn ratings(&self) -> Vec<RatingRecord> {
        let guard = self.inner.lock().expect("rating store poisoned");
        guard.0.latest.values().cloned().collect()
    }

    /// Every accepted entry in arrival order, superseded ones included.
    pub fn audit_log(&self) -> Vec<LogEntry> {
        self.inner
            .lock()
            .expect("rating store poisoned")
            .0
            .log
            .clone()
    }

    pub fn demographics(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.inner
            .lock()
            .expect("rating store poisoned")
            .0
            .demographics
            .clone()
    }

    fn rated_items(&self, rater_id: &str) -> Result<Vec<bool>> {
        let rater = self
            .plan
            .rater(rater_id)
            .ok_or_else(|| Error::Rating(format!("unknown rater `{rater_id}`")))?;
        let guard = self.inner.lock().expect("rating store poisoned");
        Ok(rater
            .items
            .iter()
            .map(|item| {
                item.presented.iter().all(|p| {
                    let key = (
                        rater_id.to_string(),
                        item.pair_id.clone(),
                        p.slot_id.clone(),
                    );
                    guard.0.latest.contains_key(&key)
                })
            })
            .collect())
    }

    pub fn progress(&self, rater_id: &str) -> Result<Progress> {
        let done = self.rated_items(rater_id)?;
        let demographics_submitted = self
            .inner
            .lock()
            .expect("rating store poisoned")
            .0
            .demographics
            .contains_key(rater_id);
        Ok(Progress {
            rater_id: rater_id.to_string(),
            completed_items: done.iter().filter(|d| **d).count(),
            total_items: done.len(),
            demographics_submitted,
        })
    }

    /// The first item in plan order with an unrated slot, blinded.
    pub fn next_item(&self, rater_id: &str) -> Result<Option<BlindedItem>> {
        let done = self.rated_items(rater_id)?;
        let rater = self.plan.rater(rater_id).expect("checked above");
        Ok(done
            .iter()
            .position(|d| !d)
            .map(|i| rater.items[i].blinded(rater_id, i, rater.items.len())))
    }
}

fn replay(path: &Path, plan: &StudyPlan) -> Result<State> {
    let mut state = State::default();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            message: format!("{}:{}: {e}", path.display(), i + 1),
            raw: line.clone(),
        })?;
        validate(plan, &entry)?;
        apply(&mut state, entry);
    }
    Ok(state)
}

/// Current ratings in a log file without opening it for writing.
pub fn read_ratings_log(path: impl AsRef<Path>, plan: &StudyPlan) -> Result<Vec<RatingRecord>> {
    Ok(replay(path.as_ref(), plan)?.latest.into_values().collect())
}

/// Writes ratings as a fresh log, one entry per line.
pub fn write_ratings_log(path: impl AsRef<Path>, ratings: &[RatingRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for r in ratings {
        s.push_str(&serde_json::to_string(&LogEntry::Rating(r.clone()))?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn validate(plan: &StudyPlan, entry: &LogEntry) -> Result<()> {
    match entry {
        LogEntry::Rating(r) => {
            if !(RATING_MIN..=RATING_MAX).contains(&r.rating) {
                return Err(Error::Rating(format!(
                    "rating {} outside [{RATING_MIN}, {RATING_MAX}]",
                    r.rating
                )));
            }
            let item = plan.item(&r.rater_id, &r.pair_id).ok_or_else(|| {
                Error::Rating(format!(
                    "rater `{}` has no item for pair `{}`",
                    r.rater_id, r.pair_id
                ))
            })?;
            if item.label_of(&r.slot_id).is_none() {
                return Err(Error::Rating(format!(
                    "unknown slot `{}` for pair `{}`",
                    r.slot_id, r.pair_id
                )));
            }
        }
        LogEntry::Demographics {
            rater_id, answers, ..
        } => {
            if plan.rater(rater_id).is_none() {
                return Err(Error::Rating(format!("unknown rater `{rater_id}`")));
            }
            if let Some(k) = answers
                .keys()
                .find(|k| !DEMOGRAPHIC_QUESTIONS.contains(&k.as_str()))
            {
                return Err(Error::Rating(format!(
                    "unknown demographic question `{k}`; expected one of {}",
                    DEMOGRAPHIC_QUESTIONS.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn apply(state: &mut State, entry: LogEntry) {
    match &entry {
        LogEntry::Rating(r) => {
            let key = (r.rater_id.clone(), r.pair_id.clone(), r.slot_id.clone());
            state.latest.insert(key, r.clone());
        }
        LogEntry::Demographics {
            rater_id, answers, ..
        } => {
            state.demographics.insert(rater_id.clone(), answers.clone());
        }
    }
    state.log.push(entry);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::tests::small_plan;

    fn rec(rater: &str, pair: &str, slot: &str, rating: u8) -> RatingRecord {
        RatingRecord {
            rater_id: rater.into(),
            pair_id: pair.into(),
            slot_id: slot.into(),
            rating,
            timestamp: 0,
        }
    }

    #[test]
    fn validates_range_and_slot() {
        let plan = small_plan(1);
        let pid = plan.raters[0].items[0].pair_id.clone();
        let store = RatingStore::in_memory(plan);
        store.record_rating(rec("r0", &pid, "1", 73)).unwrap();
        assert_eq!(store.ratings()[0].rating, 73);
        for bad in [
            rec("r0", &pid, "1", 0),
            rec("r0", &pid, "1", 101),
            rec("r0", &pid, "9", 50),
            rec("rx", &pid, "1", 5),
        ] {
            assert!(matches!(store.record_rating(bad), Err(Error::Rating(_))));
        }
        assert_eq!(store.audit_log().len(), 1);
    }

    #[test]
    fn resubmission_supersedes_and_is_audited() {
        let plan = small_plan(1);
        let pid = plan.raters[0].items[0].pair_id.clone();
        let store = RatingStore::in_memory(plan);
        store.record_rating(rec("r0", &pid, "2", 10)).unwrap();
        store.record_rating(rec("r0", &pid, "2", 90)).unwrap();
        assert_eq!(store.ratings().len(), 1);
        assert_eq!(store.ratings()[0].rating, 90);
        assert_eq!(store.audit_log().len(), 2);
    }

    #[test]
    fn replay_reproduces_state_and_progress() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.jsonl");
        let plan = small_plan(2);
        let store = RatingStore::open(&path, plan.clone()).unwrap();
        let first = store.next_item("r1").unwrap().unwrap();
        assert_eq!(first.item_index, 0);
        for s in &first.suggestions {
            store
                .record_rating(rec("r1", &first.pair_id, &s.slot_id, 40))
                .unwrap();
        }
        store
            .record_demographics(
                "r1",
                BTreeMap::from([("age".to_string(), "30-39".to_string())]),
                1,
            )
            .unwrap();
        assert!(store
            .record_demographics(
                "r1",
                BTreeMap::from([("shoe size".to_string(), "9".to_string())]),
                1
            )
            .is_err());
        let p = store.progress("r1").unwrap();
        assert_eq!(
            (p.completed_items, p.total_items, p.demographics_submitted),
            (1, 5, true)
        );
        assert_eq!(store.next_item("r1").unwrap().unwrap().item_index, 1);
        let ratings = store.ratings();
        drop(store);

        let again = RatingStore::open(&path, plan).unwrap();
        assert_eq!(again.ratings(), ratings);
        assert_eq!(again.progress("r1").unwrap(), p);
        assert!(again.progress("nobody").is_err());
    }

    #[test]
    fn finished_rater_has_no_next_item() {
        let plan = small_plan(1);
        let store = RatingStore::in_memory(plan.clone());
        for item in &plan.raters[0].items {
            for s in &item.presented {
                store
                    .record_rating(rec("r0", &item.pair_id, &s.slot_id, 50))
                    .unwrap();
            }
        }
        assert!(store.next_item("r0").unwrap().is_none());
        assert!(store.progress("r0").unwrap().done());
    }

    #[test]
    fn log_lines_round_trip() {
        let e = LogEntry::Rating(rec("a", "b", "1", 5));
        let line = serde_json::to_string(&e).unwrap();
        assert!(line.contains(r#""kind":"rating""#));
        assert_eq!(serde_json::from_str::<LogEntry>(&line).unwrap(), e);
    }
}
