//! Speech records: fetching from the minutes search API, topic corpora,
//! roster filtering, and the line-delimited corpus store.

mod api;
mod roster;
mod store;

pub use api::{
    ApiConfig, FetchError, HttpReply, HttpTransport, MinutesClient, RecordingTransport,
    ReplayTransport, SpeechStream, TransportError, UreqTransport, DEFAULT_BASE_URL, MAX_PAGE_SIZE,
};
pub use roster::{Party, RosterEntry, RosterError, SpeakerRoster};
pub use store::{load_corpus, store_corpus, StoreError, CORPUS_SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum House {
    #[default]
    Lower,
    Upper,
}

impl House {
    /// Name used by the minutes API (`nameOfHouse`).
    pub fn api_name(self) -> &'static str {
        match self {
            House::Lower => "衆議院",
            House::Upper => "参議院",
        }
    }

    pub fn from_api_name(name: &str) -> Option<House> {
        match name {
            "衆議院" => Some(House::Lower),
            "参議院" => Some(House::Upper),
            _ => None,
        }
    }
}

/// One speech turn from the minutes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechRecord {
    pub speech_id: String,
    pub speaker_name: String,
    /// Canonical party code once the record has passed the roster filter;
    /// the raw parliamentary group name before that if it is not recognised.
    pub party: String,
    pub house: House,
    pub date: NaiveDate,
    pub text: String,
    pub matched_queries: BTreeSet<String>,
}

/// A controversy and the query words used to collect speeches about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub topic_id: String,
    pub query_words: Vec<String>,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    #[serde(default)]
    pub house: House,
}

impl TopicSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.topic_id.trim().is_empty() {
            return Err(CorpusError::Precondition("topic_id is empty".into()));
        }
        if self.query_words.is_empty() || self.query_words.iter().any(|q| q.trim().is_empty()) {
            return Err(CorpusError::Precondition(format!(
                "topic {}: query_words must be non-empty strings",
                self.topic_id
            )));
        }
        if self.date_from > self.date_to {
            return Err(CorpusError::Precondition(format!(
                "topic {}: date_from {} is after date_to {}",
                self.topic_id, self.date_from, self.date_to
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("fetching query {query:?}: {source}")]
    Fetch {
        query: String,
        #[source]
        source: FetchError,
    },
}

/// Anything that can answer a single-query speech search.
pub trait SpeechSource: Sync {
    fn search(
        &self,
        query: &str,
        date_from: NaiveDate,
        date_to: NaiveDate,
        house: House,
    ) -> Result<Vec<SpeechRecord>, FetchError>;
}

impl SpeechSource for MinutesClient {
    fn search(
        &self,
        query: &str,
        date_from: NaiveDate,
        date_to: NaiveDate,
        house: House,
    ) -> Result<Vec<SpeechRecord>, FetchError> {
        self.fetch_speeches(query, date_from, date_to, house)?
            .collect()
    }
}

/// An in-memory source answering searches by substring match over stored
/// records. Used to rebuild corpora from an existing store.
#[derive(Debug, Clone, Default)]
pub struct StoredSource {
    records: Vec<SpeechRecord>,
}

impl StoredSource {
    pub fn new(records: Vec<SpeechRecord>) -> Self {
        Self { records }
    }
}

impl SpeechSource for StoredSource {
    fn search(
        &self,
        query: &str,
        date_from: NaiveDate,
        date_to: NaiveDate,
        house: House,
    ) -> Result<Vec<SpeechRecord>, FetchError> {
        Ok(self
            .records
            .iter()
            .filter(|r| r.house == house && r.date >= date_from && r.date <= date_to)
            .filter(|r| r.text.contains(query))
            .map(|r| SpeechRecord {
                matched_queries: BTreeSet::from([query.to_string()]),
                ..r.clone()
            })
            .collect())
    }
}

/// Collects every speech matching any of the topic's query words, merges
/// duplicates by `speech_id`, keeps only active roster members, and sorts by
/// `(date, speech_id)`.
///
/// Queries are issued concurrently; a `MinutesClient` source still paces
/// all of them through its single rate limiter.
pub fn build_topic_corpus(
    spec: &TopicSpec,
    roster: &SpeakerRoster,
    source: &dyn SpeechSource,
) -> Result<Vec<SpeechRecord>, CorpusError> {
    spec.validate()?;
    if roster.is_empty() {
        return Err(CorpusError::Precondition("speaker roster is empty".into()));
    }

    let fetched: Vec<Result<Vec<SpeechRecord>, CorpusError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .query_words
            .iter()
            .map(|query| {
                scope.spawn(move || {
                    source
                        .search(query, spec.date_from, spec.date_to, spec.house)
                        .map_err(|source| CorpusError::Fetch {
                            query: query.clone(),
                            source,
                        })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("query worker panicked"))
            .collect()
    });

    let mut merged: BTreeMap<String, SpeechRecord> = BTreeMap::new();
    for batch in fetched {
        for record in batch? {
            match merged.get_mut(&record.speech_id) {
                Some(existing) => existing.matched_queries.extend(record.matched_queries),
                None => {
                    merged.insert(record.speech_id.clone(), record);
                }
            }
        }
    }

    let mut corpus: Vec<SpeechRecord> = merged
        .into_values()
        .filter(|r| !r.matched_queries.is_empty() && !r.text.is_empty())
        .filter_map(|mut r| {
            let member = roster.resolve_active(&r.speaker_name)?;
            r.speaker_name = member.speaker_name.clone();
            r.party = member.party.code().to_string();
            Some(r)
        })
        .collect();
    corpus.sort_by(|a, b| (a.date, &a.speech_id).cmp(&(b.date, &b.speech_id)));
    Ok(corpus)
}
