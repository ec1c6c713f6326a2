//! Closed document corpus: ingestion, lookup, keyword filtering and metadata
//! grouping.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_count;

/// Label of the bucket that collects documents missing the grouping key.
pub const UNKNOWN_GROUP: &str = "unknown";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus source {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record {position}: {message}")]
    MalformedRecord { position: String, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("topic provider failed for document {doc_id:?}: {message}")]
    TopicProvider { doc_id: String, message: String },
    #[error("keyword query is empty")]
    EmptyQuery,
    #[error("unknown document id {0:?}")]
    UnknownDocument(String),
    #[error("cannot write corpus to {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub date: Option<NaiveDate>,
    /// Whitespace-token count of `body`.
    pub length: usize,
    pub topic: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        Self {
            id: id.into(),
            title: title.into(),
            length: word_count(&body),
            body,
            date: None,
            topic: None,
        }
    }

    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.date = Some(date);
        self
    }

    pub fn with_topic(mut self, topic: impl Into<String>) -> Self {
        self.topic = Some(topic.into());
        self
    }
}

/// Line format of the newline-delimited corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    title: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topic: Option<String>,
}

/// Accepted corpus source layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line: `id`, `title`, `text`, optional `date`, `topic`.
    Jsonl,
    /// A directory of plain-text files; the file stem is both id and title.
    TextDir,
}

impl CorpusFormat {
    /// Directories are read as [`CorpusFormat::TextDir`], anything else as JSONL.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            CorpusFormat::TextDir
        } else {
            CorpusFormat::Jsonl
        }
    }
}

/// Immutable, id-addressable view of the corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    topic_groups: BTreeMap<String, BTreeSet<String>>,
}

impl CorpusIndex {
    /// Build an index, rejecting duplicate ids.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        let mut index = Self {
            documents,
            by_id,
            topic_groups: BTreeMap::new(),
        };
        index.rebuild_topic_groups();
        Ok(index)
    }

    fn rebuild_topic_groups(&mut self) {
        self.topic_groups.clear();
        for doc in &self.documents {
            if let Some(topic) = &doc.topic {
                self.topic_groups
                    .entry(topic.clone())
                    .or_default()
                    .insert(doc.id.clone());
            }
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Look up a document, failing on unknown ids.
    pub fn require(&self, id: &str) -> Result<&Document, CorpusError> {
        self.get(id).ok_or_else(|| CorpusError::UnknownDocument(id.to_string()))
    }

    pub fn topic_groups(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.topic_groups
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Label documents through `provider` and rebuild the topic groups.
    /// Documents the provider leaves unlabeled keep whatever topic they had.
    pub fn assign_topics(mut self, provider: &dyn TopicProvider) -> Result<Self, CorpusError> {
        for doc in &mut self.documents {
            let label = provider.topic_for(doc).map_err(|message| CorpusError::TopicProvider {
                doc_id: doc.id.clone(),
                message,
            })?;
            if let Some(label) = label {
                doc.topic = Some(label);
            }
        }
        self.rebuild_topic_groups();
        Ok(self)
    }

    /// Write the corpus in the newline-delimited record format, in corpus order.
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for doc in &self.documents {
            let record = CorpusRecord {
                id: doc.id.clone(),
                title: doc.title.clone(),
                text: doc.body.clone(),
                date: doc.date.map(|d| d.format("%Y-%m-%d").to_string()),
                topic: doc.topic.clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let write_err = |source| CorpusError::Write {
            path: path.to_path_buf(),
            source,
        };
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).map_err(write_err)?;
        fs::write(path, buf).map_err(write_err)
    }
}

/// Ingest a corpus from `source` in the given format.
pub fn ingest_corpus(source: &Path, format: CorpusFormat) -> Result<CorpusIndex, CorpusError> {
    let unreadable = |e| CorpusError::Unreadable {
        path: source.to_path_buf(),
        source: e,
    };
    match format {
        CorpusFormat::Jsonl => {
            let file = fs::File::open(source).map_err(unreadable)?;
            ingest_records(BufReader::new(file))
        }
        CorpusFormat::TextDir => {
            let mut paths = Vec::new();
            for entry in fs::read_dir(source).map_err(unreadable)? {
                let path = entry.map_err(unreadable)?.path();
                if path.is_file() {
                    paths.push(path);
                }
            }
            paths.sort();
            let mut documents = Vec::with_capacity(paths.len());
            for path in paths {
                let position = path.display().to_string();
                let body = fs::read_to_string(&path).map_err(|e| CorpusError::MalformedRecord {
                    position: position.clone(),
                    message: e.to_string(),
                })?;
                if body.trim().is_empty() {
                    return Err(CorpusError::MalformedRecord {
                        position,
                        message: "empty document text".into(),
                    });
                }
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                documents.push(Document::new(id.clone(), id, body));
            }
            CorpusIndex::from_documents(documents)
        }
    }
}

/// Ingest newline-delimited JSON records. Blank lines are ignored.
pub fn ingest_records(reader: impl BufRead) -> Result<CorpusIndex, CorpusError> {
    let mut documents = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let position = format!("line {}", n + 1);
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            position: position.clone(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::MalformedRecord {
            position: position.clone(),
            message,
        };
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if record.text.trim().is_empty() {
            return Err(malformed("empty document text".into()));
        }
        let date = record
            .date
            .as_deref()
            .map(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d"))
            .transpose()
            .map_err(|e| malformed(format!("invalid date: {e}")))?;
        let mut doc = Document::new(record.id, record.title, record.text);
        doc.date = date;
        doc.topic = record.topic;
        documents.push(doc);
    }
    CorpusIndex::from_documents(documents)
}

/// Source of topic labels, one optional label per document.
pub trait TopicProvider {
    fn topic_for(&self, doc: &Document) -> Result<Option<String>, String>;
}

/// Topic labels precomputed offline and read from a newline-delimited file
/// of `{"id": ..., "topic": ...}` records.
#[derive(Debug, Clone, Default)]
pub struct FileTopicProvider {
    labels: HashMap<String, String>,
}

#[derive(Deserialize)]
struct TopicRecord {
    id: String,
    topic: String,
}

impl FileTopicProvider {
    pub fn from_labels(labels: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            labels: labels.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut labels = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TopicRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                position: format!("{}:{}", path.display(), n + 1),
                message: e.to_string(),
            })?;
            labels.insert(record.id, record.topic);
        }
        Ok(Self { labels })
    }
}

impl TopicProvider for FileTopicProvider {
    fn topic_for(&self, doc: &Document) -> Result<Option<String>, String> {
        Ok(self.labels.get(&doc.id).cloned())
    }
}

/// Which document fields a keyword query inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFields {
    pub title: bool,
    pub body: bool,
}

impl SearchFields {
    pub const ALL: SearchFields = SearchFields {
        title: true,
        body: true,
    };
    pub const TITLE: SearchFields = SearchFields {
        title: true,
        body: false,
    };
    pub const BODY: SearchFields = SearchFields {
        title: false,
        body: true,
    };
}

impl Default for SearchFields {
    fn default() -> Self {
        Self::ALL
    }
}

/// Case-insensitive substring filter over the selected fields, in corpus order.
pub fn keyword_filter<'a>(
    index: &'a CorpusIndex,
    query: &str,
    fields: SearchFields,
) -> Result<Vec<&'a Document>, CorpusError> {
    let needle = query.trim().to_lowercase();
    if needle.is_empty() {
        return Err(CorpusError::EmptyQuery);
    }
    Ok(index
        .documents()
        .iter()
        .filter(|doc| {
            (fields.title && doc.title.to_lowercase().contains(&needle))
                || (fields.body && doc.body.to_lowercase().contains(&needle))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    Date,
    Name,
    Length,
    Topic,
}

impl std::str::FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "date" => Ok(GroupKey::Date),
            "name" | "title" => Ok(GroupKey::Name),
            "length" => Ok(GroupKey::Length),
            "topic" => Ok(GroupKey::Topic),
            other => Err(format!("unknown grouping key {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    #[default]
    Asc,
    Desc,
}

impl std::str::FromStr for SortDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "asc" | "ascending" => Ok(SortDirection::Asc),
            "desc" | "descending" => Ok(SortDirection::Desc),
            other => Err(format!("unknown sort direction {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentGroup<'a> {
    pub label: String,
    pub documents: Vec<&'a Document>,
}

/// Label of the single group produced for keys that sort without bucketing.
pub const ALL_GROUP: &str = "all";

/// Stable sort of `docs` by `key`, bucketed into groups.
///
/// `topic` and `date` produce one group per distinct value; `name` and
/// `length` produce one sorted group. Documents missing the key always come
/// last, in input order, under [`UNKNOWN_GROUP`].
pub fn group_sort<'a>(docs: &[&'a Document], key: GroupKey, direction: SortDirection) -> Vec<DocumentGroup<'a>> {
    let (mut keyed, unknown): (Vec<&Document>, Vec<&Document>) = docs.iter().copied().partition(|d| match key {
        GroupKey::Date => d.date.is_some(),
        GroupKey::Topic => d.topic.is_some(),
        GroupKey::Name | GroupKey::Length => true,
    });

    let ordered = |a: std::cmp::Ordering| match direction {
        SortDirection::Asc => a,
        SortDirection::Desc => a.reverse(),
    };
    match key {
        GroupKey::Date => keyed.sort_by(|a, b| ordered(a.date.cmp(&b.date))),
        GroupKey::Topic => keyed.sort_by(|a, b| ordered(a.topic.cmp(&b.topic))),
        GroupKey::Length => keyed.sort_by(|a, b| ordered(a.length.cmp(&b.length))),
        GroupKey::Name => keyed.sort_by(|a, b| {
            ordered(
                a.title
                    .to_lowercase()
                    .cmp(&b.title.to_lowercase())
                    .then_with(|| a.title.cmp(&b.title)),
            )
        }),
    }

    let mut groups: Vec<DocumentGroup<'a>> = Vec::new();
    for doc in keyed {
        let label = match key {
            GroupKey::Date => doc.date.map(|d| d.format("%Y-%m-%d").to_string()),
            GroupKey::Topic => doc.topic.clone(),
            GroupKey::Name | GroupKey::Length => None,
        }
        .unwrap_or_else(|| ALL_GROUP.to_string());
        match groups.last_mut() {
            Some(g) if g.label == label => g.documents.push(doc),
            _ => groups.push(DocumentGroup {
                label,
                documents: vec![doc],
            }),
        }
    }
    if !unknown.is_empty() {
        groups.push(DocumentGroup {
            label: UNKNOWN_GROUP.to_string(),
            documents: unknown,
        });
    }
    groups
}
