//! Benchmark knowledge graph loading, indexing and neighbor sampling.
//!
//! A dataset directory holds `train.tsv`, `dev.tsv`, `test.tsv`,
//! `entity2text.txt` and `relation2text.txt`. Optional `entities.txt` and
//! `relations.txt` list the id universe (one id per line); when absent the
//! ids in the text files define it.

use std::borrow::Borrow;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl Into<Arc<str>>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), &*self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.into())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                if s.is_empty() {
                    return Err(serde::de::Error::custom(concat!(
                        stringify!($name),
                        " must be non-empty"
                    )));
                }
                Ok(Self(s.into()))
            }
        }
    };
}

string_id!(EntityId);
string_id!(RelationId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "WN11")]
    Wn11,
    #[serde(rename = "FB13")]
    Fb13,
    #[serde(rename = "WN18RR")]
    Wn18rr,
    #[serde(rename = "YAGO3-10")]
    Yago3_10,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [Self::Wn11, Self::Fb13, Self::Wn18rr, Self::Yago3_10];

    /// Triple-classification datasets carry a `1`/`-1` label column on dev and test.
    pub fn is_labeled(self) -> bool {
        matches!(self, Self::Wn11 | Self::Fb13)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Wn11 => "WN11",
            Self::Fb13 => "FB13",
            Self::Wn18rr => "WN18RR",
            Self::Yago3_10 => "YAGO3-10",
        }
    }

    /// Guess the kind from a directory name such as `data/WN18RR`.
    pub fn from_dir(dir: &Path) -> Option<Self> {
        dir.file_name()?.to_str()?.parse().ok()
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "wn11" => Ok(Self::Wn11),
            "fb13" => Ok(Self::Fb13),
            "wn18rr" => Ok(Self::Wn18rr),
            "yago310" => Ok(Self::Yago3_10),
            _ => Err(format!(
                "unknown dataset kind {s:?} (expected WN11, FB13, WN18RR or YAGO3-10)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Dev => "dev.tsv",
            Split::Test => "test.tsv",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train, dev or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub id: RelationId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }

    /// The unlabeled (h, r, t) key.
    pub fn key(&self) -> (&str, &str, &str) {
        (
            self.head.as_str(),
            self.relation.as_str(),
            self.tail.as_str(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeDirection {
    Outgoing,
    Incoming,
}

/// One endpoint record of a train triple, seen from the other endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbor {
    pub entity: EntityId,
    pub relation: RelationId,
    pub direction: EdgeDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborSamplingConfig {
    pub k: usize,
    pub seed: u64,
}

impl NeighborSamplingConfig {
    pub const DEFAULT_K: usize = 5;

    pub fn new(k: usize, seed: u64) -> Result<Self, KgError> {
        if k == 0 {
            return Err(KgError::InvalidNeighborCount);
        }
        Ok(Self { k, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

impl Default for NeighborSamplingConfig {
    fn default() -> Self {
        Self {
            k: Self::DEFAULT_K,
            seed: 0,
        }
    }
}

/// Row counts in the layout of the usual dataset summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} / {} / {} / {}",
            thousands(self.entities),
            thousands(self.relations),
            thousands(self.train),
            thousands(self.dev),
            thousands(self.test)
        )
    }
}

/// Formats `n` with comma thousands separators.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("dataset directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: unknown {namespace} id {id:?}")]
    UnknownId {
        path: PathBuf,
        line: usize,
        namespace: &'static str,
        id: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgError {
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("neighbor count must be at least 1")]
    InvalidNeighborCount,
}

/// An immutable, indexed benchmark knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    kind: DatasetKind,
    entities: Vec<Entity>,
    entity_index: HashMap<EntityId, usize>,
    relations: Vec<Relation>,
    relation_index: HashMap<RelationId, usize>,
    train: Vec<Triple>,
    dev: Vec<Triple>,
    test: Vec<Triple>,
    adjacency: Vec<Vec<Neighbor>>,
}

/// Id with underscores turned into spaces, used when no text entry exists.
pub fn fallback_text(id: &str) -> String {
    let text = id.replace('_', " ");
    let trimmed = text.trim();
    if trimmed.is_empty() {
        id.to_string()
    } else {
        trimmed.to_string()
    }
}

impl KnowledgeGraph {
    /// Reads a dataset directory. Fails on the first missing file, malformed
    /// line, or triple that references an id outside the entity/relation
    /// universe.
    pub fn load(dir: impl AsRef<Path>, kind: DatasetKind) -> Result<Self, LoadError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(LoadError::MissingDir(dir.to_path_buf()));
        }

        let entity_text = read_text_map(&dir.join("entity2text.txt"))?;
        let relation_text = read_text_map(&dir.join("relation2text.txt"))?;
        let entity_ids = match read_optional_id_list(&dir.join("entities.txt"))? {
            Some(ids) => ids,
            None => entity_text.iter().map(|(id, _, _)| id.clone()).collect(),
        };
        let relation_ids = match read_optional_id_list(&dir.join("relations.txt"))? {
            Some(ids) => ids,
            None => relation_text.iter().map(|(id, _, _)| id.clone()).collect(),
        };

        let entity_lookup: HashMap<&str, &str> = entity_text
            .iter()
            .map(|(id, text, _)| (id.as_str(), text.as_str()))
            .collect();
        let entities: Vec<Entity> = entity_ids
            .into_iter()
            .map(|id| {
                let text = match entity_lookup.get(id.as_str()) {
                    Some(t) if !t.trim().is_empty() => t.to_string(),
                    _ => fallback_text(&id),
                };
                Entity {
                    id: EntityId::new(id),
                    text,
                }
            })
            .collect();

        let relation_path = dir.join("relation2text.txt");
        let relation_lookup: HashMap<&str, (&str, usize)> = relation_text
            .iter()
            .map(|(id, text, line)| (id.as_str(), (text.as_str(), *line)))
            .collect();
        let mut relations = Vec::with_capacity(relation_ids.len());
        for id in relation_ids {
            let text = match relation_lookup.get(id.as_str()) {
                Some((t, line)) if !t.trim().is_empty() => {
                    if t.contains('|') {
                        return Err(LoadError::Malformed {
                            path: relation_path,
                            line: *line,
                            reason: format!("relation text {t:?} contains '|'"),
                        });
                    }
                    t.to_string()
                }
                _ => fallback_text(&id),
            };
            relations.push(Relation {
                id: RelationId::new(id),
                text,
            });
        }

        let entity_index: HashMap<EntityId, usize> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        let relation_index: HashMap<RelationId, usize> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();

        let mut kg = KnowledgeGraph {
            kind,
            entities,
            entity_index,
            relations,
            relation_index,
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
            adjacency: Vec::new(),
        };
        kg.train = kg.read_split(dir, Split::Train)?;
        kg.dev = kg.read_split(dir, Split::Dev)?;
        kg.test = kg.read_split(dir, Split::Test)?;
        kg.build_adjacency();
        Ok(kg)
    }

    /// Builds a graph from in-memory parts. Triples must reference known ids.
    pub fn from_parts(
        kind: DatasetKind,
        entities: Vec<Entity>,
        relations: Vec<Relation>,
        train: Vec<Triple>,
        dev: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, KgError> {
        let entity_index = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        let relation_index = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let mut kg = KnowledgeGraph {
            kind,
            entities,
            entity_index,
            relations,
            relation_index,
            train,
            dev,
            test,
            adjacency: Vec::new(),
        };
        for t in kg.train.iter().chain(&kg.dev).chain(&kg.test) {
            kg.entity(t.head.as_str())?;
            kg.entity(t.tail.as_str())?;
            kg.relation(t.relation.as_str())?;
        }
        kg.build_adjacency();
        Ok(kg)
    }

    fn read_split(&self, dir: &Path, split: Split) -> Result<Vec<Triple>, LoadError> {
        let path = dir.join(split.file_name());
        let content = read_file(&path)?;
        let label_allowed = self.kind.is_labeled();
        let label_required = label_allowed && split != Split::Train;
        let mut out = Vec::new();
        for (i, raw) in content.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let cols: Vec<&str> = line.split('\t').collect();
            let malformed = |reason: String| LoadError::Malformed {
                path: path.clone(),
                line: line_no,
                reason,
            };
            let label = match cols.len() {
                3 if label_required => {
                    return Err(malformed(format!(
                        "{} {} rows need a label column",
                        self.kind, split
                    )))
                }
                3 => None,
                4 if !label_allowed => {
                    return Err(malformed(format!(
                        "{} rows must not carry a label column",
                        self.kind
                    )))
                }
                4 => Some(match cols[3] {
                    "1" => true,
                    "-1" => false,
                    other => return Err(malformed(format!("bad label {other:?}"))),
                }),
                n => return Err(malformed(format!("expected 3 or 4 columns, found {n}"))),
            };
            let unknown = |namespace: &'static str, id: &str| LoadError::UnknownId {
                path: path.clone(),
                line: line_no,
                namespace,
                id: id.to_string(),
            };
            let head = self
                .entity_id(cols[0])
                .ok_or_else(|| unknown("entity", cols[0]))?;
            let relation = self
                .relation_id(cols[1])
                .ok_or_else(|| unknown("relation", cols[1]))?;
            let tail = self
                .entity_id(cols[2])
                .ok_or_else(|| unknown("entity", cols[2]))?;
            out.push(Triple {
                head,
                relation,
                tail,
                label,
            });
        }
        Ok(out)
    }

    fn build_adjacency(&mut self) {
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        for t in self.train.iter().filter(|t| t.label != Some(false)) {
            let h = self.entity_index[&t.head];
            let tl = self.entity_index[&t.tail];
            adjacency[h].push(Neighbor {
                entity: t.tail.clone(),
                relation: t.relation.clone(),
                direction: EdgeDirection::Outgoing,
            });
            adjacency[tl].push(Neighbor {
                entity: t.head.clone(),
                relation: t.relation.clone(),
                direction: EdgeDirection::Incoming,
            });
        }
        self.adjacency = adjacency;
    }

    fn entity_id(&self, id: &str) -> Option<EntityId> {
        self.entity_index.get_key_value(id).map(|(k, _)| k.clone())
    }

    fn relation_id(&self, id: &str) -> Option<RelationId> {
        self.relation_index
            .get_key_value(id)
            .map(|(k, _)| k.clone())
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    /// Relations in relation-file order.
    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }

    pub fn entity(&self, id: &str) -> Result<&Entity, KgError> {
        self.entity_index
            .get(id)
            .map(|&i| &self.entities[i])
            .ok_or_else(|| KgError::UnknownEntity(id.to_string()))
    }

    pub fn relation(&self, id: &str) -> Result<&Relation, KgError> {
        self.relation_index
            .get(id)
            .map(|&i| &self.relations[i])
            .ok_or_else(|| KgError::UnknownRelation(id.to_string()))
    }

    pub fn entity_text(&self, id: &str) -> Result<&str, KgError> {
        self.entity(id).map(|e| e.text.as_str())
    }

    pub fn relation_text(&self, id: &str) -> Result<&str, KgError> {
        self.relation(id).map(|r| r.text.as_str())
    }

    /// Endpoint records of train triples touching `id`, in train-file order.
    pub fn neighbors(&self, id: &str) -> Result<&[Neighbor], KgError> {
        self.entity_index
            .get(id)
            .map(|&i| self.adjacency[i].as_slice())
            .ok_or_else(|| KgError::UnknownEntity(id.to_string()))
    }

    /// Total number of adjacency records (two per train triple).
    pub fn adjacency_len(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Draws up to `cfg.k` distinct neighbors of `center`, uniformly without
    /// replacement, never returning `exclude`. Incoming and outgoing edges
    /// are pooled.
    pub fn sample_neighbors(
        &self,
        center: &str,
        exclude: Option<&str>,
        cfg: &NeighborSamplingConfig,
    ) -> Result<Vec<EntityId>, KgError> {
        let mut seen = HashSet::new();
        let mut pool: Vec<&EntityId> = self
            .neighbors(center)?
            .iter()
            .map(|n| &n.entity)
            .filter(|e| Some(e.as_str()) != exclude)
            .filter(|e| seen.insert(e.as_str()))
            .collect();
        let take = cfg.k.min(pool.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (picked, _) = pool.partial_shuffle(&mut rng, take);
        Ok(picked.iter().map(|e| (*e).clone()).collect())
    }

    /// Every relation phrase once, `|`-joined, in relation-file order.
    pub fn relation_candidate_list(&self) -> String {
        self.relations
            .iter()
            .map(|r| r.text.as_str())
            .collect::<Vec<_>>()
            .join("|")
    }

    pub(crate) fn positive_set(&self) -> HashSet<(&str, &str, &str)> {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .filter(|t| t.label != Some(false))
            .map(Triple::key)
            .collect()
    }
}

fn read_file(path: &Path) -> Result<String, LoadError> {
    if !path.exists() {
        return Err(LoadError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// (id, text, line number) rows of a two-column text file.
fn read_text_map(path: &Path) -> Result<Vec<(String, String, usize)>, LoadError> {
    let content = read_file(path)?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let malformed = |reason: String| LoadError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected `id<TAB>text`".to_string()))?;
        if id.is_empty() {
            return Err(malformed("empty id".to_string()));
        }
        if !seen.insert(id.to_string()) {
            return Err(malformed(format!("duplicate id {id:?}")));
        }
        rows.push((id.to_string(), text.to_string(), i + 1));
    }
    Ok(rows)
}

fn read_optional_id_list(path: &Path) -> Result<Option<Vec<String>>, LoadError> {
    if !path.exists() {
        return Ok(None);
    }
    let content = read_file(path)?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let id = raw.strip_suffix('\r').unwrap_or(raw);
        if id.is_empty() || !seen.insert(id.to_string()) {
            return Err(LoadError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("empty or duplicate id {id:?}"),
            });
        }
        ids.push(id.to_string());
    }
    Ok(Some(ids))
}
