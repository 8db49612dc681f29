use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Policy, PolicyCategory, RiskLevel, TieredQueue, ViolationReference};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatabaseError {
    #[error("policy `{0}` already exists")]
    DuplicateId(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
    #[error("invalid database: {0}")]
    Invalid(String),
}

/// Queue length per risk tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueCapacity {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

impl Default for QueueCapacity {
    fn default() -> Self {
        QueueCapacity {
            low: 5,
            medium: 7,
            high: 10,
        }
    }
}

impl QueueCapacity {
    pub fn get(&self, level: RiskLevel) -> usize {
        match level {
            RiskLevel::Low => self.low,
            RiskLevel::Medium => self.medium,
            RiskLevel::High => self.high,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for level in RiskLevel::ALL {
            if self.get(level) == 0 {
                return Err(format!("queue capacity for `{level}` must be at least 1"));
            }
        }
        Ok(())
    }
}

/// The policy knowledge base.
///
/// Policies are keyed by id; iteration and serialization follow id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDatabase {
    policies: BTreeMap<String, Policy>,
    queue_capacity: QueueCapacity,
    next_sequence: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatabaseFile {
    schema_version: u32,
    queue_capacity: QueueCapacity,
    next_sequence: u64,
    policies: Vec<Policy>,
}

impl Default for PolicyDatabase {
    fn default() -> Self {
        PolicyDatabase::new(QueueCapacity::default())
    }
}

impl PolicyDatabase {
    /// # Panics
    ///
    /// Panics if any capacity is zero.
    pub fn new(queue_capacity: QueueCapacity) -> Self {
        if let Err(e) = queue_capacity.validate() {
            panic!("{e}");
        }
        PolicyDatabase {
            policies: BTreeMap::new(),
            queue_capacity,
            next_sequence: 1,
        }
    }

    pub fn queue_capacity(&self) -> QueueCapacity {
        self.queue_capacity
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.policies.contains_key(id)
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.policies.values()
    }

    pub(crate) fn get_mut(&mut self, id: &str) -> Option<&mut Policy> {
        self.policies.get_mut(id)
    }

    /// An empty queue sized for `level` under this database's capacity map.
    pub fn empty_queue(&self, level: RiskLevel) -> TieredQueue {
        TieredQueue::new(self.queue_capacity.get(level))
    }

    /// Stores a new policy. An empty violation queue is rebound to the
    /// capacity of the policy's risk tier.
    pub fn insert_policy(&mut self, mut policy: Policy) -> Result<(), DatabaseError> {
        if self.policies.contains_key(&policy.id) {
            return Err(DatabaseError::DuplicateId(policy.id));
        }
        if policy.definition.trim().is_empty() {
            return Err(DatabaseError::Invalid(format!(
                "policy `{}` has an empty definition",
                policy.id
            )));
        }
        let cap = self.queue_capacity.get(policy.risk_level);
        if policy.violation_queue.is_empty() {
            policy.violation_queue = TieredQueue::new(cap);
        } else if policy.violation_queue.capacity() != cap {
            return Err(DatabaseError::Invalid(format!(
                "policy `{}` queue capacity {} does not match tier capacity {cap}",
                policy.id,
                policy.violation_queue.capacity()
            )));
        }
        self.policies.insert(policy.id.clone(), policy);
        Ok(())
    }

    /// Policies matching an optional category and an optional
    /// case-insensitive substring of their scope.
    pub fn query(&self, category: Option<PolicyCategory>, scope_hint: Option<&str>) -> Vec<&Policy> {
        let hint = scope_hint.map(str::to_lowercase);
        self.policies
            .values()
            .filter(|p| category.is_none_or(|c| p.category == c))
            .filter(|p| hint.as_deref().is_none_or(|h| p.scope.to_lowercase().contains(h)))
            .collect()
    }

    /// All queued references across the given policies, oldest first.
    pub fn queued_for<'a>(&'a self, ids: impl IntoIterator<Item = &'a str>) -> Vec<&'a ViolationReference> {
        let mut out: Vec<&ViolationReference> = ids
            .into_iter()
            .filter_map(|id| self.policies.get(id))
            .flat_map(|p| p.violation_queue.iter())
            .collect();
        out.sort_by_key(|v| v.created_at);
        out
    }

    pub(crate) fn take_sequence(&mut self) -> u64 {
        let seq = self.next_sequence;
        self.next_sequence += 1;
        seq
    }

    /// Checks every structural invariant of the database.
    pub fn validate(&self) -> Result<(), DatabaseError> {
        self.queue_capacity.validate().map_err(DatabaseError::Invalid)?;
        if self.next_sequence == 0 {
            return Err(DatabaseError::Invalid("next_sequence must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for (id, p) in &self.policies {
            if id != &p.id {
                return Err(DatabaseError::Invalid(format!("policy keyed `{id}` has id `{}`", p.id)));
            }
            let cap = self.queue_capacity.get(p.risk_level);
            if p.violation_queue.capacity() != cap {
                return Err(DatabaseError::Invalid(format!(
                    "policy `{id}` queue capacity {} does not match tier capacity {cap}",
                    p.violation_queue.capacity()
                )));
            }
            p.violation_queue
                .check()
                .map_err(|e| DatabaseError::Invalid(format!("policy `{id}`: {e}")))?;
            for v in p.violation_queue.iter() {
                if v.policy_id != p.id {
                    return Err(DatabaseError::Invalid(format!(
                        "policy `{id}` queues a reference for `{}`",
                        v.policy_id
                    )));
                }
                if v.canonical_text.trim().is_empty() {
                    return Err(DatabaseError::Invalid(format!(
                        "policy `{id}` queues an empty reference"
                    )));
                }
                if v.created_at == 0 || v.created_at >= self.next_sequence {
                    return Err(DatabaseError::Invalid(format!(
                        "policy `{id}` reference sequence {} outside [1, {})",
                        v.created_at, self.next_sequence
                    )));
                }
                if !seen.insert(v.created_at) {
                    return Err(DatabaseError::Invalid(format!(
                        "sequence number {} appears twice",
                        v.created_at
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the on-disk document format.
    pub fn to_json(&self) -> String {
        let file = DatabaseFile {
            schema_version: SCHEMA_VERSION,
            queue_capacity: self.queue_capacity,
            next_sequence: self.next_sequence,
            policies: self.policies.values().cloned().collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("database serializes");
        text.push('\n');
        text
    }

    /// Parses the on-disk document format. `origin` only labels errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, DatabaseError> {
        let parse_err = |e: serde_json::Error| DatabaseError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(found) => return Err(DatabaseError::SchemaVersion { found }),
            None => return Err(DatabaseError::Invalid("missing or non-integer schema_version".into())),
        }
        let file: DatabaseFile = serde_json::from_str(text).map_err(parse_err)?;
        let mut policies = BTreeMap::new();
        for p in file.policies {
            if policies.contains_key(&p.id) {
                return Err(DatabaseError::DuplicateId(p.id));
            }
            policies.insert(p.id.clone(), p);
        }
        let db = PolicyDatabase {
            policies,
            queue_capacity: file.queue_capacity,
            next_sequence: file.next_sequence,
        };
        db.validate()?;
        Ok(db)
    }

    /// Writes the database atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<(), DatabaseError> {
        let io_err = |source| DatabaseError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, DatabaseError> {
        let text = fs::read_to_string(path).map_err(|source| DatabaseError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }
}
