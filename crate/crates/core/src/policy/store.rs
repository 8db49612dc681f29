use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use super::{DatabaseError, PolicyDatabase, QueueCapacity};

/// Single-writer, snapshot-reader holder for a [`PolicyDatabase`].
///
/// Readers get an `Arc` to an immutable value. Writers are serialized, work
/// on a private copy, persist it (when backed by a file) and then publish it.
#[derive(Debug)]
pub struct PolicyStore {
    current: RwLock<Arc<PolicyDatabase>>,
    writer: Mutex<()>,
    path: Option<PathBuf>,
}

impl PolicyStore {
    pub fn in_memory(db: PolicyDatabase) -> Self {
        PolicyStore {
            current: RwLock::new(Arc::new(db)),
            writer: Mutex::new(()),
            path: None,
        }
    }

    /// Loads `path` if it exists, otherwise starts from an empty database.
    /// Nothing is written until the first mutation.
    pub fn open(path: impl Into<PathBuf>, capacity: QueueCapacity) -> Result<Self, DatabaseError> {
        let path = path.into();
        let db = if path.exists() {
            let db = PolicyDatabase::load(&path)?;
            if db.queue_capacity() != capacity {
                return Err(DatabaseError::Invalid(format!(
                    "{} uses queue capacities {:?}, configuration asks for {:?}",
                    path.display(),
                    db.queue_capacity(),
                    capacity
                )));
            }
            db
        } else {
            PolicyDatabase::new(capacity)
        };
        Ok(PolicyStore {
            current: RwLock::new(Arc::new(db)),
            writer: Mutex::new(()),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn snapshot(&self) -> Arc<PolicyDatabase> {
        self.current.read().expect("store lock poisoned").clone()
    }

    /// Applies `f` to a copy of the database. The copy is validated,
    /// persisted and published only if `f` succeeds.
    pub fn write<R, E>(&self, f: impl FnOnce(&mut PolicyDatabase) -> Result<R, E>) -> Result<R, E>
    where
        E: From<DatabaseError>,
    {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        next.validate()?;
        if let Some(path) = &self.path {
            next.save(path)?;
        }
        *self.current.write().expect("store lock poisoned") = Arc::new(next);
        Ok(out)
    }

    /// Persists the current value without changing it.
    pub fn persist(&self) -> Result<(), DatabaseError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        match &self.path {
            Some(path) => self.snapshot().save(path),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_write_leaves_value_untouched() {
        let store = PolicyStore::in_memory(PolicyDatabase::default());
        let before = store.snapshot();
        let res: Result<(), DatabaseError> = store.write(|db| {
            db.take_sequence();
            Err(DatabaseError::Invalid("boom".into()))
        });
        assert!(res.is_err());
        assert_eq!(*store.snapshot(), *before);
    }

    #[test]
    fn snapshot_is_stable_across_writes() {
        let store = PolicyStore::in_memory(PolicyDatabase::default());
        let snap = store.snapshot();
        store
            .write(|db| {
                db.take_sequence();
                Ok::<_, DatabaseError>(())
            })
            .unwrap();
        assert_eq!(snap.next_sequence(), 1);
        assert_eq!(store.snapshot().next_sequence(), 2);
    }

    #[test]
    fn open_missing_file_starts_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.json");
        let store = PolicyStore::open(&path, QueueCapacity::default()).unwrap();
        assert!(store.snapshot().is_empty());
        assert!(!path.exists());
        store.persist().unwrap();
        assert!(path.exists());
    }
}
