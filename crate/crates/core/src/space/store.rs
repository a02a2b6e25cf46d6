use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::{diff_spaces, new_version, DiffEntry, Result, SearchSpace, SpaceDiff, SpaceError};

/// Append-only history of space versions. Writers are serialized by the
/// lock; readers get `Arc` snapshots.
#[derive(Debug, Default)]
pub struct SpaceStore {
    spaces: RwLock<HashMap<String, Vec<Arc<SearchSpace>>>>,
}

impl SpaceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a space. Its version must be exactly one past the current
    /// head of its id (or 1 for a new id).
    pub fn insert(&self, space: SearchSpace) -> Result<Arc<SearchSpace>> {
        let mut spaces = self.spaces.write().expect("space store poisoned");
        let history = spaces.entry(space.id.clone()).or_default();
        let expected = history.len() as u64 + 1;
        if space.version != expected {
            return Err(SpaceError::VersionExists {
                id: space.id.clone(),
                version: space.version,
            });
        }
        let space = Arc::new(space);
        history.push(space.clone());
        Ok(space)
    }

    pub fn get(&self, id: &str, version: u64) -> Result<Arc<SearchSpace>> {
        let spaces = self.spaces.read().expect("space store poisoned");
        version
            .checked_sub(1)
            .and_then(|i| spaces.get(id)?.get(i as usize).cloned())
            .ok_or_else(|| SpaceError::NotFound {
                id: id.to_string(),
                version,
            })
    }

    pub fn head(&self, id: &str) -> Option<Arc<SearchSpace>> {
        let spaces = self.spaces.read().expect("space store poisoned");
        spaces.get(id)?.last().cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let spaces = self.spaces.read().expect("space store poisoned");
        let mut ids: Vec<String> = spaces.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn history(&self, id: &str) -> Vec<Arc<SearchSpace>> {
        let spaces = self.spaces.read().expect("space store poisoned");
        spaces.get(id).cloned().unwrap_or_default()
    }

    /// Derives and records the next version from `version`, which must be
    /// the current head.
    pub fn edit(&self, id: &str, version: u64, edits: &[DiffEntry], note: &str) -> Result<Arc<SearchSpace>> {
        let base = self.get(id, version)?;
        self.insert(new_version(&base, edits, note)?)
    }

    pub fn diff(&self, id: &str, from: u64, to: u64) -> Result<SpaceDiff> {
        Ok(diff_spaces(&*self.get(id, from)?, &*self.get(id, to)?))
    }

    /// True when `version` is `ancestor` or reaches it through parent links.
    pub fn is_descendant(&self, id: &str, version: u64, ancestor: u64) -> bool {
        let mut cursor = Some(version);
        while let Some(v) = cursor {
            if v == ancestor {
                return true;
            }
            cursor = self.get(id, v).ok().and_then(|s| s.parent_version);
        }
        false
    }
}
