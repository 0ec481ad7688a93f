use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::{Error, Result};

use super::{load_stack, FeatureStack};

/// Resolves image ids to feature stacks.
pub trait StackSource: Send + Sync {
    fn stack(&self, image_id: &str) -> Result<Arc<FeatureStack>>;

    fn contains(&self, image_id: &str) -> bool;
}

/// Reads `<dir>/<image_id>.hfm` on first use and keeps it in memory.
#[derive(Debug)]
pub struct DirStackSource {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Arc<FeatureStack>>>,
}

impl DirStackSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        self.dir.join(format!("{image_id}.hfm"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl StackSource for DirStackSource {
    fn stack(&self, image_id: &str) -> Result<Arc<FeatureStack>> {
        if let Some(s) = self.cache.lock().unwrap().get(image_id) {
            return Ok(Arc::clone(s));
        }
        let path = self.path_for(image_id);
        if !path.is_file() {
            return Err(Error::MissingStack {
                image_id: image_id.to_owned(),
            });
        }
        let stack = Arc::new(load_stack(&path)?);
        // Two threads may race to load the same file; either copy is identical.
        self.cache
            .lock()
            .unwrap()
            .entry(image_id.to_owned())
            .or_insert_with(|| Arc::clone(&stack));
        Ok(stack)
    }

    fn contains(&self, image_id: &str) -> bool {
        self.cache.lock().unwrap().contains_key(image_id) || self.path_for(image_id).is_file()
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStackSource {
    stacks: HashMap<String, Arc<FeatureStack>>,
}

impl MemoryStackSource {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `stack` under its own image id.
    pub fn insert(&mut self, stack: FeatureStack) {
        self.stacks
            .insert(stack.image_id().to_owned(), Arc::new(stack));
    }

    pub fn insert_as(&mut self, image_id: impl Into<String>, stack: FeatureStack) {
        self.stacks.insert(image_id.into(), Arc::new(stack));
    }
}

impl FromIterator<FeatureStack> for MemoryStackSource {
    fn from_iter<I: IntoIterator<Item = FeatureStack>>(iter: I) -> Self {
        let mut s = Self::new();
        for stack in iter {
            s.insert(stack);
        }
        s
    }
}

impl StackSource for MemoryStackSource {
    fn stack(&self, image_id: &str) -> Result<Arc<FeatureStack>> {
        self.stacks
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::MissingStack {
                image_id: image_id.to_owned(),
            })
    }

    fn contains(&self, image_id: &str) -> bool {
        self.stacks.contains_key(image_id)
    }
}
