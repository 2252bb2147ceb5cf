//! Persistent configuration: `heartbeat.json` plus one skill directory per
//! task.
//!
//! Every document is replaced through [`atomic_write`], so a reader (or a
//! process restarted after a crash) sees either the complete previous
//! document or the complete new one. Every mutation is a read-modify-write
//! of the whole config under a single re-entrant lock.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use parking_lot::ReentrantMutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{self, ActiveHours, LoopTask, RegistryError, SuffixSource, Trigger};
use crate::Timestamp;

pub const CONFIG_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "heartbeat.json";
pub const SKILLS_DIR: &str = "skills";
pub const SKILL_FILE: &str = "skill.json";

/// Points inside [`atomic_write_with`] where an injected fault can abort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteStage {
    CreateTemp,
    /// Half of the content has been written to the temp file.
    WriteTail,
    Sync,
    Rename,
    SyncDir,
}

impl WriteStage {
    pub const ALL: [WriteStage; 5] = [
        WriteStage::CreateTemp,
        WriteStage::WriteTail,
        WriteStage::Sync,
        WriteStage::Rename,
        WriteStage::SyncDir,
    ];
}

/// Replaces `path` with `content` via a temp file in the same directory,
/// `fsync`, and rename.
pub fn atomic_write(path: &Path, content: &[u8]) -> io::Result<()> {
    atomic_write_with(path, content, |_| Ok(()))
}

/// [`atomic_write`] with a hook run before each stage. An error from the
/// hook aborts the write at that point, as a crash would.
pub fn atomic_write_with(
    path: &Path,
    content: &[u8],
    mut before: impl FnMut(WriteStage) -> io::Result<()>,
) -> io::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;

    before(WriteStage::CreateTemp)?;
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{}.", name.to_string_lossy()))
        .suffix(".tmp")
        .tempfile_in(parent)?;

    let (head, tail) = content.split_at(content.len() / 2);
    tmp.write_all(head)?;
    before(WriteStage::WriteTail)?;
    tmp.write_all(tail)?;
    tmp.flush()?;

    before(WriteStage::Sync)?;
    tmp.as_file().sync_all()?;

    before(WriteStage::Rename)?;
    tmp.persist(path).map_err(|e| e.error)?;

    before(WriteStage::SyncDir)?;
    sync_dir(parent);
    Ok(())
}

fn sync_dir(dir: &Path) {
    #[cfg(unix)]
    if let Err(e) = File::open(dir).and_then(|d| d.sync_all()) {
        log::debug!("directory fsync failed for {}: {e}", dir.display());
    }
    #[cfg(not(unix))]
    let _ = dir;
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("task `{0}` not found")]
    NotFound(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, StoreError::NotFound(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatConfig {
    pub version: u32,
    pub tasks: BTreeMap<String, LoopTask>,
}

impl Default for HeartbeatConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            tasks: BTreeMap::new(),
        }
    }
}

impl HeartbeatConfig {
    pub fn check(&self) -> Result<(), String> {
        for (key, task) in &self.tasks {
            if key != &task.id {
                return Err(format!("key `{key}` holds task `{}`", task.id));
            }
            task.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// Pretty JSON with a trailing newline. Key order is fixed by field
    /// declaration order and the sorted task map.
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("config serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let config: HeartbeatConfig = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        config.check()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorePaths {
    pub config_path: PathBuf,
    pub skills_dir: PathBuf,
}

impl StorePaths {
    /// `<root>/heartbeat.json` and `<root>/skills/`.
    pub fn under(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        Self {
            config_path: root.join(CONFIG_FILE),
            skills_dir: root.join(SKILLS_DIR),
        }
    }
}

/// Hooks into the store's critical section, for instrumentation.
pub trait StoreObserver: Send + Sync {
    fn enter(&self) {}
    /// A new config document has replaced the file on disk.
    fn committed(&self, _document: &[u8]) {}
    fn exit(&self) {}
}

struct Section<'a>(Option<&'a dyn StoreObserver>);

impl<'a> Section<'a> {
    fn enter(observer: Option<&'a dyn StoreObserver>) -> Self {
        if let Some(o) = observer {
            o.enter();
        }
        Section(observer)
    }
}

impl Drop for Section<'_> {
    fn drop(&mut self) {
        if let Some(o) = self.0 {
            o.exit();
        }
    }
}

pub struct Store {
    paths: StorePaths,
    lock: ReentrantMutex<()>,
    observer: Option<Arc<dyn StoreObserver>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("paths", &self.paths).finish()
    }
}

impl Store {
    /// Opens a store, creating the skills directory and the config's parent
    /// directory if needed. The config file itself is created on first write.
    pub fn open(paths: StorePaths) -> Result<Self, StoreError> {
        if paths.config_path == paths.skills_dir {
            return Err(StoreError::Corrupt {
                path: paths.config_path,
                reason: "config path and skills directory must differ".into(),
            });
        }
        if let Some(parent) = paths.config_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        }
        std::fs::create_dir_all(&paths.skills_dir)
            .map_err(|e| StoreError::io(&paths.skills_dir, e))?;
        Ok(Self {
            paths,
            lock: ReentrantMutex::new(()),
            observer: None,
        })
    }

    pub fn with_observer(mut self, observer: Arc<dyn StoreObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn paths(&self) -> &StorePaths {
        &self.paths
    }

    /// Runs `f` while holding the store lock.
    pub fn locked<R>(&self, f: impl FnOnce() -> R) -> R {
        let _guard = self.lock.lock();
        f()
    }

    pub fn skill_dir(&self, task_id: &str) -> PathBuf {
        self.paths.skills_dir.join(task_id)
    }

    /// Reads the config. A missing file is an empty config; an unreadable
    /// or invalid one is an error, never a silent reset.
    pub fn load_config(&self) -> Result<HeartbeatConfig, StoreError> {
        let _guard = self.lock.lock();
        let path = &self.paths.config_path;
        match std::fs::read(path) {
            Ok(bytes) => HeartbeatConfig::from_json(&bytes).map_err(|reason| StoreError::Corrupt {
                path: path.clone(),
                reason,
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(HeartbeatConfig::default()),
            Err(e) => Err(StoreError::io(path, e)),
        }
    }

    pub fn save_config(&self, config: &HeartbeatConfig) -> Result<(), StoreError> {
        let _guard = self.lock.lock();
        let _section = Section::enter(self.observer.as_deref());
        self.write_config(config)
    }

    fn write_config(&self, config: &HeartbeatConfig) -> Result<(), StoreError> {
        config.check().map_err(|reason| StoreError::Corrupt {
            path: self.paths.config_path.clone(),
            reason,
        })?;
        let doc = config.to_json();
        atomic_write(&self.paths.config_path, &doc)
            .map_err(|e| StoreError::io(&self.paths.config_path, e))?;
        if let Some(o) = &self.observer {
            o.committed(&doc);
        }
        Ok(())
    }

    /// Overwrites the config with an empty one. Skill directories are kept.
    pub fn reset_config(&self) -> Result<(), StoreError> {
        self.save_config(&HeartbeatConfig::default())
    }

    fn mutate<R>(
        &self,
        f: impl FnOnce(&mut HeartbeatConfig) -> Result<R, StoreError>,
    ) -> Result<R, StoreError> {
        let _guard = self.lock.lock();
        let _section = Section::enter(self.observer.as_deref());
        let mut config = self.load_config()?;
        let out = f(&mut config)?;
        self.write_config(&config)?;
        Ok(out)
    }

    pub fn get_task(&self, id: &str) -> Result<LoopTask, StoreError> {
        self.load_config()?
            .tasks
            .remove(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    pub fn upsert_task(&self, task: LoopTask) -> Result<(), StoreError> {
        task.validate()?;
        self.mutate(|config| {
            config.tasks.insert(task.id.clone(), task);
            Ok(())
        })
    }

    /// Creates and persists a new task whose id does not collide with any
    /// stored task.
    pub fn add_task(
        &self,
        description: &str,
        trigger: Trigger,
        active_hours: Option<ActiveHours>,
        suffixes: &mut dyn SuffixSource,
    ) -> Result<LoopTask, StoreError> {
        self.mutate(|config| {
            let task = registry::create_task_avoiding(
                description,
                trigger,
                active_hours,
                suffixes,
                |id| config.tasks.contains_key(id),
            )?;
            config.tasks.insert(task.id.clone(), task.clone());
            Ok(task)
        })
    }

    /// Deletes the task and its skill directory. Returns whether the task
    /// existed.
    pub fn remove_task(&self, id: &str) -> Result<bool, StoreError> {
        let _guard = self.lock.lock();
        let removed = self.mutate(|config| Ok(config.tasks.remove(id).is_some()))?;
        let dir = self.skill_dir(id);
        if id_is_path_safe(id) {
            match std::fs::remove_dir_all(&dir) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(StoreError::io(&dir, e)),
            }
        }
        Ok(removed)
    }

    /// Applies `f` to a stored task and persists the result.
    pub fn update_task<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut LoopTask) -> R,
    ) -> Result<R, StoreError> {
        self.mutate(|config| {
            let task = config
                .tasks
                .get_mut(id)
                .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
            let out = f(task);
            task.validate()?;
            Ok(out)
        })
    }

    /// Records a completed run. Schedule tasks also record the fire date.
    pub fn mark_run(&self, id: &str, at: Timestamp) -> Result<(), StoreError> {
        self.update_task(id, |task| {
            task.last_run = Some(at);
            if task.trigger.is_schedule() {
                task.last_schedule_fire_date = Some(at.date());
            }
        })
    }

    /// Records a schedule fire without a completed run.
    pub fn mark_schedule_fired(&self, id: &str, date: NaiveDate) -> Result<(), StoreError> {
        self.update_task(id, |task| {
            if task.trigger.is_schedule() {
                task.last_schedule_fire_date = Some(date);
            }
        })
    }

    /// Setting the flag detaches any skill, so the task records afresh.
    pub fn set_pending(&self, id: &str, pending: bool) -> Result<(), StoreError> {
        self.update_task(id, |task| {
            task.first_exec_pending = pending;
            if pending {
                task.skill_ref = None;
            }
        })
    }

    /// Attaches a compiled skill and clears the pending flag.
    pub fn attach_skill(&self, id: &str, skill_ref: &str) -> Result<(), StoreError> {
        self.update_task(id, |task| {
            task.skill_ref = Some(skill_ref.to_string());
            task.first_exec_pending = false;
        })
    }

    pub fn set_enabled(&self, id: &str, enabled: bool) -> Result<(), StoreError> {
        self.update_task(id, |task| task.enabled = enabled)
    }
}

/// Task ids are path components under the skills directory.
pub(crate) fn id_is_path_safe(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\'])
}
