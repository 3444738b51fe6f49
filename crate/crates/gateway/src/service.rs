//! A node bound to its data directory: every state change is journaled to
//! disk before the call returns.

use std::path::Path;
use std::sync::Arc;

use ed25519_dalek::SigningKey;
use medalchain_core::identity::{Credential, Role, SystemClock};
use medalchain_core::node::{Node, NodeError};

use crate::auth;
use crate::config::{ConfigError, NodeConfig, CONFIG_FILE};
use crate::storage::{DirLock, EventLog, StorageError, LOG_FILE};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} is already initialized; refusing to overwrite")]
    AlreadyInitialized(String),
    #[error("{0} is not an initialized data directory (run `medalchain init`)")]
    NotInitialized(String),
    #[error(transparent)]
    Key(#[from] auth::KeyError),
    #[error("a previous journal write failed; restart the node")]
    Poisoned,
}

impl ServiceError {
    pub fn code(&self) -> String {
        match self {
            ServiceError::Node(e) => e.code(),
            ServiceError::Storage(StorageError::CorruptLog { .. }) => "CorruptLog".into(),
            ServiceError::Storage(StorageError::IncompatibleVersion { .. }) => "IncompatibleVersion".into(),
            ServiceError::Storage(StorageError::Locked(_)) => "Locked".into(),
            ServiceError::Storage(StorageError::Io(_)) => "StorageIo".into(),
            ServiceError::Config(_) => "InvalidConfig".into(),
            ServiceError::AlreadyInitialized(_) => "AlreadyInitialized".into(),
            ServiceError::NotInitialized(_) => "NotInitialized".into(),
            ServiceError::Key(_) => "InvalidKey".into(),
            ServiceError::Poisoned => "Poisoned".into(),
        }
    }
}

pub struct Service {
    node: Node,
    log: EventLog,
    config: NodeConfig,
    poisoned: bool,
    _lock: DirLock,
}

impl Service {
    /// Creates a data directory with a config file, an authority key and a
    /// journal holding the authority credential.
    pub fn init(config: NodeConfig) -> Result<(Self, SigningKey), ServiceError> {
        config.validate()?;
        let dir = config.data_dir.clone();
        if dir.join(CONFIG_FILE).exists() || dir.join(LOG_FILE).exists() {
            return Err(ServiceError::AlreadyInitialized(dir.display().to_string()));
        }
        std::fs::create_dir_all(&dir).map_err(StorageError::from)?;
        let lock = DirLock::acquire(&dir)?;
        let key_path = config.authority_key_path();
        if key_path.exists() {
            return Err(ServiceError::AlreadyInitialized(key_path.display().to_string()));
        }
        let key = auth::generate_key();
        auth::write_key_file(&key_path, &key).map_err(StorageError::from)?;
        std::fs::write(dir.join(CONFIG_FILE), config.render()).map_err(StorageError::from)?;
        let log = EventLog::create(&dir.join(LOG_FILE))?;
        let node = Node::new(config.params(), Arc::new(SystemClock))?;
        let mut service = Service { node, log, config, poisoned: false, _lock: lock };
        let credential = Credential {
            actor_id: service.config.authority_id.clone(),
            role: Role::Authority,
            public_key: auth::public_key(&key),
            issued_at: service.node.now(),
        };
        service.apply(|n| n.register_credential(credential))?;
        Ok((service, key))
    }

    /// Opens an initialized directory and replays its journal.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        if !dir.join(CONFIG_FILE).exists() || !dir.join(LOG_FILE).exists() {
            return Err(ServiceError::NotInitialized(dir.display().to_string()));
        }
        let config = NodeConfig::load(dir)?;
        let lock = DirLock::acquire(dir)?;
        let (log, records) = EventLog::open(&dir.join(LOG_FILE))?;
        let node = Node::restore(config.params(), Arc::new(SystemClock), records)?;
        Ok(Service { node, log, config, poisoned: false, _lock: lock })
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn journal_len(&self) -> usize {
        self.log.len()
    }

    /// Runs one node operation and journals what it recorded. A failed
    /// operation records nothing.
    pub fn apply<T>(&mut self, op: impl FnOnce(&mut Node) -> Result<T, NodeError>) -> Result<T, ServiceError> {
        if self.poisoned {
            return Err(ServiceError::Poisoned);
        }
        let result = op(&mut self.node);
        let records = self.node.take_journal();
        if let Err(e) = self.log.append(&records) {
            // Memory is now ahead of disk; refuse further writes until restart.
            self.poisoned = true;
            return Err(e.into());
        }
        Ok(result?)
    }
}
