//! Execution-level rule contracts.
//!
//! A contract is a conjunction of counted-action conditions over a user's
//! off-ledger activity feed. When every condition holds the contract mints a
//! platform-level badge without manual review. Changing a contract's
//! conditions requires a closed, passing governance vote bound to the exact
//! change.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_hash, Value};
use crate::hash::Hash32;
use crate::identity::Address;
use crate::ledger::{EventKind, LedgerEvent, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("contract is inactive")]
    InactiveContract,
    #[error("user does not meet the contract conditions")]
    NotEligible,
    #[error("governance vote did not pass")]
    VoteNotPassing,
    #[error("vote subject does not match the proposed rule change")]
    VoteSubjectMismatch,
    #[error("contract is at version {current}, change was proposed against {proposed}")]
    StaleVersion { current: u32, proposed: u32 },
    #[error("contract {0} not found")]
    UnknownContract(Hash32),
    #[error("invalid conditions: {0}")]
    InvalidConditions(String),
    #[error("activity for this user must not go back in time")]
    OutOfOrderActivity,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub action: String,
    pub min_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_seconds: Option<u64>,
}

impl Condition {
    pub fn new(action: impl Into<String>, min_count: u32) -> Self {
        Condition { action: action.into(), min_count, window_seconds: None }
    }

    pub fn within(mut self, window_seconds: u64) -> Self {
        self.window_seconds = Some(window_seconds);
        self
    }

    /// Number of matching events, restricted to `[now - window, now]` when a window is set.
    pub fn count(&self, log: &[ActivityEvent], now: Timestamp) -> usize {
        log.iter()
            .filter(|e| e.action == self.action)
            .filter(|e| match self.window_seconds {
                Some(w) => e.occurred_at <= now && e.occurred_at >= now.saturating_sub(w),
                None => true,
            })
            .count()
    }

    pub fn holds(&self, log: &[ActivityEvent], now: Timestamp) -> bool {
        self.count(log, now) >= self.min_count as usize
    }
}

pub fn validate_conditions(conditions: &[Condition]) -> Result<(), ContractError> {
    if conditions.is_empty() {
        return Err(ContractError::InvalidConditions("at least one condition is required".into()));
    }
    for c in conditions {
        if c.action.trim().is_empty() {
            return Err(ContractError::InvalidConditions("condition action must not be empty".into()));
        }
        if c.min_count == 0 {
            return Err(ContractError::InvalidConditions("min_count must be at least 1".into()));
        }
        if c.window_seconds == Some(0) {
            return Err(ContractError::InvalidConditions("window must be positive".into()));
        }
    }
    Ok(())
}

/// One off-ledger user action reported by a platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityEvent {
    pub user: Address,
    pub action: String,
    pub platform: String,
    pub occurred_at: Timestamp,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleContract {
    pub contract_id: Hash32,
    pub definition_id: Hash32,
    pub grade: String,
    pub conditions: Vec<Condition>,
    pub version: u32,
    pub active: bool,
    /// Platform that owns the badge definition.
    pub owner: String,
    pub created_at: Timestamp,
}

impl RuleContract {
    pub fn new(
        definition_id: Hash32,
        grade: impl Into<String>,
        conditions: Vec<Condition>,
        owner: impl Into<String>,
        created_at: Timestamp,
    ) -> Result<Self, ContractError> {
        validate_conditions(&conditions)?;
        let grade = grade.into();
        let owner = owner.into();
        #[derive(Serialize)]
        struct IdContent<'a> {
            definition_id: Hash32,
            grade: &'a str,
            conditions: &'a [Condition],
            owner: &'a str,
            created_at: Timestamp,
        }
        let contract_id = canonical_hash(&IdContent { definition_id, grade: &grade, conditions: &conditions, owner: &owner, created_at })
            .expect("contract content is canonical");
        Ok(RuleContract { contract_id, definition_id, grade, conditions, version: 1, active: true, owner, created_at })
    }
}

/// True iff every condition holds over `log` at time `now`.
pub fn evaluate(contract: &RuleContract, log: &[ActivityEvent], now: Timestamp) -> Result<bool, ContractError> {
    if !contract.active {
        return Err(ContractError::InactiveContract);
    }
    Ok(contract.conditions.iter().all(|c| c.holds(log, now)))
}

/// A proposed replacement of a contract's conditions; the governance vote is
/// bound to it through `subject_hash`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleChange {
    pub contract_id: Hash32,
    pub base_version: u32,
    pub conditions: Vec<Condition>,
}

impl RuleChange {
    pub fn subject_hash(&self) -> Hash32 {
        canonical_hash(self).expect("rule change is canonical")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleUpdatedBody {
    pub contract_id: Hash32,
    pub old_version: u32,
    pub new_version: u32,
    pub conditions: Vec<Condition>,
    pub round_id: Hash32,
    pub subject_hash: Hash32,
    pub tally_digest: Hash32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContractBook {
    contracts: BTreeMap<Hash32, RuleContract>,
}

impl ContractBook {
    pub fn get(&self, id: &Hash32) -> Option<&RuleContract> {
        self.contracts.get(id)
    }

    pub fn all(&self) -> impl Iterator<Item = &RuleContract> {
        self.contracts.values()
    }

    pub fn require(&self, id: &Hash32) -> Result<&RuleContract, ContractError> {
        self.contracts.get(id).ok_or(ContractError::UnknownContract(*id))
    }

    pub fn upsert(&mut self, contract: RuleContract) {
        self.contracts.insert(contract.contract_id, contract);
    }

    pub fn apply(&mut self, event: &LedgerEvent) {
        if event.kind() != EventKind::RuleUpdated {
            return;
        }
        if let Ok(body) = event.body::<RuleUpdatedBody>() {
            if let Some(c) = self.contracts.get_mut(&body.contract_id) {
                c.conditions = body.conditions;
                c.version = body.new_version;
            }
        }
    }
}

/// Off-ledger activity feeds, one per user, in ingestion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ActivityLog {
    feeds: BTreeMap<Address, Vec<ActivityEvent>>,
}

impl ActivityLog {
    pub fn check(&self, event: &ActivityEvent) -> Result<(), ContractError> {
        match self.feeds.get(&event.user).and_then(|f| f.last()) {
            Some(last) if last.occurred_at > event.occurred_at => Err(ContractError::OutOfOrderActivity),
            _ => Ok(()),
        }
    }

    pub fn push(&mut self, event: ActivityEvent) {
        self.feeds.entry(event.user).or_default().push(event);
    }

    pub fn feed(&self, user: &Address) -> &[ActivityEvent] {
        self.feeds.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    /// A user's events reported by one platform.
    pub fn feed_from(&self, user: &Address, platform: &str) -> Vec<ActivityEvent> {
        self.feed(user).iter().filter(|e| e.platform == platform).cloned().collect()
    }
}
