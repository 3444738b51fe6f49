//! Badge definitions and soulbound badge tokens.
//!
//! A definition is the badge "class" under the central metadata standard; a
//! token is one award of one grade of a definition to one holder. Tokens are
//! never transferred. Their status moves along
//!
//! ```text
//! PlatformIssued --certify--> Certified --freeze--> Frozen --restore--> Certified
//!        |  \--freeze--> Frozen                        |
//!        \--revoke--> Revoked <--revoke-- (any live) --/
//! ```
//!
//! and `Revoked` is terminal. The registry index is a pure projection of
//! ledger events; it is rebuilt by replaying the chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_hash;
use crate::hash::Hash32;
use crate::identity::Address;
use crate::ledger::{EventKind, LedgerEvent, Timestamp, TracedEvent};

pub const MAX_NAME_CHARS: usize = 128;
pub const MAX_DESCRIPTION_CHARS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("metadata violates the badge schema: {0}")]
    SchemaViolation(String),
    #[error("issuer {0} is not a registered platform")]
    UnknownIssuer(String),
    #[error("holder already has a live award of this definition and grade")]
    DuplicateAward,
    #[error("definition {0} not found")]
    UnknownDefinition(Hash32),
    #[error("grade {0:?} is not defined for this badge")]
    BadGrade(String),
    #[error("issuer does not own the definition")]
    IssuerMismatch,
    #[error("token {0} not found")]
    UnknownToken(Hash32),
    #[error("caller is not allowed to perform this action")]
    Unauthorized,
    #[error("transition {action:?} is illegal from status {from:?}")]
    IllegalTransition { from: TokenStatus, action: TokenAction },
    #[error("definition has no approved certification")]
    NotApproved,
}

/// Author-supplied part of a definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefinitionMetadata {
    pub name: String,
    /// Content hash of the off-ledger icon image.
    pub icon: Hash32,
    pub description: String,
    pub criteria: String,
    pub grade_levels: Vec<String>,
}

impl DefinitionMetadata {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let fail = |msg: &str| Err(RegistryError::SchemaViolation(msg.to_string()));
        if self.name.trim().is_empty() || self.name.chars().count() > MAX_NAME_CHARS {
            return fail("name must be 1..=128 characters");
        }
        if self.description.chars().count() > MAX_DESCRIPTION_CHARS {
            return fail("description exceeds 2048 characters");
        }
        if self.criteria.trim().is_empty() {
            return fail("award criteria must not be empty");
        }
        if self.grade_levels.is_empty() {
            return fail("at least one grade level is required");
        }
        if self.grade_levels.iter().any(|g| g.trim().is_empty()) {
            return fail("grade level names must not be empty");
        }
        let distinct: BTreeSet<&String> = self.grade_levels.iter().collect();
        if distinct.len() != self.grade_levels.len() {
            return fail("grade levels must be distinct");
        }
        Ok(())
    }

    /// Content-derived identifier: hash of the metadata plus the issuer.
    pub fn definition_id(&self, issuer: &str) -> Hash32 {
        #[derive(Serialize)]
        struct IdContent<'a> {
            name: &'a str,
            icon: Hash32,
            description: &'a str,
            criteria: &'a str,
            grade_levels: &'a [String],
            issuer: &'a str,
        }
        canonical_hash(&IdContent {
            name: &self.name,
            icon: self.icon,
            description: &self.description,
            criteria: &self.criteria,
            grade_levels: &self.grade_levels,
            issuer,
        })
        .expect("metadata is canonical")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadgeDefinition {
    pub definition_id: Hash32,
    #[serde(flatten)]
    pub metadata: DefinitionMetadata,
    pub issuer: String,
    pub created_at: Timestamp,
}

impl BadgeDefinition {
    pub fn has_grade(&self, grade: &str) -> bool {
        self.metadata.grade_levels.iter().any(|g| g == grade)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenStatus {
    PlatformIssued,
    Certified,
    Frozen,
    Revoked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenAction {
    Certify,
    Freeze,
    Restore,
    Revoke,
}

impl TokenStatus {
    pub const ALL: [TokenStatus; 4] =
        [TokenStatus::PlatformIssued, TokenStatus::Certified, TokenStatus::Frozen, TokenStatus::Revoked];

    /// The status-machine table. `None` marks an illegal transition.
    pub fn after(self, action: TokenAction) -> Option<TokenStatus> {
        use TokenAction::*;
        use TokenStatus::*;
        match (self, action) {
            (PlatformIssued, Certify) => Some(Certified),
            (PlatformIssued | Certified, Freeze) => Some(Frozen),
            (Frozen, Restore) => Some(Certified),
            (PlatformIssued | Certified | Frozen, Revoke) => Some(Revoked),
            _ => None,
        }
    }

    pub fn is_live(self) -> bool {
        self != TokenStatus::Revoked
    }
}

impl TokenAction {
    pub const ALL: [TokenAction; 4] = [TokenAction::Certify, TokenAction::Freeze, TokenAction::Restore, TokenAction::Revoke];
}

impl fmt::Display for TokenStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadgeToken {
    pub token_id: Hash32,
    pub definition_id: Hash32,
    pub holder: Address,
    pub grade: String,
    pub issuer: String,
    pub status: TokenStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub official_description: Option<String>,
    pub minted_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified_at: Option<Timestamp>,
    /// Number of status changes since mint.
    pub revision: u64,
}

/// SHA-256(definition_id || holder || minted_at as 8 big-endian bytes || issuer).
pub fn token_id(definition_id: &Hash32, holder: &Address, minted_at: Timestamp, issuer: &str) -> Hash32 {
    Hash32::digest_parts(&[definition_id.as_bytes(), holder.as_bytes(), &minted_at.to_be_bytes(), issuer.as_bytes()])
}

// ---- ledger event bodies ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenMintedBody {
    pub token_id: Hash32,
    pub definition_id: Hash32,
    pub holder: Address,
    pub grade: String,
    pub issuer: String,
    pub minted_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenCertifiedBody {
    pub token_id: Hash32,
    pub definition_id: Hash32,
    pub official_description: String,
    pub certified_at: Timestamp,
    /// The approved application backing the certification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application_id: Option<Hash32>,
    /// Token revision after this change; keeps repeated transitions distinct.
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenStatusBody {
    pub token_id: Hash32,
    pub definition_id: Hash32,
    /// Token revision after this change.
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLinkedBody {
    pub token_id: Hash32,
    pub definition_id: Hash32,
    pub holder: Address,
    pub platform: String,
    pub application_id: Hash32,
    /// Event id of the approving ApplicationDecision.
    pub decision_event: Hash32,
}

/// Approval facts the registry needs from certification decisions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub application_id: Hash32,
    pub decision_event: Hash32,
    pub height: u64,
}

/// Everything a third party needs to check a token against the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub token_id: Hash32,
    pub exists: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<BadgeToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<TokenStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<Address>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer: Option<String>,
    pub certified: bool,
    pub inclusion_proofs: Vec<TracedEvent>,
    pub proofs_valid: bool,
}

/// Live award key: one non-revoked token per (definition, holder, grade).
type AwardKey = (Hash32, Address, String);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Registry {
    definitions: BTreeMap<Hash32, BadgeDefinition>,
    tokens: BTreeMap<Hash32, BadgeToken>,
    mint_heights: BTreeMap<Hash32, u64>,
    #[serde(skip)]
    live_awards: BTreeMap<AwardKey, Hash32>,
    approvals: BTreeMap<Hash32, Approval>,
    links: BTreeMap<Hash32, Hash32>,
}

impl Registry {
    pub fn definition(&self, id: &Hash32) -> Option<&BadgeDefinition> {
        self.definitions.get(id)
    }

    pub fn definitions(&self) -> impl Iterator<Item = &BadgeDefinition> {
        self.definitions.values()
    }

    pub fn token(&self, id: &Hash32) -> Option<&BadgeToken> {
        self.tokens.get(id)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &BadgeToken> {
        self.tokens.values()
    }

    pub fn tokens_of_holder<'a>(&'a self, holder: &'a Address) -> impl Iterator<Item = &'a BadgeToken> + 'a {
        self.tokens.values().filter(move |t| &t.holder == holder)
    }

    pub fn tokens_of_definition<'a>(&'a self, definition: &'a Hash32) -> impl Iterator<Item = &'a BadgeToken> + 'a {
        self.tokens.values().filter(move |t| &t.definition_id == definition)
    }

    pub fn mint_height(&self, token: &Hash32) -> Option<u64> {
        self.mint_heights.get(token).copied()
    }

    pub fn approval(&self, definition: &Hash32) -> Option<&Approval> {
        self.approvals.get(definition)
    }

    pub fn linked_application(&self, token: &Hash32) -> Option<Hash32> {
        self.links.get(token).copied()
    }

    pub fn live_award(&self, definition: &Hash32, holder: &Address, grade: &str) -> Option<Hash32> {
        self.live_awards.get(&(*definition, *holder, grade.to_string())).copied()
    }

    /// Checks a mint request and returns the token it would create.
    pub fn prepare_mint(
        &self,
        issuer: &str,
        definition_id: &Hash32,
        holder: &Address,
        grade: &str,
        now: Timestamp,
    ) -> Result<BadgeToken, RegistryError> {
        let def = self.definitions.get(definition_id).ok_or(RegistryError::UnknownDefinition(*definition_id))?;
        if def.issuer != issuer {
            return Err(RegistryError::IssuerMismatch);
        }
        if !def.has_grade(grade) {
            return Err(RegistryError::BadGrade(grade.to_string()));
        }
        if self.live_award(definition_id, holder, grade).is_some() {
            return Err(RegistryError::DuplicateAward);
        }
        // A re-award in the same second as an earlier (revoked) award would
        // collide on id; step the mint time forward to keep ids unique.
        let mut minted_at = now;
        while self.tokens.contains_key(&token_id(definition_id, holder, minted_at, issuer)) {
            minted_at += 1;
        }
        Ok(BadgeToken {
            token_id: token_id(definition_id, holder, minted_at, issuer),
            definition_id: *definition_id,
            holder: *holder,
            grade: grade.to_string(),
            issuer: issuer.to_string(),
            status: TokenStatus::PlatformIssued,
            official_description: None,
            minted_at,
            certified_at: None,
            revision: 0,
        })
    }

    /// Checks a status transition and returns the resulting status.
    pub fn check_transition(&self, token_id: &Hash32, action: TokenAction) -> Result<TokenStatus, RegistryError> {
        let token = self.tokens.get(token_id).ok_or(RegistryError::UnknownToken(*token_id))?;
        let next = token
            .status
            .after(action)
            .ok_or(RegistryError::IllegalTransition { from: token.status, action })?;
        if action == TokenAction::Restore && !self.approvals.contains_key(&token.definition_id) {
            return Err(RegistryError::NotApproved);
        }
        Ok(next)
    }

    /// Projects one committed ledger event into the index.
    pub fn apply(&mut self, event: &LedgerEvent, height: u64) {
        match event.kind() {
            EventKind::DefinitionRegistered => {
                if let Ok(def) = event.body::<BadgeDefinition>() {
                    self.definitions.insert(def.definition_id, def);
                }
            }
            EventKind::TokenMinted => {
                if let Ok(b) = event.body::<TokenMintedBody>() {
                    let token = BadgeToken {
                        token_id: b.token_id,
                        definition_id: b.definition_id,
                        holder: b.holder,
                        grade: b.grade.clone(),
                        issuer: b.issuer,
                        status: TokenStatus::PlatformIssued,
                        official_description: None,
                        minted_at: b.minted_at,
                        certified_at: None,
                        revision: 0,
                    };
                    self.live_awards.insert((b.definition_id, b.holder, b.grade), b.token_id);
                    self.mint_heights.insert(b.token_id, height);
                    self.tokens.insert(b.token_id, token);
                }
            }
            EventKind::TokenCertified => {
                if let Ok(b) = event.body::<TokenCertifiedBody>() {
                    if let Some(t) = self.tokens.get_mut(&b.token_id) {
                        t.status = TokenStatus::Certified;
                        t.official_description = Some(b.official_description);
                        t.certified_at = Some(b.certified_at);
                        t.revision = b.revision;
                    }
                }
            }
            EventKind::TokenFrozen => {
                if let Ok(b) = event.body::<TokenStatusBody>() {
                    if let Some(t) = self.tokens.get_mut(&b.token_id) {
                        t.status = TokenStatus::Frozen;
                        t.revision = b.revision;
                    }
                }
            }
            EventKind::TokenRevoked => {
                if let Ok(b) = event.body::<TokenStatusBody>() {
                    if let Some(t) = self.tokens.get_mut(&b.token_id) {
                        t.status = TokenStatus::Revoked;
                        t.revision = b.revision;
                        let key = (t.definition_id, t.holder, t.grade.clone());
                        if self.live_awards.get(&key) == Some(&t.token_id) {
                            self.live_awards.remove(&key);
                        }
                    }
                }
            }
            EventKind::RecordLinked => {
                if let Ok(b) = event.body::<RecordLinkedBody>() {
                    self.links.insert(b.token_id, b.application_id);
                }
            }
            _ => {}
        }
    }

    /// Records an approving certification decision for a definition.
    pub fn record_approval(&mut self, definition: Hash32, approval: Approval) {
        self.approvals.insert(definition, approval);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metadata() -> DefinitionMetadata {
        DefinitionMetadata {
            name: "Data Structures".into(),
            icon: Hash32::digest(b"icon.png"),
            description: "Completed the data structures course".into(),
            criteria: "pass 3 exams".into(),
            grade_levels: vec!["bronze".into(), "silver".into(), "gold".into()],
        }
    }

    #[test]
    fn schema_bounds() {
        assert!(metadata().validate().is_ok());
        let mut m = metadata();
        m.grade_levels.clear();
        assert!(matches!(m.validate(), Err(RegistryError::SchemaViolation(_))));
        let mut m = metadata();
        m.grade_levels.push("gold".into());
        assert!(matches!(m.validate(), Err(RegistryError::SchemaViolation(_))));
        let mut m = metadata();
        m.name = "n".repeat(129);
        assert!(matches!(m.validate(), Err(RegistryError::SchemaViolation(_))));
        m.name = "é".repeat(128);
        assert!(m.validate().is_ok());
        let mut m = metadata();
        m.description = "d".repeat(2049);
        assert!(matches!(m.validate(), Err(RegistryError::SchemaViolation(_))));
    }

    #[test]
    fn definition_id_is_content_derived() {
        let a = metadata();
        assert_eq!(a.definition_id("edu"), metadata().definition_id("edu"));
        let mut b = metadata();
        b.description.push('.');
        assert_ne!(a.definition_id("edu"), b.definition_id("edu"));
        assert_ne!(a.definition_id("edu"), a.definition_id("game"));
    }

    #[test]
    fn token_id_formula() {
        let def = Hash32::digest(b"def");
        let holder = Hash32::digest(b"alice");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(def.as_bytes());
        bytes.extend_from_slice(holder.as_bytes());
        bytes.extend_from_slice(&1_700_000_000u64.to_be_bytes());
        bytes.extend_from_slice(b"edu");
        assert_eq!(token_id(&def, &holder, 1_700_000_000, "edu"), Hash32::digest(&bytes));
    }

    #[test]
    fn status_table() {
        use TokenAction::*;
        use TokenStatus::*;
        let legal: Vec<(TokenStatus, TokenAction, TokenStatus)> = TokenStatus::ALL
            .iter()
            .flat_map(|&s| TokenAction::ALL.iter().filter_map(move |&a| s.after(a).map(|n| (s, a, n))))
            .collect();
        assert_eq!(
            legal,
            vec![
                (PlatformIssued, Certify, Certified),
                (PlatformIssued, Freeze, Frozen),
                (PlatformIssued, Revoke, Revoked),
                (Certified, Freeze, Frozen),
                (Certified, Revoke, Revoked),
                (Frozen, Restore, Certified),
                (Frozen, Revoke, Revoked),
            ]
        );
    }
}
