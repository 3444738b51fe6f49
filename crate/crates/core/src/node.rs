//! The badge node: one ledger plus the indexes projected from it.
//!
//! Every mutation validates against current state, seals its ledger events
//! into a single block, projects that block into the indexes, and journals
//! what it did. Replaying the journal through [`Node::restore`] rebuilds the
//! same state.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_hash, CanonicalError};
use crate::certification::{
    ApplicationAction, ApplicationDecisionBody, ApplicationPayload, ApplicationState, CertificationApplication,
    CertificationError, LinkageReport, ReviewChecks, ReviewRecord, Verdict,
};
use crate::contracts::{
    evaluate, validate_conditions, ActivityEvent, ActivityLog, Condition, ContractBook, ContractError, RuleChange,
    RuleContract, RuleUpdatedBody,
};
use crate::hash::Hash32;
use crate::identity::{Address, Clock, Credential, Role};
use crate::ledger::{mine_block, trace, Block, Chain, ChainError, EventKind, LedgerEvent, MineError, Timestamp, MAX_DIFFICULTY};
use crate::registry::{
    Approval, BadgeDefinition, BadgeToken, DefinitionMetadata, RecordLinkedBody, Registry, RegistryError,
    TokenAction, TokenCertifiedBody, TokenMintedBody, TokenStatus, TokenStatusBody, VerificationReport,
};
use crate::rsa_blind::{RsaKeyPair, MIN_TEST_BITS};
use crate::vote::{
    BallotToken, RoundSpec, TallyResult, Threshold, VoteBook, VoteCastBody, VoteError, VotingRound,
    DEFAULT_QUORUM, DEFAULT_THRESHOLD,
};

/// Author recorded on cast votes, which carry no voter identity.
pub const ANONYMOUS: &str = "anonymous";

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Certification(#[from] CertificationError),
    #[error(transparent)]
    Mine(#[from] MineError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("caller is not allowed to perform this action: {0}")]
    Unauthorized(String),
    #[error("actor {0:?} is not registered")]
    UnknownActor(String),
    #[error("actor {0:?} is already registered")]
    DuplicateActor(String),
    #[error("an authority credential already exists")]
    AuthorityExists,
    #[error("invalid node parameters: {0}")]
    InvalidParams(String),
    #[error("journal record {index} cannot be replayed: {reason}")]
    Replay { index: usize, reason: String },
}

impl NodeError {
    /// Machine-readable error name, e.g. `DuplicateAward` or `BrokenLink`.
    pub fn code(&self) -> String {
        fn variant(debug: String) -> String {
            debug.split(|c: char| !c.is_ascii_alphanumeric()).next().unwrap_or_default().to_string()
        }
        match self {
            NodeError::Registry(e) => variant(format!("{e:?}")),
            NodeError::Contract(e) => variant(format!("{e:?}")),
            NodeError::Vote(VoteError::Crypto(e)) => variant(format!("{e:?}")),
            NodeError::Vote(e) => variant(format!("{e:?}")),
            NodeError::Certification(e) => variant(format!("{e:?}")),
            NodeError::Mine(e) => variant(format!("{e:?}")),
            NodeError::Chain(e) => e.kind.to_string(),
            NodeError::Canonical(e) => variant(format!("{e:?}")),
            other => variant(format!("{other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeParams {
    /// Leading zero bits required of every sealed block.
    pub difficulty: u32,
    /// Smallest registrar modulus accepted when opening a round.
    pub min_registrar_bits: u64,
    pub quorum: u64,
    pub threshold: Threshold,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams { difficulty: 8, min_registrar_bits: MIN_TEST_BITS, quorum: DEFAULT_QUORUM, threshold: DEFAULT_THRESHOLD }
    }
}

impl NodeParams {
    pub fn validate(&self) -> Result<(), NodeError> {
        if self.difficulty > MAX_DIFFICULTY {
            return Err(NodeError::InvalidParams(format!("difficulty must be within [0, {MAX_DIFFICULTY}]")));
        }
        if self.quorum < 1 {
            return Err(NodeError::InvalidParams("quorum must be at least 1".into()));
        }
        if self.min_registrar_bits < MIN_TEST_BITS {
            return Err(NodeError::InvalidParams(format!("registrar keys must have at least {MIN_TEST_BITS} bits")));
        }
        Threshold::new(self.threshold.num, self.threshold.den).map_err(|e| NodeError::InvalidParams(e.to_string()))?;
        Ok(())
    }
}

/// One journaled state change. Ledger blocks carry everything on-chain;
/// the other records hold the off-ledger workflow state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum Record {
    Credential { credential: Credential },
    Block { block: Block },
    Contract { contract: RuleContract },
    Activity { activity: ActivityEvent },
    RegistrarKey { round_id: Hash32, key: RsaKeyPair },
    Issuance { round_id: Hash32, voter: Address },
    Application { application: CertificationApplication },
}

pub struct Node {
    params: NodeParams,
    clock: Arc<dyn Clock>,
    chain: Chain,
    credentials: BTreeMap<String, Credential>,
    registry: Registry,
    contracts: ContractBook,
    votes: VoteBook,
    activity: ActivityLog,
    applications: BTreeMap<Hash32, CertificationApplication>,
    journal: Vec<Record>,
}

/// Everything replay must reproduce, hashed by [`Node::state_digest`].
#[derive(Serialize)]
struct StateView<'a> {
    tip: Hash32,
    height: u64,
    credentials: &'a BTreeMap<String, Credential>,
    registry: &'a Registry,
    contracts: &'a ContractBook,
    votes: &'a VoteBook,
    registrar_keys: BTreeMap<Hash32, Hash32>,
    activity: &'a ActivityLog,
    applications: &'a BTreeMap<Hash32, CertificationApplication>,
}

impl Node {
    pub fn new(params: NodeParams, clock: Arc<dyn Clock>) -> Result<Self, NodeError> {
        params.validate()?;
        Ok(Node {
            params,
            clock,
            chain: Chain::new(),
            credentials: BTreeMap::new(),
            registry: Registry::default(),
            contracts: ContractBook::default(),
            votes: VoteBook::default(),
            activity: ActivityLog::default(),
            applications: BTreeMap::new(),
            journal: Vec::new(),
        })
    }

    /// Rebuilds a node by replaying journal records in order. Blocks are
    /// fully revalidated on the way in.
    pub fn restore(
        params: NodeParams,
        clock: Arc<dyn Clock>,
        records: impl IntoIterator<Item = Record>,
    ) -> Result<Self, NodeError> {
        let mut node = Node::new(params, clock)?;
        for (index, record) in records.into_iter().enumerate() {
            node.replay(record).map_err(|e| NodeError::Replay { index, reason: e.to_string() })?;
        }
        Ok(node)
    }

    fn replay(&mut self, record: Record) -> Result<(), NodeError> {
        match record {
            Record::Credential { credential } => {
                self.check_new_credential(&credential)?;
                self.credentials.insert(credential.actor_id.clone(), credential);
            }
            Record::Block { block } => {
                self.chain.append(block.clone())?;
                self.project(&block);
            }
            Record::Contract { contract } => self.contracts.upsert(contract),
            Record::Activity { activity } => {
                self.activity.check(&activity)?;
                self.activity.push(activity);
            }
            Record::RegistrarKey { round_id, key } => self.votes.install_key(round_id, key),
            Record::Issuance { round_id, voter } => self.votes.record_issuance(round_id, voter),
            Record::Application { application } => {
                self.applications.insert(application.application_id, application);
            }
        }
        Ok(())
    }

    /// Records produced since the last call, in order.
    pub fn take_journal(&mut self) -> Vec<Record> {
        std::mem::take(&mut self.journal)
    }

    pub fn params(&self) -> &NodeParams {
        &self.params
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn blocks(&self) -> &[Block] {
        self.chain.blocks()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn contracts(&self) -> &ContractBook {
        &self.contracts
    }

    pub fn votes(&self) -> &VoteBook {
        &self.votes
    }

    pub fn activity(&self) -> &ActivityLog {
        &self.activity
    }

    pub fn credential(&self, actor: &str) -> Option<&Credential> {
        self.credentials.get(actor)
    }

    pub fn credentials(&self) -> impl Iterator<Item = &Credential> {
        self.credentials.values()
    }

    pub fn application(&self, id: &Hash32) -> Option<&CertificationApplication> {
        self.applications.get(id)
    }

    pub fn applications(&self, state: Option<ApplicationState>) -> Vec<&CertificationApplication> {
        self.applications.values().filter(|a| state.is_none_or(|s| a.state == s)).collect()
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Canonical hash over the chain tip and every index.
    pub fn state_digest(&self) -> Hash32 {
        let registrar_keys = self
            .votes
            .rounds()
            .filter_map(|r| self.votes.registrar_key(&r.round_id).map(|k| (r.round_id, canonical_hash(k).expect("key is canonical"))))
            .collect();
        canonical_hash(&StateView {
            tip: self.chain.tip().hash(),
            height: self.chain.height(),
            credentials: &self.credentials,
            registry: &self.registry,
            contracts: &self.contracts,
            votes: &self.votes,
            registrar_keys,
            activity: &self.activity,
            applications: &self.applications,
        })
        .expect("node state is canonical")
    }

    // ---- credentials ------------------------------------------------------

    fn check_new_credential(&self, credential: &Credential) -> Result<(), NodeError> {
        if credential.actor_id.trim().is_empty() || credential.actor_id == ANONYMOUS {
            return Err(NodeError::InvalidParams(format!("actor id {:?} is reserved", credential.actor_id)));
        }
        if self.credentials.contains_key(&credential.actor_id) {
            return Err(NodeError::DuplicateActor(credential.actor_id.clone()));
        }
        if credential.role == Role::Authority && self.credentials.values().any(Credential::is_authority) {
            return Err(NodeError::AuthorityExists);
        }
        Ok(())
    }

    pub fn register_credential(&mut self, credential: Credential) -> Result<(), NodeError> {
        self.check_new_credential(&credential)?;
        self.credentials.insert(credential.actor_id.clone(), credential.clone());
        self.journal.push(Record::Credential { credential });
        Ok(())
    }

    fn actor(&self, actor: &str) -> Result<&Credential, NodeError> {
        self.credentials.get(actor).ok_or_else(|| NodeError::UnknownActor(actor.to_string()))
    }

    fn require_role(&self, actor: &str, role: Role) -> Result<&Credential, NodeError> {
        let cred = self.actor(actor)?;
        if cred.role != role {
            return Err(NodeError::Unauthorized(format!("{actor} holds a {} credential, {role} required", cred.role)));
        }
        Ok(cred)
    }

    fn require_platform(&self, actor: &str) -> Result<&Credential, NodeError> {
        match self.credentials.get(actor) {
            None => Err(RegistryError::UnknownIssuer(actor.to_string()).into()),
            Some(_) => self.require_role(actor, Role::Platform),
        }
    }

    // ---- ledger plumbing --------------------------------------------------

    fn event<T: Serialize>(&self, kind: EventKind, body: &T, author: &str, at: Timestamp) -> Result<LedgerEvent, NodeError> {
        Ok(LedgerEvent::with_body(kind, body, author, at)?)
    }

    /// Timestamp for the next block: wall clock, never behind the tip.
    fn next_time(&self) -> Timestamp {
        self.clock.now().max(self.chain.tip().header().timestamp())
    }

    /// Seals `events` into one block on the tip, projects and journals it.
    fn commit(&mut self, events: Vec<LedgerEvent>, at: Timestamp) -> Result<Block, NodeError> {
        let block = mine_block(self.chain.tip().header(), events, self.params.difficulty, at)?;
        self.chain.append(block.clone())?;
        self.project(&block);
        self.journal.push(Record::Block { block: block.clone() });
        Ok(block)
    }

    fn project(&mut self, block: &Block) {
        let height = block.height();
        for event in block.events() {
            self.registry.apply(event, height);
            self.contracts.apply(event);
            self.votes.apply(event);
            if event.kind() == EventKind::ApplicationDecision {
                if let Ok(d) = event.body::<ApplicationDecisionBody>() {
                    if d.approved {
                        let approval =
                            Approval { application_id: d.application_id, decision_event: event.event_id(), height };
                        self.registry.record_approval(d.definition_id, approval);
                    }
                }
            }
        }
    }

    // ---- registry ---------------------------------------------------------

    pub fn register_definition(&mut self, actor: &str, metadata: DefinitionMetadata) -> Result<Hash32, NodeError> {
        self.require_platform(actor)?;
        metadata.validate()?;
        let definition_id = metadata.definition_id(actor);
        if self.registry.definition(&definition_id).is_some() {
            return Ok(definition_id);
        }
        let at = self.next_time();
        let def = BadgeDefinition { definition_id, metadata, issuer: actor.to_string(), created_at: at };
        let event = self.event(EventKind::DefinitionRegistered, &def, actor, at)?;
        self.commit(vec![event], at)?;
        Ok(definition_id)
    }

    pub fn mint_token(&mut self, actor: &str, definition_id: &Hash32, holder: &Address, grade: &str) -> Result<BadgeToken, NodeError> {
        self.require_platform(actor)?;
        let at = self.next_time();
        let token = self.registry.prepare_mint(actor, definition_id, holder, grade, at)?;
        self.commit_mint(actor, &token, at)?;
        Ok(self.registry.token(&token.token_id).cloned().expect("minted token is indexed"))
    }

    fn commit_mint(&mut self, actor: &str, token: &BadgeToken, at: Timestamp) -> Result<(), NodeError> {
        let body = TokenMintedBody {
            token_id: token.token_id,
            definition_id: token.definition_id,
            holder: token.holder,
            grade: token.grade.clone(),
            issuer: token.issuer.clone(),
            minted_at: token.minted_at,
        };
        let event = self.event(EventKind::TokenMinted, &body, actor, at)?;
        self.commit(vec![event], at)?;
        Ok(())
    }

    pub fn verify_token(&self, token_id: &Hash32) -> VerificationReport {
        let token = self.registry.token(token_id).cloned();
        let inclusion_proofs = match token {
            Some(_) => trace(self.chain.blocks(), &token_id.to_hex()),
            None => Vec::new(),
        };
        let proofs_valid = inclusion_proofs.iter().all(|t| t.verify());
        VerificationReport {
            token_id: *token_id,
            exists: token.is_some(),
            status: token.as_ref().map(|t| t.status),
            holder: token.as_ref().map(|t| t.holder),
            issuer: token.as_ref().map(|t| t.issuer.clone()),
            certified: token.as_ref().is_some_and(|t| t.status == TokenStatus::Certified),
            token,
            inclusion_proofs,
            proofs_valid,
        }
    }

    /// Authority-only status change: freeze, revoke, or restore a frozen token.
    pub fn change_status(&mut self, actor: &str, token_id: &Hash32, action: TokenAction) -> Result<BadgeToken, NodeError> {
        if action == TokenAction::Certify {
            return Err(NodeError::Unauthorized("tokens are certified through an approved application".into()));
        }
        match self.credentials.get(actor) {
            Some(c) if c.is_authority() => {}
            _ => return Err(RegistryError::Unauthorized.into()),
        }
        self.registry.check_transition(token_id, action)?;
        let token = self.registry.token(token_id).cloned().expect("checked above");
        let at = self.next_time();
        let event = match action {
            TokenAction::Freeze | TokenAction::Revoke => {
                let kind = if action == TokenAction::Freeze { EventKind::TokenFrozen } else { EventKind::TokenRevoked };
                let body =
                    TokenStatusBody { token_id: token.token_id, definition_id: token.definition_id, revision: token.revision + 1 };
                self.event(kind, &body, actor, at)?
            }
            TokenAction::Restore => {
                let approval = self.registry.approval(&token.definition_id).cloned().ok_or(RegistryError::NotApproved)?;
                let body = TokenCertifiedBody {
                    token_id: token.token_id,
                    definition_id: token.definition_id,
                    official_description: self.official_description(&token, &approval.application_id),
                    certified_at: at,
                    application_id: Some(approval.application_id),
                    revision: token.revision + 1,
                };
                self.event(EventKind::TokenCertified, &body, actor, at)?
            }
            TokenAction::Certify => unreachable!(),
        };
        self.commit(vec![event], at)?;
        Ok(self.registry.token(token_id).cloned().expect("token exists"))
    }

    pub fn freeze_token(&mut self, actor: &str, token_id: &Hash32) -> Result<BadgeToken, NodeError> {
        self.change_status(actor, token_id, TokenAction::Freeze)
    }

    pub fn revoke_token(&mut self, actor: &str, token_id: &Hash32) -> Result<BadgeToken, NodeError> {
        self.change_status(actor, token_id, TokenAction::Revoke)
    }

    pub fn restore_token(&mut self, actor: &str, token_id: &Hash32) -> Result<BadgeToken, NodeError> {
        self.change_status(actor, token_id, TokenAction::Restore)
    }

    fn official_description(&self, token: &BadgeToken, application_id: &Hash32) -> String {
        if let Some(existing) = &token.official_description {
            return existing.clone();
        }
        self.applications
            .get(application_id)
            .and_then(|a| a.payload.official_description.clone())
            .or_else(|| self.registry.definition(&token.definition_id).map(|d| d.metadata.description.clone()))
            .unwrap_or_default()
    }

    // ---- contracts --------------------------------------------------------

    /// Ingests one off-ledger activity event reported by the calling platform.
    pub fn ingest_activity(&mut self, actor: &str, activity: ActivityEvent) -> Result<(), NodeError> {
        self.require_platform(actor)?;
        if activity.platform != actor {
            return Err(NodeError::Unauthorized(format!("{actor} cannot report activity for platform {}", activity.platform)));
        }
        self.activity.check(&activity)?;
        self.activity.push(activity.clone());
        self.journal.push(Record::Activity { activity });
        Ok(())
    }

    pub fn create_contract(
        &mut self,
        actor: &str,
        definition_id: &Hash32,
        grade: &str,
        conditions: Vec<Condition>,
    ) -> Result<RuleContract, NodeError> {
        self.require_platform(actor)?;
        let def = self.registry.definition(definition_id).ok_or(RegistryError::UnknownDefinition(*definition_id))?;
        if def.issuer != actor {
            return Err(RegistryError::IssuerMismatch.into());
        }
        if !def.has_grade(grade) {
            return Err(RegistryError::BadGrade(grade.to_string()).into());
        }
        let contract = RuleContract::new(*definition_id, grade, conditions, actor, self.clock.now())?;
        if self.contracts.get(&contract.contract_id).is_some() {
            return Ok(self.contracts.get(&contract.contract_id).cloned().expect("present"));
        }
        self.contracts.upsert(contract.clone());
        self.journal.push(Record::Contract { contract: contract.clone() });
        Ok(contract)
    }

    /// Evaluates `contract_id` over the user's feed from the owning platform
    /// and mints when eligible.
    pub fn execute_issuance(&mut self, actor: &str, contract_id: &Hash32, user: &Address) -> Result<BadgeToken, NodeError> {
        self.require_platform(actor)?;
        let contract = self.contracts.require(contract_id)?.clone();
        if contract.owner != actor {
            return Err(RegistryError::IssuerMismatch.into());
        }
        let at = self.next_time();
        let feed = self.activity.feed_from(user, &contract.owner);
        if !evaluate(&contract, &feed, at)? {
            return Err(ContractError::NotEligible.into());
        }
        let token = self.registry.prepare_mint(actor, &contract.definition_id, user, &contract.grade, at)?;
        self.commit_mint(actor, &token, at)?;
        Ok(self.registry.token(&token.token_id).cloned().expect("minted token is indexed"))
    }

    /// Replaces a contract's conditions, backed by a closed passing vote
    /// whose subject is exactly this change.
    pub fn update_rules(
        &mut self,
        actor: &str,
        contract_id: &Hash32,
        conditions: Vec<Condition>,
        tally: &TallyResult,
    ) -> Result<RuleContract, NodeError> {
        self.require_platform(actor)?;
        let contract = self.contracts.require(contract_id)?.clone();
        if contract.owner != actor {
            return Err(RegistryError::IssuerMismatch.into());
        }
        if !contract.active {
            return Err(ContractError::InactiveContract.into());
        }
        if !tally.passing {
            return Err(ContractError::VoteNotPassing.into());
        }
        let recorded = self.votes.round(&tally.round_id).and_then(|r| r.tally.as_ref());
        if recorded != Some(tally) {
            // Not a closed tally on this ledger, or a doctored copy of one.
            return Err(ContractError::VoteNotPassing.into());
        }
        validate_conditions(&conditions)?;
        let change = RuleChange { contract_id: *contract_id, base_version: contract.version, conditions: conditions.clone() };
        if change.subject_hash() != tally.subject_hash {
            let stale = (1..contract.version).find(|&v| {
                RuleChange { base_version: v, ..change.clone() }.subject_hash() == tally.subject_hash
            });
            return Err(match stale {
                Some(proposed) => ContractError::StaleVersion { current: contract.version, proposed },
                None => ContractError::VoteSubjectMismatch,
            }
            .into());
        }
        let at = self.next_time();
        let body = RuleUpdatedBody {
            contract_id: *contract_id,
            old_version: contract.version,
            new_version: contract.version + 1,
            conditions,
            round_id: tally.round_id,
            subject_hash: tally.subject_hash,
            tally_digest: tally.digest(),
        };
        let event = self.event(EventKind::RuleUpdated, &body, actor, at)?;
        self.commit(vec![event], at)?;
        Ok(self.contracts.get(contract_id).cloned().expect("contract exists"))
    }

    // ---- voting -----------------------------------------------------------

    /// Opens a round with this node as registrar. The caller supplies the
    /// registrar key so that key generation stays outside replay.
    pub fn open_round(&mut self, actor: &str, spec: RoundSpec, registrar: RsaKeyPair) -> Result<VotingRound, NodeError> {
        let cred = self.actor(actor)?;
        if cred.role == Role::User {
            return Err(VoteError::Unauthorized.into());
        }
        if registrar.bits() < self.params.min_registrar_bits {
            return Err(VoteError::InvalidRound(format!(
                "registrar key has {} bits, at least {} required",
                registrar.bits(),
                self.params.min_registrar_bits
            ))
            .into());
        }
        let at = self.next_time();
        let body = self.votes.prepare_open(&spec, &registrar, actor, at)?;
        let round_id = body.round_id;
        let event = self.event(EventKind::VoteRoundOpened, &body, actor, at)?;
        self.commit(vec![event], at)?;
        self.votes.install_key(round_id, registrar.clone());
        self.journal.push(Record::RegistrarKey { round_id, key: registrar });
        Ok(self.votes.round(&round_id).cloned().expect("round is open"))
    }

    /// Default approval-style round spec using this node's quorum and threshold.
    pub fn approval_spec(&self, subject_hash: Hash32, voters: impl IntoIterator<Item = Address>) -> RoundSpec {
        RoundSpec { quorum: self.params.quorum, threshold: self.params.threshold, ..RoundSpec::approval(subject_hash, voters) }
    }

    /// Registrar: signs a blinded ballot for an eligible, not-yet-issued voter.
    pub fn request_ballot(&mut self, actor: &str, round_id: &Hash32, blinded: &BigUint) -> Result<BigUint, NodeError> {
        let voter = self.actor(actor)?.address();
        let signed = self.votes.sign_request(round_id, &voter, blinded)?;
        self.votes.record_issuance(*round_id, voter);
        self.journal.push(Record::Issuance { round_id: *round_id, voter });
        Ok(signed)
    }

    /// Accepts an anonymous ballot. Returns the VoteCast event id.
    pub fn cast_vote(&mut self, round_id: &Hash32, ballot: &BallotToken, option: &str) -> Result<Hash32, NodeError> {
        self.votes.check_cast(round_id, ballot, option)?;
        let at = self.next_time();
        let body = VoteCastBody { round_id: *round_id, serial: ballot.serial, option: option.to_string(), signature: ballot.signature.clone() };
        let event = self.event(EventKind::VoteCast, &body, ANONYMOUS, at)?;
        let id = event.event_id();
        self.commit(vec![event], at)?;
        Ok(id)
    }

    pub fn close_round(&mut self, actor: &str, round_id: &Hash32) -> Result<TallyResult, NodeError> {
        let cred = self.actor(actor)?;
        let round = self.votes.require(round_id)?;
        if round.opened_by != actor && !cred.is_authority() {
            return Err(VoteError::Unauthorized.into());
        }
        if !round.is_open() {
            return Err(VoteError::RoundClosed.into());
        }
        let tally = round.current_tally();
        let at = self.next_time();
        let event = self.event(EventKind::VoteRoundClosed, &tally, actor, at)?;
        self.commit(vec![event], at)?;
        Ok(tally)
    }

    // ---- certification ----------------------------------------------------

    fn check_payload(&self, actor: &str, payload: &ApplicationPayload) -> Result<(), NodeError> {
        let def = self
            .registry
            .definition(&payload.definition_id)
            .ok_or(CertificationError::UnknownDefinition(payload.definition_id))?;
        if def.issuer != actor {
            return Err(CertificationError::ForeignDefinition.into());
        }
        for sample in &payload.sample_awards {
            let live = self.registry.token(&sample.token_id).is_some_and(|t| {
                t.definition_id == payload.definition_id && t.holder == sample.holder && t.status.is_live()
            });
            if !live {
                return Err(CertificationError::DanglingSample(sample.token_id).into());
            }
        }
        if let Some(round_id) = payload.voting_data {
            if self.votes.round(&round_id).is_none_or(|r| r.is_open()) {
                return Err(CertificationError::DanglingVote(round_id).into());
            }
        }
        Ok(())
    }

    fn owned_application(&self, actor: &str, id: &Hash32) -> Result<CertificationApplication, NodeError> {
        let app = self.applications.get(id).ok_or(CertificationError::UnknownApplication(*id))?;
        if app.platform != actor {
            return Err(CertificationError::Unauthorized.into());
        }
        Ok(app.clone())
    }

    fn authority_application(&self, actor: &str, id: &Hash32) -> Result<CertificationApplication, NodeError> {
        match self.credentials.get(actor) {
            Some(c) if c.is_authority() => {}
            _ => return Err(CertificationError::Unauthorized.into()),
        }
        Ok(self.applications.get(id).ok_or(CertificationError::UnknownApplication(*id))?.clone())
    }

    fn store_application(&mut self, application: CertificationApplication) -> CertificationApplication {
        self.applications.insert(application.application_id, application.clone());
        self.journal.push(Record::Application { application: application.clone() });
        application
    }

    fn new_application(&mut self, actor: &str, payload: ApplicationPayload, state: ApplicationState) -> Result<CertificationApplication, NodeError> {
        self.require_platform(actor)?;
        self.check_payload(actor, &payload)?;
        let now = self.clock.now();
        #[derive(Serialize)]
        struct IdContent<'a> {
            platform: &'a str,
            payload: &'a ApplicationPayload,
            created_at: Timestamp,
            sequence: u64,
        }
        let id = canonical_hash(&IdContent { platform: actor, payload: &payload, created_at: now, sequence: self.applications.len() as u64 })?;
        Ok(self.store_application(CertificationApplication::new(id, actor, payload, state, now)))
    }

    /// Stores an application in Draft.
    pub fn save_draft(&mut self, actor: &str, payload: ApplicationPayload) -> Result<CertificationApplication, NodeError> {
        self.new_application(actor, payload, ApplicationState::Draft)
    }

    /// Files a new application straight into Submitted.
    pub fn submit_application(&mut self, actor: &str, payload: ApplicationPayload) -> Result<CertificationApplication, NodeError> {
        self.new_application(actor, payload, ApplicationState::Submitted)
    }

    /// Moves a Draft to Submitted after rechecking its payload.
    pub fn submit_draft(&mut self, actor: &str, id: &Hash32) -> Result<CertificationApplication, NodeError> {
        let mut app = self.owned_application(actor, id)?;
        app.state = app.next_state(ApplicationAction::Submit)?;
        self.check_payload(actor, &app.payload)?;
        Ok(self.store_application(app))
    }

    pub fn begin_review(&mut self, actor: &str, id: &Hash32) -> Result<CertificationApplication, NodeError> {
        let mut app = self.authority_application(actor, id)?;
        app.state = app.next_state(ApplicationAction::BeginReview)?;
        app.reviewer = Some(actor.to_string());
        Ok(self.store_application(app))
    }

    /// Records the review outcome on the ledger.
    pub fn decide(&mut self, actor: &str, id: &Hash32, checks: &ReviewChecks, verdict: &Verdict) -> Result<CertificationApplication, NodeError> {
        let mut app = self.authority_application(actor, id)?;
        let action = match verdict {
            Verdict::Approve => ApplicationAction::Approve,
            Verdict::Reject { .. } => ApplicationAction::Reject,
        };
        let next = app.next_state(action)?;
        let at = self.next_time();
        let review = ReviewRecord::complete(checks, verdict, actor, at)?;
        let reason = match verdict {
            Verdict::Approve => None,
            Verdict::Reject { reason } => Some(reason.clone()),
        };
        let body = ApplicationDecisionBody {
            application_id: app.application_id,
            application_hash: app.content_hash(),
            definition_id: app.definition_id(),
            platform: app.platform.clone(),
            revision: app.revision,
            approved: next == ApplicationState::Approved,
            compliance_ok: review.compliance_ok,
            design_ok: review.design_ok,
            platform_ok: review.platform_ok,
            security_ok: review.security_ok,
            reason: reason.clone(),
        };
        let event = self.event(EventKind::ApplicationDecision, &body, actor, at)?;
        let event_id = event.event_id();
        let block = self.commit(vec![event], at)?;
        app.state = next;
        app.review = Some(review);
        app.rejection_reason = reason;
        if next == ApplicationState::Approved {
            app.decision_height = Some(block.height());
            app.decision_event = Some(event_id);
        }
        Ok(self.store_application(app))
    }

    /// Upgrades every qualifying platform token of an approved definition to
    /// Certified and links its record, all in one block. Safe to repeat.
    pub fn certify(&mut self, actor: &str, id: &Hash32) -> Result<LinkageReport, NodeError> {
        let app = self.authority_application(actor, id)?;
        let (Some(decision_height), Some(decision_event), ApplicationState::Approved) =
            (app.decision_height, app.decision_event, app.state)
        else {
            return Err(CertificationError::NotApproved.into());
        };
        let def = self.registry.definition(&app.definition_id()).cloned().ok_or(CertificationError::UnknownDefinition(app.definition_id()))?;
        let description = app.payload.official_description.clone().unwrap_or_else(|| def.metadata.description.clone());
        let at = self.next_time();
        let mut report = LinkageReport { application_id: *id, ..Default::default() };
        let mut events = Vec::new();
        let tokens: Vec<BadgeToken> = self.registry.tokens_of_definition(&def.definition_id).cloned().collect();
        for token in tokens {
            let minted_before = self.registry.mint_height(&token.token_id).is_some_and(|h| h <= decision_height);
            match token.status {
                TokenStatus::Revoked => continue,
                TokenStatus::Frozen => report.skipped_frozen.push(token.token_id),
                TokenStatus::Certified => report.already_certified.push(token.token_id),
                TokenStatus::PlatformIssued if !minted_before => report.minted_after_decision.push(token.token_id),
                TokenStatus::PlatformIssued if !def.has_grade(&token.grade) => continue,
                TokenStatus::PlatformIssued => {
                    let certified = TokenCertifiedBody {
                        token_id: token.token_id,
                        definition_id: token.definition_id,
                        official_description: description.clone(),
                        certified_at: at,
                        application_id: Some(*id),
                        revision: token.revision + 1,
                    };
                    let linked = RecordLinkedBody {
                        token_id: token.token_id,
                        definition_id: token.definition_id,
                        holder: token.holder,
                        platform: token.issuer.clone(),
                        application_id: *id,
                        decision_event,
                    };
                    events.push(self.event(EventKind::TokenCertified, &certified, actor, at)?);
                    events.push(self.event(EventKind::RecordLinked, &linked, actor, at)?);
                    report.certified.push(token.token_id);
                }
            }
        }
        report.events_appended = events.len();
        if !events.is_empty() {
            self.commit(events, at)?;
        }
        Ok(report)
    }

    /// Amends a rejected application and returns it to Submitted.
    pub fn resubmit(&mut self, actor: &str, id: &Hash32, payload: ApplicationPayload) -> Result<CertificationApplication, NodeError> {
        let mut app = self.owned_application(actor, id)?;
        app.state = app.next_state(ApplicationAction::Resubmit)?;
        self.check_payload(actor, &payload)?;
        app.payload = payload;
        app.revision += 1;
        app.reviewer = None;
        app.review = None;
        app.rejection_reason = None;
        Ok(self.store_application(app))
    }

    pub fn withdraw(&mut self, actor: &str, id: &Hash32) -> Result<CertificationApplication, NodeError> {
        let mut app = self.owned_application(actor, id)?;
        app.state = app.next_state(ApplicationAction::Withdraw)?;
        Ok(self.store_application(app))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::ManualClock;

    fn node() -> Node {
        let params = NodeParams { difficulty: 0, ..NodeParams::default() };
        let mut n = Node::new(params, Arc::new(ManualClock::new(1_000))).unwrap();
        for (id, role) in [("gov", Role::Authority), ("edu", Role::Platform)] {
            n.register_credential(Credential { actor_id: id.into(), role, public_key: Hash32::digest(id.as_bytes()), issued_at: 0 })
                .unwrap();
        }
        n
    }

    #[test]
    fn error_codes_use_variant_names() {
        assert_eq!(NodeError::from(RegistryError::DuplicateAward).code(), "DuplicateAward");
        assert_eq!(NodeError::from(RegistryError::BadGrade("x".into())).code(), "BadGrade");
        assert_eq!(NodeError::from(ContractError::StaleVersion { current: 2, proposed: 1 }).code(), "StaleVersion");
        assert_eq!(NodeError::Unauthorized("x".into()).code(), "Unauthorized");
        assert_eq!(NodeError::from(VoteError::Crypto(crate::rsa_blind::RsaError::BadBlindingFactor)).code(), "BadBlindingFactor");
    }

    #[test]
    fn second_authority_rejected() {
        let mut n = node();
        let other = Credential { actor_id: "gov2".into(), role: Role::Authority, public_key: Hash32::ZERO, issued_at: 0 };
        assert!(matches!(n.register_credential(other), Err(NodeError::AuthorityExists)));
    }

    #[test]
    fn failed_operations_leave_state_untouched() {
        let mut n = node();
        let before = n.state_digest();
        let journal_len = n.journal.len();
        assert!(n.freeze_token("gov", &Hash32::ZERO).is_err());
        assert!(n.mint_token("edu", &Hash32::ZERO, &Hash32::ZERO, "gold").is_err());
        assert!(n.register_definition("nobody", DefinitionMetadata {
            name: "x".into(),
            icon: Hash32::ZERO,
            description: String::new(),
            criteria: "c".into(),
            grade_levels: vec!["g".into()],
        })
        .is_err());
        assert_eq!(n.state_digest(), before);
        assert_eq!(n.journal.len(), journal_len);
    }
}
