//! Hash-chained, Merkle-rooted, proof-of-work sealed blocks of badge events.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical::{canonical_encode, canonical_hash, to_payload, CanonicalError, Payload, Value};
use crate::hash::Hash32;
use crate::merkle::{self, MerkleProof};

/// Largest difficulty accepted by the miner and the validator.
pub const MAX_DIFFICULTY: u32 = 24;

/// Seconds since the Unix epoch (UTC).
pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    DefinitionRegistered,
    TokenMinted,
    TokenCertified,
    TokenFrozen,
    TokenRevoked,
    RuleUpdated,
    VoteRoundOpened,
    VoteCast,
    VoteRoundClosed,
    ApplicationDecision,
    RecordLinked,
}

impl EventKind {
    pub const ALL: [EventKind; 11] = [
        EventKind::DefinitionRegistered,
        EventKind::TokenMinted,
        EventKind::TokenCertified,
        EventKind::TokenFrozen,
        EventKind::TokenRevoked,
        EventKind::RuleUpdated,
        EventKind::VoteRoundOpened,
        EventKind::VoteCast,
        EventKind::VoteRoundClosed,
        EventKind::ApplicationDecision,
        EventKind::RecordLinked,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Serialize)]
struct EventContent<'a> {
    kind: EventKind,
    payload: &'a Payload,
    author: &'a str,
    timestamp: Timestamp,
}

/// One badge-system fact recorded on the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEvent {
    event_id: Hash32,
    kind: EventKind,
    payload: Payload,
    author: String,
    timestamp: Timestamp,
}

impl LedgerEvent {
    pub fn new(kind: EventKind, payload: Payload, author: impl Into<String>, timestamp: Timestamp) -> Self {
        let author = author.into();
        let event_id = Self::compute_id(kind, &payload, &author, timestamp);
        LedgerEvent { event_id, kind, payload, author, timestamp }
    }

    /// Builds an event whose payload is the serialized form of `body`.
    pub fn with_body<T: Serialize>(
        kind: EventKind,
        body: &T,
        author: impl Into<String>,
        timestamp: Timestamp,
    ) -> Result<Self, CanonicalError> {
        Ok(Self::new(kind, to_payload(body)?, author, timestamp))
    }

    fn compute_id(kind: EventKind, payload: &Payload, author: &str, timestamp: Timestamp) -> Hash32 {
        canonical_hash(&EventContent { kind, payload, author, timestamp })
            .expect("payload values are canonical by construction")
    }

    /// Recomputes the id from the content; differs from `event_id()` only for tampered events.
    pub fn recompute_id(&self) -> Hash32 {
        Self::compute_id(self.kind, &self.payload, &self.author, self.timestamp)
    }

    pub fn event_id(&self) -> Hash32 {
        self.event_id
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn author(&self) -> &str {
        &self.author
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn body<T: serde::de::DeserializeOwned>(&self) -> Result<T, CanonicalError> {
        crate::canonical::from_payload(&self.payload)
    }

    /// Whether this event was authored by, or its payload mentions, `subject`.
    pub fn references(&self, subject: &str) -> bool {
        self.author == subject || self.payload.values().any(|v| v.mentions(subject))
    }

    pub fn payload_str(&self, key: &str) -> Option<&str> {
        match self.payload.get(key) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHeader {
    height: u64,
    prev_hash: Hash32,
    merkle_root: Hash32,
    timestamp: Timestamp,
    difficulty: u32,
    nonce: u64,
}

impl BlockHeader {
    pub fn genesis() -> Self {
        BlockHeader {
            height: 0,
            prev_hash: Hash32::ZERO,
            merkle_root: merkle::merkle_root(&[]),
            timestamp: 0,
            difficulty: 0,
            nonce: 0,
        }
    }

    pub fn hash(&self) -> Hash32 {
        canonical_hash(self).expect("headers hold only integers and hashes")
    }

    pub fn meets_difficulty(&self) -> bool {
        self.hash().leading_zero_bits() >= self.difficulty
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn prev_hash(&self) -> Hash32 {
        self.prev_hash
    }

    pub fn merkle_root(&self) -> Hash32 {
        self.merkle_root
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    /// Work contributed by this header: 2^difficulty.
    pub fn work(&self) -> u128 {
        1u128 << self.difficulty.min(127)
    }
}

/// A sealed block. `hash` is the header hash, stored so that a tampered tip
/// header cannot pass as a fresh proof of work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    header: BlockHeader,
    hash: Hash32,
    events: Vec<LedgerEvent>,
}

impl Block {
    pub fn genesis() -> Self {
        let header = BlockHeader::genesis();
        Block { hash: header.hash(), header, events: Vec::new() }
    }

    pub fn header(&self) -> &BlockHeader {
        &self.header
    }

    pub fn hash(&self) -> Hash32 {
        self.hash
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn event_ids(&self) -> Vec<Hash32> {
        self.events.iter().map(LedgerEvent::event_id).collect()
    }

    /// Inclusion proof for the event at `leaf_index`.
    pub fn prove(&self, leaf_index: usize) -> Result<MerkleProof, merkle::IndexOutOfRange> {
        merkle::prove(&self.event_ids(), leaf_index)
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical_encode(self).expect("blocks are canonical by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MineError {
    #[error("difficulty {0} exceeds the maximum of {MAX_DIFFICULTY}")]
    DifficultyOutOfRange(u32),
    #[error("a mined block must carry at least one event")]
    EmptyBlock,
    #[error("block timestamp {timestamp} precedes parent timestamp {parent}")]
    TimestampRegression { timestamp: Timestamp, parent: Timestamp },
    #[error("all 2^64 nonces failed")]
    NonceExhausted,
}

/// Seals `events` on top of `parent`, searching nonces upward from 0.
pub fn mine_block(
    parent: &BlockHeader,
    events: Vec<LedgerEvent>,
    difficulty: u32,
    timestamp: Timestamp,
) -> Result<Block, MineError> {
    if difficulty > MAX_DIFFICULTY {
        return Err(MineError::DifficultyOutOfRange(difficulty));
    }
    if events.is_empty() {
        return Err(MineError::EmptyBlock);
    }
    if timestamp < parent.timestamp {
        return Err(MineError::TimestampRegression { timestamp, parent: parent.timestamp });
    }
    let ids: Vec<Hash32> = events.iter().map(LedgerEvent::event_id).collect();
    let mut header = BlockHeader {
        height: parent.height + 1,
        prev_hash: parent.hash(),
        merkle_root: merkle::merkle_root(&ids),
        timestamp,
        difficulty,
        nonce: 0,
    };
    let nonce = search_nonce(&header).ok_or(MineError::NonceExhausted)?;
    header.nonce = nonce;
    let hash = header.hash();
    debug_assert!(hash.leading_zero_bits() >= difficulty);
    Ok(Block { header, hash, events })
}

/// Splits the canonical header encoding around the nonce digits so each
/// attempt hashes only the changing part after a cached prefix state.
fn search_nonce(header: &BlockHeader) -> Option<u64> {
    let template = canonical_encode(&BlockHeader { nonce: 0, ..header.clone() }).ok()?;
    let marker = b"\"nonce\":0";
    let at = template.windows(marker.len()).position(|w| w == marker)? + marker.len() - 1;
    let (prefix, rest) = template.split_at(at);
    let suffix = &rest[1..];
    let mut base = Sha256::new();
    base.update(prefix);
    let mut digits = itoa_buf();
    for nonce in 0..=u64::MAX {
        let mut hasher = base.clone();
        hasher.update(format_u64(nonce, &mut digits));
        hasher.update(suffix);
        let hash = Hash32(hasher.finalize().into());
        if hash.leading_zero_bits() >= header.difficulty {
            return Some(nonce);
        }
    }
    None
}

fn itoa_buf() -> [u8; 20] {
    [0u8; 20]
}

fn format_u64(mut n: u64, buf: &mut [u8; 20]) -> &[u8] {
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (n % 10) as u8;
        n /= 10;
        if n == 0 {
            break;
        }
    }
    &buf[i..]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainErrorKind {
    BadGenesis,
    BrokenLink,
    MerkleMismatch,
    HeaderHashMismatch,
    InsufficientWork,
    BadHeight,
    TimestampRegression,
    DuplicateEvent,
}

impl fmt::Display for ChainErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{kind} at height {height}")]
pub struct ChainError {
    pub kind: ChainErrorKind,
    pub height: u64,
}

/// Checks `block` as the successor of `parent`. `seen` holds event ids
/// already present in the chain; returns the block's event ids.
fn check_successor(parent: &Block, block: &Block, seen: &HashSet<Hash32>) -> Result<Vec<Hash32>, ChainError> {
    let height = parent.height() + 1;
    let fail = |kind| Err(ChainError { kind, height });
    let header = &block.header;
    if header.height != height {
        return fail(ChainErrorKind::BadHeight);
    }
    if header.prev_hash != parent.hash {
        return fail(ChainErrorKind::BrokenLink);
    }
    if block.events.is_empty() {
        return fail(ChainErrorKind::MerkleMismatch);
    }
    let mut ids = Vec::with_capacity(block.events.len());
    for event in &block.events {
        let id = event.recompute_id();
        if id != event.event_id {
            return fail(ChainErrorKind::MerkleMismatch);
        }
        ids.push(id);
    }
    if merkle::merkle_root(&ids) != header.merkle_root {
        return fail(ChainErrorKind::MerkleMismatch);
    }
    let hash = header.hash();
    if hash != block.hash {
        return fail(ChainErrorKind::HeaderHashMismatch);
    }
    if header.difficulty > MAX_DIFFICULTY || hash.leading_zero_bits() < header.difficulty {
        return fail(ChainErrorKind::InsufficientWork);
    }
    if header.timestamp < parent.header.timestamp {
        return fail(ChainErrorKind::TimestampRegression);
    }
    let mut fresh = HashSet::with_capacity(ids.len());
    if ids.iter().any(|id| seen.contains(id) || !fresh.insert(*id)) {
        return fail(ChainErrorKind::DuplicateEvent);
    }
    Ok(ids)
}

/// Full validation from genesis, reporting the first failing height.
pub fn validate_chain(chain: &[Block]) -> Result<(), ChainError> {
    match chain.first() {
        Some(genesis) if *genesis == Block::genesis() => {}
        _ => return Err(ChainError { kind: ChainErrorKind::BadGenesis, height: 0 }),
    }
    let mut seen = HashSet::new();
    for pair in chain.windows(2) {
        seen.extend(check_successor(&pair[0], &pair[1], &seen)?);
    }
    Ok(())
}

/// Sum of 2^difficulty over all blocks.
pub fn total_work(chain: &[Block]) -> u128 {
    chain.iter().map(|b| b.header.work()).sum()
}

/// A validated, append-only chain of blocks starting at genesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    event_ids: HashSet<Hash32>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Self {
        Chain { blocks: vec![Block::genesis()], event_ids: HashSet::new() }
    }

    /// Validates `blocks` in full and wraps them.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, ChainError> {
        validate_chain(&blocks)?;
        let event_ids = blocks.iter().flat_map(|b| b.event_ids()).collect();
        Ok(Chain { blocks, event_ids })
    }

    /// Appends `block` if it is a valid successor of the tip.
    pub fn append(&mut self, block: Block) -> Result<(), ChainError> {
        let ids = check_successor(self.tip(), &block, &self.event_ids)?;
        self.event_ids.extend(ids);
        self.blocks.push(block);
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height()
    }

    pub fn total_work(&self) -> u128 {
        total_work(&self.blocks)
    }

    pub fn contains_event(&self, id: &Hash32) -> bool {
        self.event_ids.contains(id)
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }
}

/// An event located in the chain with its inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracedEvent {
    pub height: u64,
    pub block_root: Hash32,
    pub event: LedgerEvent,
    pub proof: MerkleProof,
}

impl TracedEvent {
    pub fn verify(&self) -> bool {
        merkle::verify_proof(&self.event.event_id, &self.proof, &self.block_root)
    }
}

/// All events authored by or mentioning `subject`, in chain order.
pub fn trace(chain: &[Block], subject: &str) -> Vec<TracedEvent> {
    let mut out = Vec::new();
    for block in chain {
        let ids = block.event_ids();
        for (i, event) in block.events.iter().enumerate() {
            if event.references(subject) {
                out.push(TracedEvent {
                    height: block.height(),
                    block_root: block.header.merkle_root,
                    event: event.clone(),
                    proof: merkle::prove(&ids, i).expect("index within block"),
                });
            }
        }
    }
    out
}
