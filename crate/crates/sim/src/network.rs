//! Message-queue network of full-replica nodes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use medalchain_core::canonical::{Payload, Value};
use medalchain_core::ledger::{mine_block, validate_chain, Block, Chain, EventKind, LedgerEvent, Timestamp};
use medalchain_core::Hash32;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::SimError;

/// Most events sealed into one mined block.
pub const BATCH_SIZE: usize = 16;

/// Logical clock origin for simulated timestamps.
pub const EPOCH: Timestamp = 1_700_000_000;

/// Upper bound on messages handled by one `deliver_all`.
const DELIVERY_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Byzantine {
    /// Rewrites an event payload in every block it sends.
    PayloadTamper,
    /// Mines privately; never announces, relays or answers chain requests.
    Withhold,
    /// Mines two conflicting blocks per round and shows each to half its peers.
    Equivocate,
}

impl Byzantine {
    pub const ALL: [Byzantine; 3] = [Byzantine::PayloadTamper, Byzantine::Withhold, Byzantine::Equivocate];
}

impl fmt::Display for Byzantine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Byzantine::PayloadTamper => "payload",
            Byzantine::Withhold => "withhold",
            Byzantine::Equivocate => "equivocate",
        })
    }
}

impl FromStr for Byzantine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Byzantine::ALL.into_iter().find(|b| b.to_string() == s).ok_or_else(|| format!("unknown tamper mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetMessage {
    EventSubmit { sender: String, event: LedgerEvent },
    BlockAnnounce { sender: String, block: Block },
    ChainRequest { sender: String },
    ChainResponse { sender: String, blocks: Vec<Block> },
}

impl NetMessage {
    pub fn sender(&self) -> &str {
        match self {
            NetMessage::EventSubmit { sender, .. }
            | NetMessage::BlockAnnounce { sender, .. }
            | NetMessage::ChainRequest { sender }
            | NetMessage::ChainResponse { sender, .. } => sender,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimNode {
    pub node_id: String,
    chain: Chain,
    pending: Vec<LedgerEvent>,
    pub online: bool,
    pub byzantine: Option<Byzantine>,
    /// Invalid blocks or chains this node refused.
    pub rejected: u64,
}

impl SimNode {
    fn new(node_id: &str) -> Self {
        SimNode { node_id: node_id.to_string(), chain: Chain::new(), pending: Vec::new(), online: true, byzantine: None, rejected: 0 }
    }

    pub fn blocks(&self) -> &[Block] {
        self.chain.blocks()
    }

    pub fn pending(&self) -> &[LedgerEvent] {
        &self.pending
    }

    pub fn is_honest(&self) -> bool {
        self.byzantine.is_none()
    }

    /// Hash over the canonical bytes of the whole replica.
    pub fn digest(&self) -> Hash32 {
        let bytes: Vec<u8> = self.blocks().iter().flat_map(Block::to_canonical).collect();
        Hash32::digest(&bytes)
    }

    pub fn total_work(&self) -> u128 {
        self.chain.total_work()
    }

    fn knows(&self, event: &LedgerEvent) -> bool {
        self.chain.contains_event(&event.event_id()) || self.pending.iter().any(|e| e.event_id() == event.event_id())
    }

    /// Switches to `chain`, returning orphaned events to the pool and
    /// dropping pooled events the new chain already holds.
    fn adopt(&mut self, chain: Chain) {
        let old = std::mem::replace(&mut self.chain, chain);
        let mut orphans: Vec<LedgerEvent> = old
            .into_blocks()
            .into_iter()
            .flat_map(|b| b.events().to_vec())
            .filter(|e| !self.chain.contains_event(&e.event_id()))
            .collect();
        orphans.append(&mut self.pending);
        let mut seen = HashSet::new();
        orphans.retain(|e| !self.chain.contains_event(&e.event_id()) && seen.insert(e.event_id()));
        self.pending = orphans;
    }

    fn remove_pending_in_chain(&mut self) {
        let chain = &self.chain;
        self.pending.retain(|e| !chain.contains_event(&e.event_id()));
    }
}

/// Ranking used by fork choice: more work first, then the smaller tip hash.
fn rank(blocks: &[Block]) -> (u128, Reverse<Hash32>) {
    let tip = blocks.last().map(Block::hash).unwrap_or(Hash32::ZERO);
    (medalchain_core::ledger::total_work(blocks), Reverse(tip))
}

/// Picks the valid candidate with the most accumulated work, breaking ties
/// by the lexicographically smaller tip hash. Invalid candidates are ignored.
pub fn fork_choice(candidates: &[Vec<Block>]) -> Result<&[Block], SimError> {
    candidates
        .iter()
        .filter(|c| validate_chain(c).is_ok())
        .max_by_key(|c| rank(c))
        .map(Vec::as_slice)
        .ok_or(SimError::NoValidCandidate)
}

/// Per-node summary for reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeReport {
    pub node_id: String,
    pub online: bool,
    pub byzantine: Option<Byzantine>,
    pub height: u64,
    pub total_work: u128,
    pub tip: Hash32,
    pub pending: usize,
    pub digest: Hash32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub delivered: u64,
    pub dropped: u64,
    pub mined: u64,
}

#[derive(Debug)]
pub struct Network {
    nodes: BTreeMap<String, SimNode>,
    links: BTreeMap<(String, String), VecDeque<NetMessage>>,
    partition: Option<Vec<BTreeSet<String>>>,
    difficulty: u32,
    clock: Timestamp,
    event_seq: u64,
    rng: ChaCha20Rng,
    stats: NetStats,
}

impl Network {
    pub fn new(seed: u64, difficulty: u32) -> Self {
        Network {
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            partition: None,
            difficulty,
            clock: EPOCH,
            event_seq: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            stats: NetStats::default(),
        }
    }

    pub fn add_node(&mut self, node_id: &str) -> Result<(), SimError> {
        let valid = !node_id.is_empty() && node_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid {
            return Err(SimError::BadNodeId(node_id.to_string()));
        }
        if self.nodes.contains_key(node_id) {
            return Err(SimError::DuplicateNode(node_id.to_string()));
        }
        self.nodes.insert(node_id.to_string(), SimNode::new(node_id));
        Ok(())
    }

    pub fn node(&self, node_id: &str) -> Result<&SimNode, SimError> {
        self.nodes.get(node_id).ok_or_else(|| SimError::UnknownNode(node_id.to_string()))
    }

    fn node_mut(&mut self, node_id: &str) -> Result<&mut SimNode, SimError> {
        self.nodes.get_mut(node_id).ok_or_else(|| SimError::UnknownNode(node_id.to_string()))
    }

    fn online_node(&mut self, node_id: &str) -> Result<&mut SimNode, SimError> {
        let node = self.node_mut(node_id)?;
        if !node.online {
            return Err(SimError::NodeOffline(node_id.to_string()));
        }
        Ok(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SimNode> {
        self.nodes.values()
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = &SimNode> {
        self.nodes.values().filter(|n| n.is_honest())
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn partition_groups(&self) -> Option<&[BTreeSet<String>]> {
        self.partition.as_deref()
    }

    pub fn queued(&self) -> usize {
        self.links.values().map(VecDeque::len).sum()
    }

    /// Advances the logical clock by one second.
    pub fn tick(&mut self) {
        self.clock += 1;
    }

    pub fn set_byzantine(&mut self, node_id: &str, mode: Option<Byzantine>) -> Result<(), SimError> {
        self.node_mut(node_id)?.byzantine = mode;
        Ok(())
    }

    fn connected(&self, a: &str, b: &str) -> bool {
        match &self.partition {
            None => true,
            Some(groups) => groups.iter().any(|g| g.contains(a) && g.contains(b)),
        }
    }

    fn peers(&self, node_id: &str) -> Vec<String> {
        self.nodes.keys().filter(|k| *k != node_id).cloned().collect()
    }

    fn send(&mut self, to: &str, message: NetMessage) {
        let from = message.sender().to_string();
        if !self.connected(&from, to) {
            self.stats.dropped += 1;
            return;
        }
        self.links.entry((from, to.to_string())).or_default().push_back(message);
    }

    fn broadcast(&mut self, from: &str, message: NetMessage, except: Option<&str>) {
        for peer in self.peers(from) {
            if Some(peer.as_str()) != except {
                self.send(&peer, message.clone());
            }
        }
    }

    /// Splits the nodes into groups; traffic between groups is dropped,
    /// including messages already queued.
    pub fn partition(&mut self, groups: Vec<Vec<String>>) -> Result<(), SimError> {
        let mut seen = BTreeSet::new();
        let mut sets = Vec::with_capacity(groups.len());
        for group in groups {
            if group.is_empty() {
                return Err(SimError::BadPartition("empty group".into()));
            }
            let mut set = BTreeSet::new();
            for id in group {
                self.node(&id)?;
                if !seen.insert(id.clone()) {
                    return Err(SimError::BadPartition(format!("{id} appears in more than one group")));
                }
                set.insert(id);
            }
            sets.push(set);
        }
        let missing: Vec<&String> = self.nodes.keys().filter(|k| !seen.contains(*k)).collect();
        if !missing.is_empty() {
            return Err(SimError::BadPartition(format!("nodes not assigned to any group: {missing:?}")));
        }
        self.partition = Some(sets);
        Ok(())
    }

    pub fn heal(&mut self) {
        self.partition = None;
    }

    /// Takes a node offline. Its replica survives; its event pool and
    /// inbound queues do not.
    pub fn crash(&mut self, node_id: &str) -> Result<(), SimError> {
        let node = self.node_mut(node_id)?;
        node.online = false;
        node.pending.clear();
        let dropped: usize = self.links.iter_mut().filter(|((_, to), _)| to == node_id).map(|(_, q)| std::mem::take(q).len()).sum();
        self.stats.dropped += dropped as u64;
        Ok(())
    }

    pub fn restart(&mut self, node_id: &str) -> Result<(), SimError> {
        self.node_mut(node_id)?.online = true;
        Ok(())
    }

    /// Creates `count` fresh events at `node_id` and gossips them.
    pub fn submit(&mut self, node_id: &str, count: usize) -> Result<Vec<Hash32>, SimError> {
        self.online_node(node_id)?;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let mut nonce = [0u8; 8];
            self.rng.fill_bytes(&mut nonce);
            self.event_seq += 1;
            let payload: Payload = [
                ("origin".to_string(), Value::Str(node_id.to_string())),
                ("seq".to_string(), Value::Int(self.event_seq as i64)),
                ("nonce".to_string(), Value::Str(hex::encode(nonce))),
            ]
            .into_iter()
            .collect();
            let event = LedgerEvent::new(EventKind::TokenMinted, payload, node_id, self.clock);
            ids.push(event.event_id());
            self.node_mut(node_id)?.pending.push(event.clone());
            if self.node(node_id)?.byzantine != Some(Byzantine::Withhold) {
                self.broadcast(node_id, NetMessage::EventSubmit { sender: node_id.to_string(), event }, None);
            }
        }
        Ok(ids)
    }

    /// Seals up to [`BATCH_SIZE`] pooled events into a block on the node's
    /// tip and announces it. Returns `None` when the pool is empty.
    pub fn mine(&mut self, node_id: &str) -> Result<Option<Block>, SimError> {
        let difficulty = self.difficulty;
        let clock = self.clock;
        let node = self.online_node(node_id)?;
        let batch: Vec<LedgerEvent> = node.pending.iter().take(BATCH_SIZE).cloned().collect();
        if batch.is_empty() {
            return Ok(None);
        }
        let tip = node.chain.tip().header().clone();
        let timestamp = clock.max(tip.timestamp());
        let block = mine_block(&tip, batch.clone(), difficulty, timestamp)?;
        node.chain.append(block.clone())?;
        node.remove_pending_in_chain();
        let byzantine = node.byzantine;
        self.stats.mined += 1;

        let sender = node_id.to_string();
        match byzantine {
            None => self.broadcast(node_id, NetMessage::BlockAnnounce { sender, block: block.clone() }, None),
            Some(Byzantine::Withhold) => {}
            Some(Byzantine::PayloadTamper) => {
                let forged = tamper_block(&block);
                self.broadcast(node_id, NetMessage::BlockAnnounce { sender, block: forged }, None);
            }
            Some(Byzantine::Equivocate) => {
                let mut reordered = batch;
                reordered.reverse();
                let twin = mine_block(&tip, reordered, difficulty, timestamp + 1)?;
                for (i, peer) in self.peers(node_id).into_iter().enumerate() {
                    let block = if i % 2 == 0 { block.clone() } else { twin.clone() };
                    self.send(&peer, NetMessage::BlockAnnounce { sender: sender.clone(), block });
                }
            }
        }
        Ok(Some(block))
    }

    /// Delivers every message currently queued on `from -> to`, in order.
    pub fn deliver(&mut self, from: &str, to: &str) -> Result<usize, SimError> {
        self.node(from)?;
        self.node(to)?;
        let key = (from.to_string(), to.to_string());
        let queued = self.links.get(&key).map_or(0, VecDeque::len);
        for _ in 0..queued {
            let message = self.links.get_mut(&key).and_then(VecDeque::pop_front).expect("counted above");
            self.handle(to, message);
        }
        Ok(queued)
    }

    /// Delivers one message per non-empty link in link order, repeatedly,
    /// until every queue is empty.
    pub fn deliver_all(&mut self) -> Result<usize, SimError> {
        let mut delivered = 0;
        loop {
            let keys: Vec<(String, String)> = self.links.iter().filter(|(_, q)| !q.is_empty()).map(|(k, _)| k.clone()).collect();
            if keys.is_empty() {
                return Ok(delivered);
            }
            for (from, to) in keys {
                let message = self.links.get_mut(&(from, to.clone())).and_then(VecDeque::pop_front).expect("non-empty");
                self.handle(&to, message);
                delivered += 1;
            }
            if delivered > DELIVERY_LIMIT {
                return Err(SimError::Unsettled(delivered));
            }
        }
    }

    /// One full sync round: every online node asks every peer for its chain,
    /// then all traffic is delivered.
    pub fn sync(&mut self) -> Result<usize, SimError> {
        let online: Vec<String> = self.nodes.values().filter(|n| n.online).map(|n| n.node_id.clone()).collect();
        for id in &online {
            for peer in self.peers(id) {
                self.send(&peer, NetMessage::ChainRequest { sender: id.clone() });
            }
        }
        self.deliver_all()
    }

    fn handle(&mut self, to: &str, message: NetMessage) {
        let from = message.sender().to_string();
        let reachable = self.connected(&from, to);
        let Some(node) = self.nodes.get_mut(to) else { return };
        if !node.online || !reachable {
            self.stats.dropped += 1;
            return;
        }
        self.stats.delivered += 1;
        let relays = node.byzantine != Some(Byzantine::Withhold);
        match message {
            NetMessage::EventSubmit { event, .. } => {
                if node.knows(&event) {
                    return;
                }
                node.pending.push(event.clone());
                if relays {
                    self.broadcast(to, NetMessage::EventSubmit { sender: to.to_string(), event }, Some(&from));
                }
            }
            NetMessage::BlockAnnounce { block, .. } => {
                if node.chain.blocks().iter().any(|b| b.hash() == block.hash()) {
                    return;
                }
                if block.header().prev_hash() == node.chain.tip().hash() {
                    match node.chain.append(block.clone()) {
                        Ok(()) => {
                            node.remove_pending_in_chain();
                            if relays {
                                let outgoing = self.outgoing_block(to, block);
                                self.broadcast(to, NetMessage::BlockAnnounce { sender: to.to_string(), block: outgoing }, Some(&from));
                            }
                        }
                        Err(_) => node.rejected += 1,
                    }
                } else {
                    self.send(&from, NetMessage::ChainRequest { sender: to.to_string() });
                }
            }
            NetMessage::ChainRequest { .. } => {
                if relays {
                    let blocks = self.outgoing_chain(to);
                    self.send(&from, NetMessage::ChainResponse { sender: to.to_string(), blocks });
                }
            }
            NetMessage::ChainResponse { blocks, .. } => {
                let candidate = match Chain::from_blocks(blocks) {
                    Ok(c) => c,
                    Err(_) => {
                        node.rejected += 1;
                        return;
                    }
                };
                if rank(candidate.blocks()) > rank(node.chain.blocks()) {
                    node.adopt(candidate);
                    if relays {
                        let tip = self.outgoing_block(to, self.nodes[to].chain.tip().clone());
                        self.broadcast(to, NetMessage::BlockAnnounce { sender: to.to_string(), block: tip }, Some(&from));
                    }
                } else if rank(candidate.blocks()) < rank(node.chain.blocks()) && relays {
                    // The sender is behind; offer our tip so it can catch up.
                    let tip = node.chain.tip().clone();
                    let tip = self.outgoing_block(to, tip);
                    self.send(&from, NetMessage::BlockAnnounce { sender: to.to_string(), block: tip });
                }
            }
        }
    }

    fn outgoing_block(&self, node_id: &str, block: Block) -> Block {
        match self.nodes[node_id].byzantine {
            Some(Byzantine::PayloadTamper) => tamper_block(&block),
            _ => block,
        }
    }

    fn outgoing_chain(&self, node_id: &str) -> Vec<Block> {
        let mut blocks = self.nodes[node_id].blocks().to_vec();
        if self.nodes[node_id].byzantine == Some(Byzantine::PayloadTamper) && blocks.len() > 1 {
            let last = blocks.pop().expect("non-empty");
            blocks.push(tamper_block(&last));
        }
        blocks
    }

    pub fn reports(&self) -> Vec<NodeReport> {
        self.nodes
            .values()
            .map(|n| NodeReport {
                node_id: n.node_id.clone(),
                online: n.online,
                byzantine: n.byzantine,
                height: n.chain.height(),
                total_work: n.total_work(),
                tip: n.chain.tip().hash(),
                pending: n.pending.len(),
                digest: n.digest(),
            })
            .collect()
    }

    /// Hash over every node's report; equal networks give equal digests.
    pub fn digest(&self) -> Hash32 {
        let mut bytes = Vec::new();
        for r in self.reports() {
            bytes.extend_from_slice(r.node_id.as_bytes());
            bytes.push(0);
            bytes.push(r.online as u8);
            bytes.extend_from_slice(r.digest.as_bytes());
            bytes.extend_from_slice(&(r.pending as u64).to_be_bytes());
        }
        Hash32::digest(&bytes)
    }
}

/// Rewrites the first event's payload in place, keeping its stated id.
fn tamper_block(block: &Block) -> Block {
    let mut json: serde_json::Value = serde_json::from_slice(&block.to_canonical()).expect("canonical blocks are JSON");
    if let Some(payload) = json["events"][0]["payload"].as_object_mut() {
        payload.insert("tampered".into(), serde_json::Value::Bool(true));
    }
    serde_json::from_value(json).expect("structure is unchanged")
}
