//! Anonymous voting rounds gated by RSA blind signatures.
//!
//! Each round has its own registrar key. An eligible voter picks a random
//! 16-byte serial, blinds its digest and asks the registrar for a signature;
//! the registrar checks eligibility, signs once per voter and logs only the
//! voter's address. The voter unblinds and later casts `(serial, signature,
//! option)` without credentials. The ledger sees serials, never voters; the
//! issuance log sees voters, never serials.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::canonical::canonical_hash;
use crate::hash::{decode_lower_hex, Hash32};
use crate::identity::Address;
use crate::ledger::{Block, EventKind, LedgerEvent, Timestamp};
use crate::rsa_blind::{self, biguint_hex, RsaError, RsaKeyPair, RsaPublicKey};

/// Option name whose share decides approval-style rounds.
pub const APPROVE: &str = "approve";
pub const DEFAULT_QUORUM: u64 = 10;
pub const DEFAULT_THRESHOLD: Threshold = Threshold { num: 3, den: 5 };

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VoteError {
    #[error("round {0} not found")]
    UnknownRound(Hash32),
    #[error("round is closed")]
    RoundClosed,
    #[error("voter is not eligible for this round")]
    NotEligible,
    #[error("voter already received a ballot token for this round")]
    AlreadyIssued,
    #[error("ballot signature does not verify")]
    InvalidSignature,
    #[error("ballot serial was already used")]
    DuplicateSerial,
    #[error("option {0:?} is not on the ballot")]
    UnknownOption(String),
    #[error("invalid round: {0}")]
    InvalidRound(String),
    #[error("caller is not allowed to perform this action")]
    Unauthorized,
    #[error(transparent)]
    Crypto(#[from] RsaError),
}

/// Approval ratio as an exact fraction in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub num: u64,
    pub den: u64,
}

impl Threshold {
    pub fn new(num: u64, den: u64) -> Result<Self, VoteError> {
        if den == 0 || num == 0 || num > den {
            return Err(VoteError::InvalidRound("threshold must lie in (0, 1]".into()));
        }
        Ok(Threshold { num, den })
    }

    /// `part / whole >= num / den`, in integers.
    pub fn met_by(&self, part: u64, whole: u64) -> bool {
        whole > 0 && (part as u128) * (self.den as u128) >= (self.num as u128) * (whole as u128)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl std::str::FromStr for Threshold {
    type Err = VoteError;

    /// Accepts `a/b` or a decimal such as `0.6`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VoteError::InvalidRound(format!("cannot parse threshold {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            return Threshold::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let num = format!("{int}{frac}").parse::<u64>().map_err(|_| bad())?;
        let g = num_integer::gcd(num, den).max(1);
        Threshold::new(num / g, den / g)
    }
}

/// A voter-chosen single-use ballot serial.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Serial(pub [u8; 16]);

impl Serial {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut s = [0u8; 16];
        rng.fill_bytes(&mut s);
        Serial(s)
    }
}

impl fmt::Debug for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Serial({})", hex::encode(self.0))
    }
}

impl Serialize for Serial {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Serial {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        decode_lower_hex(&s)
            .and_then(|b| <[u8; 16]>::try_from(b).ok())
            .map(Serial)
            .ok_or_else(|| serde::de::Error::custom("expected 32 lowercase hex characters"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallotToken {
    pub serial: Serial,
    #[serde(with = "biguint_hex")]
    pub signature: BigUint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundState {
    Open,
    Closed,
}

/// Parameters supplied when opening a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundSpec {
    pub subject_hash: Hash32,
    pub options: Vec<String>,
    pub eligible_voters: BTreeSet<Address>,
    pub quorum: u64,
    pub threshold: Threshold,
}

impl RoundSpec {
    pub fn approval(subject_hash: Hash32, eligible_voters: impl IntoIterator<Item = Address>) -> Self {
        RoundSpec {
            subject_hash,
            options: vec![APPROVE.into(), "reject".into()],
            eligible_voters: eligible_voters.into_iter().collect(),
            quorum: DEFAULT_QUORUM,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), VoteError> {
        if self.options.len() < 2 {
            return Err(VoteError::InvalidRound("at least two options are required".into()));
        }
        let distinct: BTreeSet<&String> = self.options.iter().collect();
        if distinct.len() != self.options.len() || self.options.iter().any(|o| o.trim().is_empty()) {
            return Err(VoteError::InvalidRound("options must be distinct and non-empty".into()));
        }
        if self.quorum == 0 {
            return Err(VoteError::InvalidRound("quorum must be at least 1".into()));
        }
        Threshold::new(self.threshold.num, self.threshold.den)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TallyResult {
    pub round_id: Hash32,
    pub subject_hash: Hash32,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub passing: bool,
}

impl TallyResult {
    pub fn digest(&self) -> Hash32 {
        canonical_hash(self).expect("tally is canonical")
    }
}

/// Quorum and threshold rule. Approval-style rounds (with an `approve`
/// option) pass on the approve share; other rounds pass when a single
/// leading option reaches the threshold.
pub fn is_passing(options: &[String], counts: &BTreeMap<String, u64>, total: u64, quorum: u64, threshold: Threshold) -> bool {
    if total < quorum || total == 0 {
        return false;
    }
    if options.iter().any(|o| o == APPROVE) {
        return threshold.met_by(counts.get(APPROVE).copied().unwrap_or(0), total);
    }
    let mut sorted: Vec<u64> = counts.values().copied().collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let top = sorted.first().copied().unwrap_or(0);
    let unique = sorted.get(1).is_none_or(|&second| second < top);
    unique && threshold.met_by(top, total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRoundOpenedBody {
    pub round_id: Hash32,
    pub subject_hash: Hash32,
    pub options: Vec<String>,
    pub registrar: RsaPublicKey,
    pub eligible_voters: BTreeSet<Address>,
    pub quorum: u64,
    pub threshold: Threshold,
    pub opened_by: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteCastBody {
    pub round_id: Hash32,
    pub serial: Serial,
    pub option: String,
    #[serde(with = "biguint_hex")]
    pub signature: BigUint,
}

/// One registrar issuance entry. Deliberately carries no serial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuanceRecord {
    pub voter: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotingRound {
    pub round_id: Hash32,
    pub subject_hash: Hash32,
    pub options: Vec<String>,
    pub registrar: RsaPublicKey,
    pub eligible_voters: BTreeSet<Address>,
    pub quorum: u64,
    pub threshold: Threshold,
    pub opened_by: String,
    pub opened_at: Timestamp,
    pub state: RoundState,
    pub used_serials: BTreeSet<Serial>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<TallyResult>,
}

impl VotingRound {
    fn from_opened(body: VoteRoundOpenedBody, opened_at: Timestamp) -> Self {
        let counts = body.options.iter().map(|o| (o.clone(), 0)).collect();
        VotingRound {
            round_id: body.round_id,
            subject_hash: body.subject_hash,
            options: body.options,
            registrar: body.registrar,
            eligible_voters: body.eligible_voters,
            quorum: body.quorum,
            threshold: body.threshold,
            opened_by: body.opened_by,
            opened_at,
            state: RoundState::Open,
            used_serials: BTreeSet::new(),
            counts,
            tally: None,
        }
    }

    pub fn current_tally(&self) -> TallyResult {
        let total = self.counts.values().sum();
        TallyResult {
            round_id: self.round_id,
            subject_hash: self.subject_hash,
            counts: self.counts.clone(),
            total,
            passing: is_passing(&self.options, &self.counts, total, self.quorum, self.threshold),
        }
    }

    pub fn ballot_digest(&self, serial: &Serial) -> BigUint {
        rsa_blind::ballot_digest(&self.round_id, &serial.0, &self.registrar)
    }

    pub fn is_open(&self) -> bool {
        self.state == RoundState::Open
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VoteBook {
    rounds: BTreeMap<Hash32, VotingRound>,
    #[serde(skip)]
    registrar_keys: BTreeMap<Hash32, RsaKeyPair>,
    issued: BTreeMap<Hash32, BTreeSet<IssuanceRecord>>,
}

impl VoteBook {
    pub fn round(&self, id: &Hash32) -> Option<&VotingRound> {
        self.rounds.get(id)
    }

    pub fn rounds(&self) -> impl Iterator<Item = &VotingRound> {
        self.rounds.values()
    }

    pub fn require(&self, id: &Hash32) -> Result<&VotingRound, VoteError> {
        self.rounds.get(id).ok_or(VoteError::UnknownRound(*id))
    }

    /// The registrar's issuance log for a round.
    pub fn issuance_log(&self, id: &Hash32) -> Vec<IssuanceRecord> {
        self.issued.get(id).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn registrar_key(&self, id: &Hash32) -> Option<&RsaKeyPair> {
        self.registrar_keys.get(id)
    }

    pub fn prepare_open(
        &self,
        spec: &RoundSpec,
        registrar: &RsaKeyPair,
        opened_by: &str,
        now: Timestamp,
    ) -> Result<VoteRoundOpenedBody, VoteError> {
        spec.validate()?;
        registrar.check()?;
        #[derive(Serialize)]
        struct IdContent<'a> {
            spec: &'a RoundSpec,
            registrar: RsaPublicKey,
            opened_by: &'a str,
            opened_at: Timestamp,
        }
        let round_id = canonical_hash(&IdContent { spec, registrar: registrar.public(), opened_by, opened_at: now })
            .expect("round content is canonical");
        if self.rounds.contains_key(&round_id) {
            return Err(VoteError::InvalidRound("an identical round already exists".into()));
        }
        Ok(VoteRoundOpenedBody {
            round_id,
            subject_hash: spec.subject_hash,
            options: spec.options.clone(),
            registrar: registrar.public(),
            eligible_voters: spec.eligible_voters.clone(),
            quorum: spec.quorum,
            threshold: spec.threshold,
            opened_by: opened_by.to_string(),
        })
    }

    pub fn install_key(&mut self, round_id: Hash32, key: RsaKeyPair) {
        self.registrar_keys.insert(round_id, key);
    }

    /// Registrar side: checks eligibility and signs a blinded ballot digest.
    /// Does not record the issuance; see `record_issuance`.
    pub fn sign_request(&self, round_id: &Hash32, voter: &Address, blinded: &BigUint) -> Result<BigUint, VoteError> {
        let round = self.require(round_id)?;
        if !round.is_open() {
            return Err(VoteError::RoundClosed);
        }
        if !round.eligible_voters.contains(voter) {
            return Err(VoteError::NotEligible);
        }
        if self.issued.get(round_id).is_some_and(|s| s.contains(&IssuanceRecord { voter: *voter })) {
            return Err(VoteError::AlreadyIssued);
        }
        let key = self
            .registrar_keys
            .get(round_id)
            .ok_or_else(|| VoteError::InvalidRound("registrar key unavailable on this node".into()))?;
        Ok(key.sign_blinded(blinded)?)
    }

    pub fn record_issuance(&mut self, round_id: Hash32, voter: Address) {
        self.issued.entry(round_id).or_default().insert(IssuanceRecord { voter });
    }

    pub fn check_cast(&self, round_id: &Hash32, ballot: &BallotToken, option: &str) -> Result<(), VoteError> {
        let round = self.require(round_id)?;
        if !round.is_open() {
            return Err(VoteError::RoundClosed);
        }
        if !round.options.iter().any(|o| o == option) {
            return Err(VoteError::UnknownOption(option.to_string()));
        }
        if !rsa_blind::verify(&round.ballot_digest(&ballot.serial), &ballot.signature, &round.registrar) {
            return Err(VoteError::InvalidSignature);
        }
        if round.used_serials.contains(&ballot.serial) {
            return Err(VoteError::DuplicateSerial);
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &LedgerEvent) {
        match event.kind() {
            EventKind::VoteRoundOpened => {
                if let Ok(body) = event.body::<VoteRoundOpenedBody>() {
                    self.rounds.insert(body.round_id, VotingRound::from_opened(body, event.timestamp()));
                }
            }
            EventKind::VoteCast => {
                if let Ok(body) = event.body::<VoteCastBody>() {
                    if let Some(round) = self.rounds.get_mut(&body.round_id) {
                        if round.used_serials.insert(body.serial) {
                            *round.counts.entry(body.option).or_default() += 1;
                        }
                    }
                }
            }
            EventKind::VoteRoundClosed => {
                if let Ok(tally) = event.body::<TallyResult>() {
                    if let Some(round) = self.rounds.get_mut(&tally.round_id) {
                        round.state = RoundState::Closed;
                        round.tally = Some(tally);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Recomputes a round's tally from ledger events alone. `None` if the round
/// was never opened on this chain.
pub fn recount(blocks: &[Block], round_id: &Hash32) -> Option<TallyResult> {
    let mut opened: Option<VoteRoundOpenedBody> = None;
    let mut serials = BTreeSet::new();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for event in blocks.iter().flat_map(|b| b.events()) {
        match event.kind() {
            EventKind::VoteRoundOpened => {
                if let Ok(body) = event.body::<VoteRoundOpenedBody>() {
                    if &body.round_id == round_id {
                        counts = body.options.iter().map(|o| (o.clone(), 0)).collect();
                        opened = Some(body);
                    }
                }
            }
            EventKind::VoteCast => {
                let (Some(round), Ok(body)) = (&opened, event.body::<VoteCastBody>()) else { continue };
                if &body.round_id != round_id {
                    continue;
                }
                let digest = rsa_blind::ballot_digest(round_id, &body.serial.0, &round.registrar);
                let valid = rsa_blind::verify(&digest, &body.signature, &round.registrar);
                if valid && counts.contains_key(&body.option) && serials.insert(body.serial) {
                    *counts.entry(body.option).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    let round = opened?;
    let total = counts.values().sum();
    Some(TallyResult {
        round_id: *round_id,
        subject_hash: round.subject_hash,
        passing: is_passing(&round.options, &counts, total, round.quorum, round.threshold),
        counts,
        total,
    })
}

/// Voter-side state for obtaining one ballot token. The blinding factor
/// never leaves this struct.
#[derive(Debug, Clone)]
pub struct BallotRequest {
    round_id: Hash32,
    key: RsaPublicKey,
    serial: Serial,
    blinding: BigUint,
    blinded: BigUint,
}

impl BallotRequest {
    pub fn new<R: RngCore + ?Sized>(round_id: Hash32, key: RsaPublicKey, rng: &mut R) -> Result<Self, VoteError> {
        loop {
            let serial = Serial::random(rng);
            let digest = rsa_blind::ballot_digest(&round_id, &serial.0, &key);
            if num_traits::Zero::is_zero(&digest) {
                continue;
            }
            let blinding = rsa_blind::random_blinding(&key, rng);
            let blinded = rsa_blind::blind(&digest, &blinding, &key)?;
            return Ok(BallotRequest { round_id, key, serial, blinding, blinded });
        }
    }

    /// The only value sent to the registrar.
    pub fn blinded(&self) -> &BigUint {
        &self.blinded
    }

    pub fn serial(&self) -> Serial {
        self.serial
    }

    /// Unblinds the registrar's answer and checks the resulting signature.
    pub fn finish(self, signed_blinded: &BigUint) -> Result<BallotToken, VoteError> {
        let signature = rsa_blind::unblind(signed_blinded, &self.blinding, &self.key)?;
        let digest = rsa_blind::ballot_digest(&self.round_id, &self.serial.0, &self.key);
        if !rsa_blind::verify(&digest, &signature, &self.key) {
            return Err(VoteError::InvalidSignature);
        }
        Ok(BallotToken { serial: self.serial, signature })
    }
}
