//! Acceptance suite: runs every primary criterion and prints one PASS or
//! FAIL line each. Exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use axum::http::StatusCode;
use common::*;
use medalchain::service::{Service, ServiceError};
use medalchain::storage::{StorageError, HEADER_LEN, LOG_FILE};
use medalchain_core::canonical::{canonical_decode, canonical_encode, Value as CanonicalValue};
use medalchain_core::certification::{ApplicationAction, ApplicationPayload, ApplicationState, ReviewChecks, Verdict};
use medalchain_core::identity::{Credential, Role};
use medalchain_core::ledger::{mine_block, validate_chain, Block, EventKind, LedgerEvent};
use medalchain_core::merkle::{merkle_root, prove, verify_proof, MerkleProof, Side, Sibling};
use medalchain_core::registry::{DefinitionMetadata, TokenAction, TokenStatus};
use medalchain_core::rsa_blind::{ballot_digest, blind, keygen, random_blinding, unblind, verify, SERVICE_BITS};
use medalchain_core::vote::{recount, BallotRequest, VoteCastBody};
use medalchain_core::Hash32;
use medalchain_sim::{random_scenario, Network, ScenarioShape};
use num_bigint::{BigUint, RandBigInt};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 9] = [
        ("tamper-evidence", tamper_evidence),
        ("merkle-oracle", merkle_oracle),
        ("pow-statistics", pow_statistics),
        ("blind-signatures", blind_signatures),
        ("voting-integrity", voting_integrity),
        ("certification-end-to-end", certification_end_to_end),
        ("state-machines", state_machines),
        ("network-convergence", network_convergence),
        ("crash-replay", crash_replay),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64()),
            Err(panic) => {
                failed += 1;
                let message = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name}: {message}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

// ---- tamper evidence -------------------------------------------------------

fn minted(seq: u64) -> LedgerEvent {
    let payload: BTreeMap<String, CanonicalValue> =
        [("token_id".to_string(), CanonicalValue::Str(format!("t{seq}"))), ("seq".to_string(), CanonicalValue::Int(seq as i64))]
            .into_iter()
            .collect();
    LedgerEvent::new(EventKind::TokenMinted, payload, "edu", 1_000 + seq)
}

/// Every single-byte substitution of an encoded genesis + 3 block chain
/// holding 8 events must fail to decode or fail validation.
fn tamper_evidence() -> String {
    let mut chain = vec![Block::genesis()];
    let mut seq = 0;
    for (b, n) in [3usize, 3, 2].into_iter().enumerate() {
        let events = (0..n)
            .map(|_| {
                seq += 1;
                minted(seq)
            })
            .collect();
        let parent = chain.last().unwrap().header().clone();
        chain.push(mine_block(&parent, events, 4, 2_000 + b as u64).unwrap());
    }
    assert_eq!(chain.iter().map(|b| b.events().len()).sum::<usize>(), 8);
    let bytes = canonical_encode(&chain).unwrap();
    let decoded: Vec<Block> = canonical_decode(&bytes).unwrap();
    validate_chain(&decoded).unwrap();

    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let positions: Vec<usize> = (0..bytes.len()).collect();
    let (false_passes, decoded_mutants) = std::thread::scope(|s| {
        let handles: Vec<_> = positions
            .chunks(bytes.len().div_ceil(threads))
            .map(|chunk| {
                let bytes = &bytes;
                s.spawn(move || {
                    let mut mutant = bytes.clone();
                    let (mut passes, mut decoded) = (Vec::new(), 0usize);
                    for &i in chunk {
                        for v in 0..=255u8 {
                            if v == bytes[i] {
                                continue;
                            }
                            mutant[i] = v;
                            if let Ok(blocks) = canonical_decode::<Vec<Block>>(&mutant) {
                                decoded += 1;
                                if validate_chain(&blocks).is_ok() {
                                    passes.push((i, v));
                                }
                            }
                        }
                        mutant[i] = bytes[i];
                    }
                    (passes, decoded)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).fold((Vec::new(), 0), |(mut p, d), (q, e)| {
            p.extend(q);
            (p, d + e)
        })
    });
    assert!(false_passes.is_empty(), "mutations accepted at (offset, byte): {:?}", &false_passes[..false_passes.len().min(10)]);
    format!(
        "{} bytes x 255 = {} mutants, {} decoded and rejected by validation, 0 accepted",
        bytes.len(),
        bytes.len() * 255,
        decoded_mutants
    )
}

// ---- merkle ----------------------------------------------------------------

fn sha(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Recursive reference: duplicate the last node of an odd level, pair, recurse.
fn reference_root(level: &[[u8; 32]]) -> [u8; 32] {
    match level.len() {
        0 => sha(b""),
        1 => level[0],
        _ => reference_root(&reference_level(level)),
    }
}

fn reference_level(level: &[[u8; 32]]) -> Vec<[u8; 32]> {
    let mut padded = level.to_vec();
    if padded.len() % 2 == 1 {
        padded.push(*padded.last().unwrap());
    }
    padded.chunks(2).map(|p| sha(&[p[0], p[1]].concat())).collect()
}

/// Reference proof: the sibling at each level, tagged with the side it sits on.
fn reference_proof(level: &[[u8; 32]], index: usize) -> Vec<([u8; 32], bool)> {
    if level.len() <= 1 {
        return Vec::new();
    }
    let mut padded = level.to_vec();
    if padded.len() % 2 == 1 {
        padded.push(*padded.last().unwrap());
    }
    let sibling_on_left = index % 2 == 1;
    let sibling = padded[index ^ 1];
    let mut rest = vec![(sibling, sibling_on_left)];
    rest.extend(reference_proof(&reference_level(level), index / 2));
    rest
}

fn merkle_oracle() -> String {
    let mut checks = 0;
    for n in 0..=16usize {
        let leaves: Vec<Hash32> = (0..n).map(|i| Hash32::digest(format!("leaf-{n}-{i}").as_bytes())).collect();
        let raw: Vec<[u8; 32]> = leaves.iter().map(|h| h.0).collect();
        let root = merkle_root(&leaves);
        assert_eq!(root.0, reference_root(&raw), "root for {n} leaves");
        checks += 1;
        for i in 0..n {
            let expected = MerkleProof {
                leaf_index: i as u64,
                siblings: reference_proof(&raw, i)
                    .into_iter()
                    .map(|(h, left)| Sibling { side: if left { Side::Left } else { Side::Right }, hash: Hash32(h) })
                    .collect(),
            };
            let proof = prove(&leaves, i).unwrap();
            assert_eq!(proof, expected, "proof for leaf {i} of {n}");
            assert!(verify_proof(&leaves[i], &proof, &root));
            checks += 1;
        }
        assert!(prove(&leaves, n).is_err());
    }
    format!("{checks} roots and proofs over 0..=16 leaves agree with the recursive reference")
}

// ---- proof of work ---------------------------------------------------------

fn leading_zero_bits(hash: &[u8; 32]) -> u32 {
    let mut bits = 0;
    for byte in hash {
        if *byte == 0 {
            bits += 8;
        } else {
            return bits + byte.leading_zeros();
        }
    }
    bits
}

fn pow_statistics() -> String {
    const DIFFICULTY: u32 = 8;
    let mut parent = Block::genesis().header().clone();
    let mut attempts = 0u64;
    for i in 0..200u64 {
        let block = mine_block(&parent, vec![minted(10_000 + i)], DIFFICULTY, 5_000 + i).unwrap();
        let recomputed = sha(&canonical_encode(block.header()).unwrap());
        assert_eq!(recomputed, block.hash().0, "stored hash matches the header at height {}", block.height());
        assert!(leading_zero_bits(&recomputed) >= DIFFICULTY, "block {} misses the target", block.height());
        attempts += block.header().nonce() + 1;
        parent = block.header().clone();
    }
    let mean = attempts as f64 / 200.0;
    assert!((128.0..=768.0).contains(&mean), "mean attempts {mean}");
    format!("200 blocks at difficulty {DIFFICULTY}, all meet the target, mean attempts {mean:.1} (expected 256)")
}

// ---- blind signatures ------------------------------------------------------

fn blind_signatures() -> String {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for i in 0..200 {
        let bits = rng.gen_range(32..=256);
        let key = keygen(bits, &mut rng).unwrap();
        let public = key.public();
        let m = rng.gen_biguint_range(&BigUint::from(1u32), &key.n);
        let r = random_blinding(&public, &mut rng);
        let signed = key.sign_blinded(&blind(&m, &r, &public).unwrap()).unwrap();
        let s = unblind(&signed, &r, &public).unwrap();
        assert!(verify(&m, &s, &public), "instance {i} at {bits} bits");
    }
    let key = keygen(SERVICE_BITS, &mut rng).unwrap();
    let public = key.public();
    let round = Hash32::digest(b"acceptance round");
    let mut accepted = 0;
    for _ in 0..100 {
        let mut serial = [0u8; 16];
        rng.fill_bytes(&mut serial);
        let forged = rng.gen_biguint_below(&key.n);
        if verify(&ballot_digest(&round, &serial, &public), &forged, &public) {
            accepted += 1;
        }
    }
    assert_eq!(accepted, 0);
    format!("200/200 round trips verify at 32..=256 bits; 0/100 forgeries accepted at {SERVICE_BITS} bits")
}

// ---- voting ----------------------------------------------------------------

async fn served_chain(h: &Harness) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::new();
    loop {
        let page: Vec<Block> = serde_json::from_value(h.get(&format!("/v1/chain/blocks?from={}", blocks.len())).await.ok()).unwrap();
        if page.is_empty() {
            return blocks;
        }
        blocks.extend(page);
    }
}

/// Opens a 12-voter round (quorum 10, threshold 3/5) and casts 8 approvals.
async fn scripted_round(w: &World, subject: Hash32) -> (Hash32, Value, Vec<Value>) {
    let voters: BTreeSet<Hash32> = w.users.iter().map(address).collect();
    let spec = json!({ "subject_hash": subject, "eligible_voters": voters, "quorum": 10, "threshold": { "num": 3, "den": 5 } });
    let round = hash(&w.h.post("/v1/rounds", spec, "edu", &w.platform).await.ok()["round_id"]);
    let mut choices = vec!["approve"; 8];
    choices.extend(["reject"; 4]);
    let casts = vote(w, round, &choices).await;
    let tally = w.h.post(&format!("/v1/rounds/{round}/close"), json!({}), "edu", &w.platform).await.ok();
    (round, tally, casts)
}

fn voting_integrity() -> String {
    runtime().block_on(async {
        let w = world(12).await;
        let (round, tally, casts) = scripted_round(&w, Hash32::digest(b"subject")).await;
        assert_eq!(tally["passing"], true, "{tally}");
        assert_eq!(tally["total"], 12);
        assert_eq!(tally["counts"], json!({ "approve": 8, "reject": 4 }));

        let mut duplicates = 0;
        for cast in &casts {
            let r = w.h.post_raw(&format!("/v1/rounds/{round}/cast"), cast, &[]).await;
            assert!(r.status == StatusCode::CONFLICT && (r.code() == "DuplicateSerial" || r.code() == "RoundClosed"), "{}", r.body);
            duplicates += 1;
        }

        // A second round, still open, must reject a replayed serial as a duplicate.
        let w2 = world(12).await;
        let voters: BTreeSet<Hash32> = w2.users.iter().map(address).collect();
        let spec = json!({ "subject_hash": Hash32::digest(b"other"), "eligible_voters": voters, "quorum": 10, "threshold": { "num": 3, "den": 5 } });
        let open = hash(&w2.h.post("/v1/rounds", spec, "edu", &w2.platform).await.ok()["round_id"]);
        let cast = vote(&w2, open, &["approve"]).await.remove(0);
        let mut replay = cast.clone();
        replay["option"] = json!("reject");
        w2.h.post_raw(&format!("/v1/rounds/{open}/cast"), &replay, &[]).await.expect_err(StatusCode::CONFLICT, "DuplicateSerial");

        // Independent recount from the served ledger.
        let chain = served_chain(&w.h).await;
        validate_chain(&chain).unwrap();
        let info: medalchain_core::vote::VotingRound = serde_json::from_value(w.h.get(&format!("/v1/rounds/{round}")).await.ok()).unwrap();
        let mut serials = BTreeSet::new();
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for event in chain.iter().flat_map(|b| b.events()).filter(|e| e.kind() == EventKind::VoteCast) {
            let body: VoteCastBody = event.body().unwrap();
            if body.round_id != round {
                continue;
            }
            assert!(verify(&ballot_digest(&round, &body.serial.0, &info.registrar), &body.signature, &info.registrar));
            assert!(serials.insert(body.serial), "serial counted twice on the ledger");
            *counts.entry(body.option).or_default() += 1;
        }
        assert_eq!(serde_json::to_value(&counts).unwrap(), tally["counts"]);
        let ledger_tally = recount(&chain, &round).unwrap();
        assert_eq!(serde_json::to_value(&ledger_tally).unwrap(), tally);
        format!("8/12 approve passes at Q=10 T=3/5; {duplicates}+1 duplicate casts rejected; ledger recount equals the tally")
    })
}

// ---- certification ---------------------------------------------------------

fn count_kind(chain: &[Block], kind: EventKind) -> usize {
    chain.iter().flat_map(|b| b.events()).filter(|e| e.kind() == kind).count()
}

fn certification_end_to_end() -> String {
    runtime().block_on(async {
        let w = world(12).await;
        let h = &w.h;
        let def = h.define("edu", &w.platform, "Distributed Systems").await;
        let mut tokens = Vec::new();
        for holder in ["alice", "bob", "carol"] {
            tokens.push(h.mint("edu", &w.platform, def, Hash32::digest(holder.as_bytes()), "gold").await.ok());
        }
        let (round, tally, _) = scripted_round(&w, def).await;
        assert_eq!(tally["passing"], true);
        let app = h.post("/v1/applications", json!({ "payload": payload(def, &tokens, Some(round)) }), "edu", &w.platform).await.ok();
        let app = hash(&app["application_id"]);
        h.as_authority(&format!("/v1/applications/{app}/review"), json!({})).await.ok();
        let decision = json!({ "checks": ReviewChecks::all_passed(), "verdict": Verdict::Approve });
        assert_eq!(h.as_authority(&format!("/v1/applications/{app}/decision"), decision).await.ok()["state"], "Approved");
        let before = served_chain(h).await;
        let report = h.as_authority(&format!("/v1/applications/{app}/certify"), json!({})).await.ok();
        let after = served_chain(h).await;
        assert_eq!(report["certified"].as_array().unwrap().len(), 3);
        assert_eq!(count_kind(&after, EventKind::TokenCertified) - count_kind(&before, EventKind::TokenCertified), 3);
        assert_eq!(count_kind(&after, EventKind::RecordLinked) - count_kind(&before, EventKind::RecordLinked), 3);
        assert_eq!(after.len(), before.len() + 1, "the certification batch is one block");

        for t in &tokens {
            let v = h.get(&format!("/v1/tokens/{}/verify", hash(&t["token_id"]))).await.ok();
            assert_eq!(v["certified"], true, "{v}");
            assert_eq!(v["proofs_valid"], true, "{v}");
            let proofs: Vec<medalchain_core::ledger::TracedEvent> = serde_json::from_value(v["inclusion_proofs"].clone()).unwrap();
            assert!(proofs.iter().all(|p| verify_proof(&p.event.event_id(), &p.proof, &after[p.height as usize].header().merkle_root())));
        }
        let again = h.as_authority(&format!("/v1/applications/{app}/certify"), json!({})).await.ok();
        assert_eq!(again["events_appended"], 0);
        assert_eq!(served_chain(h).await, after, "re-running certify leaves the ledger unchanged");
        "3 TokenCertified + 3 RecordLinked in one block, all tokens verify certified with valid proofs, re-run adds 0 events".into()
    })
}

// ---- state machines --------------------------------------------------------

/// The documented application transition table.
fn application_table(state: ApplicationState, action: ApplicationAction) -> Option<ApplicationState> {
    use ApplicationAction as A;
    use ApplicationState as S;
    [
        (S::Draft, A::Submit, S::Submitted),
        (S::Submitted, A::BeginReview, S::UnderReview),
        (S::UnderReview, A::Approve, S::Approved),
        (S::UnderReview, A::Reject, S::Rejected),
        (S::Rejected, A::Resubmit, S::Submitted),
        (S::Rejected, A::Withdraw, S::Withdrawn),
        (S::Draft, A::Withdraw, S::Withdrawn),
        (S::Submitted, A::Withdraw, S::Withdrawn),
    ]
    .into_iter()
    .find(|(s, a, _)| (*s, *a) == (state, action))
    .map(|(_, _, next)| next)
}

/// The documented token status table.
fn token_table(status: TokenStatus, action: TokenAction) -> Option<TokenStatus> {
    use TokenAction as A;
    use TokenStatus as S;
    [
        (S::PlatformIssued, A::Certify, S::Certified),
        (S::PlatformIssued, A::Freeze, S::Frozen),
        (S::PlatformIssued, A::Revoke, S::Revoked),
        (S::Certified, A::Freeze, S::Frozen),
        (S::Certified, A::Revoke, S::Revoked),
        (S::Frozen, A::Restore, S::Certified),
        (S::Frozen, A::Revoke, S::Revoked),
    ]
    .into_iter()
    .find(|(s, a, _)| (*s, *a) == (status, action))
    .map(|(_, _, next)| next)
}

fn rejection() -> Value {
    let mut checks = ReviewChecks::all_passed();
    checks.security_ok = Some(false);
    checks.security_notes = "award records can be forged".into();
    json!({ "checks": checks, "verdict": Verdict::Reject { reason: "forgeable".into() } })
}

async fn digest_of(h: &Harness) -> Value {
    h.get("/v1/chain/digest").await.ok()["digest"].clone()
}

async fn application_in(w: &World, def: Hash32, state: ApplicationState) -> Hash32 {
    use ApplicationState as S;
    let h = &w.h;
    let draft = state == S::Draft;
    let app = h.post("/v1/applications", json!({ "payload": payload(def, &[], None), "draft": draft }), "edu", &w.platform).await.ok();
    let id = hash(&app["application_id"]);
    let path = |step: &str| format!("/v1/applications/{id}/{step}");
    match state {
        S::Draft | S::Submitted => {}
        S::Withdrawn => {
            h.post(&path("withdraw"), json!({}), "edu", &w.platform).await.ok();
        }
        S::UnderReview | S::Approved | S::Rejected => {
            h.as_authority(&path("review"), json!({})).await.ok();
            if state == S::Approved {
                h.as_authority(&path("decision"), json!({ "checks": ReviewChecks::all_passed(), "verdict": Verdict::Approve })).await.ok();
            } else if state == S::Rejected {
                h.as_authority(&path("decision"), rejection()).await.ok();
            }
        }
    }
    id
}

async fn application_pairs() -> usize {
    let w = world(0).await;
    let def = w.h.define("edu", &w.platform, "Workflow").await;
    let mut pairs = 0;
    for state in ApplicationState::ALL {
        for action in ApplicationAction::ALL {
            let id = application_in(&w, def, state).await;
            assert_eq!(w.h.get(&format!("/v1/applications/{id}")).await.ok()["state"], state.to_string());
            let before = (digest_of(&w.h).await, w.h.get(&format!("/v1/applications/{id}")).await.ok());
            let path = |step: &str| format!("/v1/applications/{id}/{step}");
            let reply = match action {
                ApplicationAction::Submit => w.h.post(&path("submit"), json!({}), "edu", &w.platform).await,
                ApplicationAction::BeginReview => w.h.as_authority(&path("review"), json!({})).await,
                ApplicationAction::Approve => {
                    w.h.as_authority(&path("decision"), json!({ "checks": ReviewChecks::all_passed(), "verdict": Verdict::Approve })).await
                }
                ApplicationAction::Reject => w.h.as_authority(&path("decision"), rejection()).await,
                ApplicationAction::Resubmit => w.h.post(&path("resubmit"), json!({ "payload": payload(def, &[], None) }), "edu", &w.platform).await,
                ApplicationAction::Withdraw => w.h.post(&path("withdraw"), json!({}), "edu", &w.platform).await,
            };
            let expected = application_table(state, action);
            assert_eq!(state.after(action), expected, "implementation table differs at {state} {action:?}");
            match expected {
                Some(next) => assert_eq!(reply.ok()["state"], next.to_string(), "{state} {action:?}"),
                None => {
                    reply.expect_err(StatusCode::CONFLICT, "IllegalTransition");
                    let after = (digest_of(&w.h).await, w.h.get(&format!("/v1/applications/{id}")).await.ok());
                    assert_eq!(after, before, "{state} {action:?} mutated state");
                }
            }
            pairs += 1;
        }
    }
    pairs
}

async fn token_pairs() -> usize {
    let mut pairs = 0;
    for status in TokenStatus::ALL {
        for action in TokenAction::ALL {
            let w = world(0).await;
            let h = &w.h;
            let def = h.define("edu", &w.platform, "Status").await;
            let token = hash(&h.mint("edu", &w.platform, def, Hash32::digest(b"holder"), "gold").await.ok()["token_id"]);
            let app = hash(&h.post("/v1/applications", json!({ "payload": payload(def, &[], None) }), "edu", &w.platform).await.ok()["application_id"]);
            h.as_authority(&format!("/v1/applications/{app}/review"), json!({})).await.ok();
            h.as_authority(&format!("/v1/applications/{app}/decision"), json!({ "checks": ReviewChecks::all_passed(), "verdict": Verdict::Approve }))
                .await
                .ok();
            match status {
                TokenStatus::PlatformIssued => {}
                TokenStatus::Certified => {
                    h.as_authority(&format!("/v1/applications/{app}/certify"), json!({})).await.ok();
                }
                TokenStatus::Frozen => {
                    h.as_authority(&format!("/v1/tokens/{token}/freeze"), json!({})).await.ok();
                }
                TokenStatus::Revoked => {
                    h.as_authority(&format!("/v1/tokens/{token}/revoke"), json!({})).await.ok();
                }
            }
            assert_eq!(h.get(&format!("/v1/tokens/{token}")).await.ok()["status"], status.to_string());
            let before = (digest_of(h).await, h.get(&format!("/v1/tokens/{token}")).await.ok());
            let reply = match action {
                TokenAction::Certify => h.as_authority(&format!("/v1/applications/{app}/certify"), json!({})).await,
                TokenAction::Freeze => h.as_authority(&format!("/v1/tokens/{token}/freeze"), json!({})).await,
                TokenAction::Restore => h.as_authority(&format!("/v1/tokens/{token}/restore"), json!({})).await,
                TokenAction::Revoke => h.as_authority(&format!("/v1/tokens/{token}/revoke"), json!({})).await,
            };
            let expected = token_table(status, action);
            assert_eq!(status.after(action), expected, "implementation table differs at {status} {action:?}");
            let now = h.get(&format!("/v1/tokens/{token}")).await.ok();
            match expected {
                Some(next) => {
                    reply.ok();
                    assert_eq!(now["status"], next.to_string(), "{status} {action:?}");
                }
                None => {
                    // Certify reports skipped tokens instead of failing; either way nothing may change.
                    if action != TokenAction::Certify {
                        reply.expect_err(StatusCode::CONFLICT, "IllegalTransition");
                    }
                    assert_eq!((digest_of(h).await, now), before, "{status} {action:?} mutated state");
                }
            }
            pairs += 1;
        }
    }
    pairs
}

fn state_machines() -> String {
    runtime().block_on(async {
        let apps = application_pairs().await;
        let tokens = token_pairs().await;
        format!("{apps} application pairs and {tokens} token pairs match their tables; illegal pairs leave state unchanged")
    })
}

// ---- network ---------------------------------------------------------------

fn network_convergence() -> String {
    let mut byzantine = 0;
    let mut max_nodes = 0;
    for seed in 0..50u64 {
        let script = random_scenario(seed, ScenarioShape::default());
        let mut network = Network::new(seed, 4);
        for (i, instruction) in script.instructions.iter().enumerate() {
            network.step(instruction).unwrap_or_else(|e| panic!("seed {seed} step {i}: {e}"));
            for node in network.honest_nodes() {
                assert!(validate_chain(node.blocks()).is_ok(), "seed {seed}: {} adopted an invalid block", node.node_id);
            }
        }
        let replicas: Vec<Vec<u8>> =
            network.honest_nodes().map(|n| n.blocks().iter().flat_map(|b| b.to_canonical()).collect()).collect();
        assert!(!replicas.is_empty());
        assert!(replicas.windows(2).all(|w| w[0] == w[1]), "seed {seed}: honest replicas differ\n{script}");
        let bad = network.nodes().filter(|n| !n.is_honest()).count();
        assert!(bad <= 1);
        byzantine += bad;
        max_nodes = max_nodes.max(network.nodes().count());
    }
    assert!(max_nodes <= 7);
    format!("50/50 scenarios converge byte-identically ({byzantine} with a byzantine node, up to {max_nodes} nodes)")
}

// ---- crash and replay ------------------------------------------------------

struct Actors {
    platform: String,
    users: Vec<(String, Hash32)>,
}

fn metadata(i: usize) -> DefinitionMetadata {
    DefinitionMetadata {
        name: format!("Course {i}"),
        icon: Hash32::digest(format!("icon{i}").as_bytes()),
        description: "awarded on completion".into(),
        criteria: "pass the exam".into(),
        grade_levels: vec!["bronze".into(), "gold".into()],
    }
}

fn simple_payload(definition_id: Hash32) -> ApplicationPayload {
    ApplicationPayload {
        definition_id,
        awarding_rules: vec!["exam_passed >= 1".into()],
        sample_awards: Vec::new(),
        voting_data: None,
        official_description: None,
    }
}

/// Runs a random mix of operations; failures are expected and journal nothing.
fn random_workload(service: &mut Service, seed: u64, steps: usize) {
    let mut rng = StdRng::seed_from_u64(seed);
    let actors = Actors {
        platform: "edu".into(),
        users: (0..5).map(|i| (format!("u{i}"), Hash32::digest(format!("user-key-{seed}-{i}").as_bytes()))).collect(),
    };
    let now = service.node().now();
    let credential = |actor: &str, role, key| Credential { actor_id: actor.into(), role, public_key: key, issued_at: now };
    let platform = credential(&actors.platform, Role::Platform, Hash32::digest(b"platform"));
    service.apply(|n| n.register_credential(platform)).unwrap();
    for (id, key) in &actors.users {
        let c = credential(id, Role::User, *key);
        service.apply(|n| n.register_credential(c)).unwrap();
    }
    let (mut defs, mut tokens, mut apps, mut rounds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for step in 0..steps {
        let p = actors.platform.clone();
        match rng.gen_range(0..10) {
            0 => {
                let m = metadata(defs.len());
                if let Ok(id) = service.apply(|n| n.register_definition(&p, m)) {
                    defs.push(id);
                }
            }
            1 | 2 if !defs.is_empty() => {
                let def = defs[rng.gen_range(0..defs.len())];
                let holder = Hash32::digest(&[rng.gen_range(0..8u8)]);
                let grade = if rng.gen_bool(0.5) { "gold" } else { "bronze" };
                if let Ok(t) = service.apply(|n| n.mint_token(&p, &def, &holder, grade)) {
                    tokens.push(t.token_id);
                }
            }
            3 if !tokens.is_empty() => {
                let t = tokens[rng.gen_range(0..tokens.len())];
                let action = [TokenAction::Freeze, TokenAction::Restore, TokenAction::Revoke][rng.gen_range(0..3)];
                let _ = service.apply(|n| n.change_status("authority", &t, action));
            }
            4 if !defs.is_empty() => {
                let def = defs[rng.gen_range(0..defs.len())];
                let draft = rng.gen_bool(0.3);
                let payload = simple_payload(def);
                let made = service.apply(|n| if draft { n.save_draft(&p, payload) } else { n.submit_application(&p, payload) });
                if let Ok(a) = made {
                    apps.push(a.application_id);
                }
            }
            5 if !apps.is_empty() => {
                let a = apps[rng.gen_range(0..apps.len())];
                let approve = rng.gen_bool(0.6);
                let _ = service.apply(|n| n.begin_review("authority", &a));
                let _ = service.apply(|n| {
                    if approve {
                        n.decide("authority", &a, &ReviewChecks::all_passed(), &Verdict::Approve)
                    } else {
                        let mut checks = ReviewChecks::all_passed();
                        checks.design_ok = Some(false);
                        checks.design_notes = "unclear levels".into();
                        n.decide("authority", &a, &checks, &Verdict::Reject { reason: "unclear".into() })
                    }
                });
            }
            6 if !apps.is_empty() => {
                let a = apps[rng.gen_range(0..apps.len())];
                match rng.gen_range(0..3) {
                    0 => drop(service.apply(|n| n.certify("authority", &a))),
                    1 => drop(service.apply(|n| n.withdraw(&p, &a))),
                    _ => {
                        let def = service.node().application(&a).map(|x| x.definition_id()).unwrap();
                        drop(service.apply(|n| n.resubmit(&p, &a, simple_payload(def))));
                    }
                }
            }
            7 => {
                let registrar = keygen(256, &mut rng).unwrap();
                let voters: Vec<Hash32> = actors.users.iter().map(|(_, k)| *k).collect();
                let subject = Hash32::digest(format!("subject-{step}").as_bytes());
                if let Ok(r) = service.apply(|n| {
                    let spec = n.approval_spec(subject, voters);
                    n.open_round(&p, spec, registrar)
                }) {
                    rounds.push(r.round_id);
                }
            }
            8 if !rounds.is_empty() => {
                let round = rounds[rng.gen_range(0..rounds.len())];
                let (voter, _) = &actors.users[rng.gen_range(0..actors.users.len())];
                let Some(info) = service.node().votes().round(&round).cloned() else { continue };
                let request = BallotRequest::new(round, info.registrar.clone(), &mut rng).unwrap();
                if let Ok(signed) = service.apply(|n| n.request_ballot(voter, &round, request.blinded())) {
                    let ballot = request.finish(&signed).unwrap();
                    let option = if rng.gen_bool(0.7) { "approve" } else { "reject" };
                    let _ = service.apply(|n| n.cast_vote(&round, &ballot, option));
                }
            }
            9 if !rounds.is_empty() => {
                let round = rounds[rng.gen_range(0..rounds.len())];
                let _ = service.apply(|n| n.close_round(&p, &round));
            }
            _ => {}
        }
    }
}

fn record_boundaries(bytes: &[u8]) -> Vec<usize> {
    let mut ends = vec![HEADER_LEN];
    let mut at = HEADER_LEN;
    while at < bytes.len() {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 36 + len;
        ends.push(at);
    }
    ends
}

fn open_fails(dir: &Path) -> bool {
    matches!(Service::open(dir), Err(ServiceError::Storage(StorageError::CorruptLog { .. } | StorageError::IncompatibleVersion { .. })))
}

fn crash_replay() -> String {
    let mut injected = 0;
    let mut records = 0;
    for seed in 0..20u64 {
        let tmp = tempfile::tempdir().unwrap();
        let (mut service, _key) = Service::init(test_config(tmp.path())).unwrap();
        random_workload(&mut service, seed, 80);
        let digest = service.node().state_digest();
        let height = service.node().chain().height();
        records += service.journal_len();
        drop(service);

        let reopened = Service::open(tmp.path()).unwrap();
        assert_eq!(reopened.node().state_digest(), digest, "workload {seed}");
        assert_eq!(reopened.node().chain().height(), height);
        drop(reopened);

        let path = tmp.path().join(LOG_FILE);
        let clean = std::fs::read(&path).unwrap();
        let boundaries = record_boundaries(&clean);
        let mut rng = StdRng::seed_from_u64(seed);
        let mut corruptions: Vec<Vec<u8>> = Vec::new();
        for _ in 0..40 {
            let mut bad = clean.clone();
            let at = rng.gen_range(0..bad.len());
            bad[at] ^= rng.gen_range(1..=255u8);
            corruptions.push(bad);
        }
        for _ in 0..10 {
            let cut = loop {
                let c = rng.gen_range(1..clean.len());
                if !boundaries.contains(&c) {
                    break c;
                }
            };
            corruptions.push(clean[..cut].to_vec());
        }
        let mut garbage = clean.clone();
        garbage.extend_from_slice(b"\x00\x00\x00\x05 junk");
        corruptions.push(garbage);
        let mut future = clean.clone();
        future[8..12].copy_from_slice(&2u32.to_be_bytes());
        corruptions.push(future);

        for (i, bad) in corruptions.iter().enumerate() {
            std::fs::write(&path, bad).unwrap();
            assert!(open_fails(tmp.path()), "workload {seed}: corruption {i} went undetected");
            injected += 1;
        }
        std::fs::write(&path, &clean).unwrap();
        assert_eq!(Service::open(tmp.path()).unwrap().node().state_digest(), digest);
    }
    format!("20/20 workloads ({records} journal records) replay to the same digest; {injected}/{injected} injected corruptions detected")
}
