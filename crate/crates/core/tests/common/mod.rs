#![allow(dead_code)]

use std::sync::Arc;

use medalchain_core::certification::{ApplicationPayload, ReviewChecks, SampleAward, Verdict};
use medalchain_core::identity::{Address, Credential, ManualClock, Role};
use medalchain_core::node::{Node, NodeParams};
use medalchain_core::registry::DefinitionMetadata;
use medalchain_core::rsa_blind::{keygen, RsaKeyPair};
use medalchain_core::vote::{BallotRequest, BallotToken, RoundSpec};
use medalchain_core::Hash32;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const AUTHORITY: &str = "gov";
pub const PLATFORM: &str = "edu";
pub const OTHER_PLATFORM: &str = "arts";

pub struct Fixture {
    pub node: Node,
    pub clock: ManualClock,
    pub rng: ChaCha20Rng,
}

pub fn address_of(actor: &str) -> Address {
    Hash32::digest(format!("key:{actor}").as_bytes())
}

pub fn credential(actor: &str, role: Role) -> Credential {
    Credential { actor_id: actor.to_string(), role, public_key: address_of(actor), issued_at: 0 }
}

pub fn user(i: usize) -> String {
    format!("user{i}")
}

/// A node with an authority, two platforms and `users` user credentials.
pub fn fixture(users: usize, seed: u64) -> Fixture {
    let clock = ManualClock::new(1_700_000_000);
    let params = NodeParams { difficulty: 2, ..NodeParams::default() };
    let mut node = Node::new(params, Arc::new(clock.clone())).unwrap();
    node.register_credential(credential(AUTHORITY, Role::Authority)).unwrap();
    node.register_credential(credential(PLATFORM, Role::Platform)).unwrap();
    node.register_credential(credential(OTHER_PLATFORM, Role::Platform)).unwrap();
    for i in 0..users {
        node.register_credential(credential(&user(i), Role::User)).unwrap();
    }
    Fixture { node, clock, rng: ChaCha20Rng::seed_from_u64(seed) }
}

pub fn metadata(name: &str) -> DefinitionMetadata {
    DefinitionMetadata {
        name: name.to_string(),
        icon: Hash32::digest(format!("{name}.png").as_bytes()),
        description: format!("Awarded for {name}"),
        criteria: "pass the course exams".into(),
        grade_levels: vec!["bronze".into(), "silver".into(), "gold".into()],
    }
}

pub fn registrar(seed: u64) -> RsaKeyPair {
    keygen(256, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

impl Fixture {
    pub fn tick(&self, secs: u64) {
        self.clock.advance(secs);
    }

    pub fn voters(&self, n: usize) -> Vec<Address> {
        (0..n).map(|i| self.node.credential(&user(i)).unwrap().address()).collect()
    }

    /// Opens an approval round over `subject` for the first `n` users.
    pub fn open_round(&mut self, subject: Hash32, n: usize, quorum: u64) -> Hash32 {
        let spec = RoundSpec { quorum, ..self.node.approval_spec(subject, self.voters(n)) };
        let key = registrar(subject.0[0] as u64);
        self.node.open_round(PLATFORM, spec, key).unwrap().round_id
    }

    /// Runs the blind issuance protocol for `voter` and returns the ballot.
    pub fn obtain_ballot(&mut self, round_id: Hash32, voter: &str) -> BallotToken {
        let key = self.node.votes().round(&round_id).unwrap().registrar.clone();
        let request = BallotRequest::new(round_id, key, &mut self.rng).unwrap();
        let signed = self.node.request_ballot(voter, &round_id, request.blinded()).unwrap();
        request.finish(&signed).unwrap()
    }

    /// Each of the first `choices.len()` users votes for the given option.
    pub fn vote_all(&mut self, round_id: Hash32, choices: &[&str]) -> Vec<BallotToken> {
        let mut ballots = Vec::new();
        for (i, option) in choices.iter().enumerate() {
            let ballot = self.obtain_ballot(round_id, &user(i));
            self.node.cast_vote(&round_id, &ballot, option).unwrap();
            ballots.push(ballot);
        }
        ballots
    }
}

pub fn payload_for(node: &Node, definition_id: Hash32, samples: &[Hash32]) -> ApplicationPayload {
    ApplicationPayload {
        definition_id,
        awarding_rules: vec!["exam_passed >= 3".into()],
        sample_awards: samples
            .iter()
            .map(|t| SampleAward {
                token_id: *t,
                holder: node.registry().token(t).unwrap().holder,
                eligibility_proof: format!("transcript/{t}"),
            })
            .collect(),
        voting_data: None,
        official_description: Some("Officially recognised data structures badge".into()),
    }
}

impl Fixture {
    /// Submit, review and approve an application for `definition_id`.
    pub fn approve(&mut self, definition_id: Hash32, samples: &[Hash32]) -> Hash32 {
        let payload = payload_for(&self.node, definition_id, samples);
        let app = self.node.submit_application(PLATFORM, payload).unwrap().application_id;
        self.node.begin_review(AUTHORITY, &app).unwrap();
        self.node.decide(AUTHORITY, &app, &ReviewChecks::all_passed(), &Verdict::Approve).unwrap();
        app
    }
}
