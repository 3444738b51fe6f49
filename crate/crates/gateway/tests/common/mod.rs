#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use ed25519_dalek::SigningKey;
use http_body_util::BodyExt;
use medalchain::api::{self, AppState, TIP_HEADER};
use medalchain::auth::{self, ACTOR_HEADER, SIGNATURE_HEADER};
use medalchain::config::NodeConfig;
use medalchain::service::Service;
use medalchain_core::certification::{ApplicationPayload, SampleAward};
use medalchain_core::vote::{BallotRequest, VotingRound};
use medalchain_core::Hash32;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

pub const AUTHORITY: &str = "authority";

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub tip: Option<String>,
    pub body: Value,
}

impl Reply {
    pub fn ok(self) -> Value {
        assert!(self.status.is_success(), "expected success, got {} {}", self.status, self.body);
        self.body
    }

    pub fn code(&self) -> &str {
        self.body["code"].as_str().unwrap_or("")
    }

    pub fn expect_err(&self, status: StatusCode, code: &str) {
        assert_eq!((self.status, self.code()), (status, code), "{}", self.body);
    }
}

pub struct Harness {
    pub dir: TempDir,
    pub state: AppState,
    pub router: Router,
    pub authority: SigningKey,
}

pub fn test_config(dir: &std::path::Path) -> NodeConfig {
    let mut config = NodeConfig::new(dir);
    config.difficulty = 2;
    config.registrar_bits = 256;
    config
}

impl Harness {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (service, authority) = Service::init(test_config(dir.path())).unwrap();
        let state = AppState::new(service);
        Harness { router: api::router(state.clone()), state, dir, authority }
    }

    /// Drops the running service and opens the directory again.
    pub fn reopen(self) -> Self {
        let Harness { dir, state, router, authority } = self;
        drop(router);
        drop(state);
        let service = Service::open(dir.path()).unwrap();
        let state = AppState::new(service);
        Harness { router: api::router(state.clone()), state, dir, authority }
    }

    pub async fn send(&self, req: Request<Body>) -> Reply {
        let response = self.router.clone().oneshot(req).await.unwrap();
        let status = response.status();
        let tip = response.headers().get(TIP_HEADER).map(|v| v.to_str().unwrap().to_string());
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        Reply { status, tip, body }
    }

    pub async fn get(&self, path: &str) -> Reply {
        self.send(Request::builder().uri(path).body(Body::empty()).unwrap()).await
    }

    pub async fn post_raw(&self, path: &str, body: &Value, headers: &[(&str, String)]) -> Reply {
        let mut req = Request::builder().method(Method::POST).uri(path).header("content-type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, v);
        }
        self.send(req.body(Body::from(serde_json::to_vec(body).unwrap())).unwrap()).await
    }

    pub async fn post(&self, path: &str, body: Value, actor: &str, key: &SigningKey) -> Reply {
        let bytes = serde_json::to_vec(&body).unwrap();
        let signature = auth::sign_request(key, "POST", path, &bytes);
        self.post_raw(path, &body, &[(ACTOR_HEADER, actor.to_string()), (SIGNATURE_HEADER, signature)]).await
    }

    pub async fn as_authority(&self, path: &str, body: Value) -> Reply {
        self.post(path, body, AUTHORITY, &self.authority).await
    }

    /// Provisions a credential and returns its key.
    pub async fn register(&self, actor: &str, role: &str) -> SigningKey {
        let key = auth::generate_key();
        self.as_authority("/v1/credentials", json!({ "actor_id": actor, "role": role, "public_key": auth::public_key(&key) }))
            .await
            .ok();
        key
    }

    pub async fn define(&self, platform: &str, key: &SigningKey, name: &str) -> Hash32 {
        let body = json!({
            "name": name,
            "icon": Hash32::digest(name.as_bytes()),
            "description": format!("Awarded for {name}"),
            "criteria": "complete the course",
            "grade_levels": ["bronze", "silver", "gold"],
        });
        hash(&self.post("/v1/definitions", body, platform, key).await.ok()["definition_id"])
    }

    pub async fn mint(&self, platform: &str, key: &SigningKey, definition: Hash32, holder: Hash32, grade: &str) -> Reply {
        self.post("/v1/tokens", json!({ "definition_id": definition, "holder": holder, "grade": grade }), platform, key).await
    }

    pub async fn tip(&self) -> String {
        self.get("/v1/chain/tip").await.ok()["hash"].as_str().unwrap().to_string()
    }

    pub fn digest(&self) -> Hash32 {
        self.state.state_digest()
    }
}

pub fn hash(v: &Value) -> Hash32 {
    v.as_str().unwrap_or_else(|| panic!("not a hash: {v}")).parse().unwrap()
}

pub fn address(key: &SigningKey) -> Hash32 {
    auth::public_key(key)
}

pub fn now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap().as_secs()
}

pub struct World {
    pub h: Harness,
    pub platform: SigningKey,
    pub users: Vec<SigningKey>,
}

/// A node with platform `edu` and users `user0..`.
pub async fn world(users: usize) -> World {
    let h = Harness::new();
    let platform = h.register("edu", "Platform").await;
    let mut keys = Vec::new();
    for i in 0..users {
        keys.push(h.register(&format!("user{i}"), "User").await);
    }
    World { h, platform, users: keys }
}

pub fn payload(definition: Hash32, tokens: &[Value], round: Option<Hash32>) -> Value {
    let payload = ApplicationPayload {
        definition_id: definition,
        awarding_rules: vec!["exam_passed >= 2".into()],
        sample_awards: tokens
            .iter()
            .map(|t| SampleAward { token_id: hash(&t["token_id"]), holder: hash(&t["holder"]), eligibility_proof: "transcript".into() })
            .collect(),
        voting_data: round,
        official_description: Some("Officially recognised algorithms badge".into()),
    };
    serde_json::to_value(payload).unwrap()
}

/// Each user obtains a blind ballot over HTTP and casts `choices[i]`.
pub async fn vote(w: &World, round: Hash32, choices: &[&str]) -> Vec<Value> {
    let info: VotingRound = serde_json::from_value(w.h.get(&format!("/v1/rounds/{round}")).await.ok()).unwrap();
    let mut casts = Vec::new();
    for (i, option) in choices.iter().enumerate() {
        let request = BallotRequest::new(round, info.registrar.clone(), &mut rand::thread_rng()).unwrap();
        let blinded = json!({ "blinded": serde_json::to_value(BlindedHex(request.blinded().clone())).unwrap() });
        let signed = w.h.post(&format!("/v1/rounds/{round}/request-token"), blinded, &format!("user{i}"), &w.users[i]).await.ok();
        let signed: BlindedHex = serde_json::from_value(signed["signed_blinded"].clone()).unwrap();
        let ballot = request.finish(&signed.0).unwrap();
        let mut body = serde_json::to_value(&ballot).unwrap();
        body["option"] = json!(option);
        let cast = w.h.post_raw(&format!("/v1/rounds/{round}/cast"), &body, &[]).await;
        casts.push(body);
        cast.ok();
    }
    casts
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct BlindedHex(#[serde(with = "medalchain_core::rsa_blind::biguint_hex")] pub num_bigint::BigUint);
