//! HTTP API under `/v1`. Reads are public; mutations need a signed
//! credential header, except casting a ballot, which is anonymous by design.

use std::collections::BTreeSet;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medalchain_core::certification::{
    ApplicationPayload, ApplicationState, CertificationApplication, LinkageReport, ReviewChecks, Verdict,
};
use medalchain_core::contracts::{ActivityEvent, Condition, RuleContract};
use medalchain_core::identity::{Address, Credential, Role};
use medalchain_core::ledger::{Block, TracedEvent};
use medalchain_core::merkle;
use medalchain_core::node::{Node, NodeError};
use medalchain_core::registry::{BadgeDefinition, BadgeToken, DefinitionMetadata, VerificationReport};
use medalchain_core::rsa_blind::{biguint_hex, keygen};
use medalchain_core::vote::{Serial, TallyResult, Threshold, VotingRound};
use medalchain_core::Hash32;
use num_bigint::BigUint;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::{verify_request, ACTOR_HEADER, SIGNATURE_HEADER};
use crate::service::{Service, ServiceError};

pub const TIP_HEADER: &str = "x-chain-tip";
const MAX_PAGE: u64 = 100;

// ---- errors ----------------------------------------------------------------

/// Error body returned with every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into() }
    }

    fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", message)
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

/// HTTP status for a module error name.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UnknownToken" | "UnknownDefinition" | "UnknownContract" | "UnknownRound" | "UnknownApplication" | "UnknownActor" => {
            StatusCode::NOT_FOUND
        }
        "Unauthorized" | "IssuerMismatch" | "ForeignDefinition" | "NotEligible" => StatusCode::FORBIDDEN,
        "DuplicateAward" | "DuplicateActor" | "AuthorityExists" | "IllegalTransition" | "RoundClosed" | "AlreadyIssued"
        | "DuplicateSerial" | "StaleVersion" | "NotApproved" | "InactiveContract" | "OutOfOrderActivity" => {
            StatusCode::CONFLICT
        }
        "Mine" | "Chain" | "Canonical" | "Replay" | "CorruptLog" | "IncompatibleVersion" | "StorageIo" | "Poisoned"
        | "Locked" | "NonceExhausted" | "EmptyBlock" | "DifficultyOutOfRange" | "TimestampRegression" => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = e.code();
        let status = match &e {
            ServiceError::Node(NodeError::Chain(_) | NodeError::Mine(_) | NodeError::Canonical(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Node(_) => status_for(&code),
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, code, message: e.to_string() }
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        ServiceError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code, message: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

// ---- state -----------------------------------------------------------------

struct Shared {
    service: RwLock<Service>,
    /// Cached tip hash so response headers never wait on a writer.
    tip: RwLock<Hash32>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

impl AppState {
    pub fn new(service: Service) -> Self {
        let tip = service.node().chain().tip().hash();
        AppState { inner: Arc::new(Shared { service: RwLock::new(service), tip: RwLock::new(tip) }) }
    }

    fn read<T>(&self, f: impl FnOnce(&Service) -> T) -> Result<T, ApiError> {
        let service = self.inner.service.read().map_err(|_| ApiError::internal("service lock poisoned"))?;
        Ok(f(&service))
    }

    fn node<T>(&self, f: impl FnOnce(&Node) -> T) -> Result<T, ApiError> {
        self.read(|s| f(s.node()))
    }

    /// Runs one journaled mutation on a blocking thread; mining and
    /// key generation must not stall the async workers.
    async fn mutate<T, F>(&self, op: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Node) -> Result<T, NodeError> + Send + 'static,
    {
        let shared = self.inner.clone();
        tokio::task::spawn_blocking(move || {
            let mut service = shared.service.write().map_err(|_| ApiError::internal("service lock poisoned"))?;
            let out = service.apply(op);
            if let Ok(mut tip) = shared.tip.write() {
                *tip = service.node().chain().tip().hash();
            }
            out.map_err(ApiError::from)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }

    pub fn tip(&self) -> Hash32 {
        self.inner.tip.read().map(|t| *t).unwrap_or(Hash32::ZERO)
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.inner.service.read().expect("service lock").node().blocks().to_vec()
    }

    pub fn state_digest(&self) -> Hash32 {
        self.inner.service.read().expect("service lock").node().state_digest()
    }
}

// ---- extractors ------------------------------------------------------------

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let bytes = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { bytes };
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request("BadRequest", format!("malformed request body: {e}")))
}

/// A JSON body whose request carries a valid credential signature.
pub struct Signed<T> {
    pub actor: String,
    pub body: T,
}

impl<T: DeserializeOwned> FromRequest<AppState> for Signed<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &AppState) -> Result<Self, Self::Rejection> {
        let method = req.method().to_string();
        let path = req.uri().path_and_query().map_or_else(|| req.uri().path().to_string(), |p| p.as_str().to_string());
        let actor = header(&req, ACTOR_HEADER).ok_or_else(|| ApiError::unauthorized("missing credential header"))?;
        let signature = header(&req, SIGNATURE_HEADER).ok_or_else(|| ApiError::unauthorized("missing signature header"))?;
        let bytes = Bytes::from_request(req, state).await.map_err(|e| ApiError::bad_request("BadRequest", e.body_text()))?;
        let key = state
            .node(|n| n.credential(&actor).map(|c| c.public_key))?
            .ok_or_else(|| ApiError::unauthorized(format!("unknown actor {actor:?}")))?;
        if !verify_request(&key, &signature, &method, &path, &bytes) {
            return Err(ApiError::unauthorized("signature does not verify"));
        }
        Ok(Signed { actor, body: parse_body(&bytes)? })
    }
}

fn header(req: &Request, name: &str) -> Option<String> {
    req.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

/// A JSON body with no credential.
pub struct Anonymous<T>(pub T);

impl<T: DeserializeOwned> FromRequest<AppState> for Anonymous<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &AppState) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state).await.map_err(|e| ApiError::bad_request("BadRequest", e.body_text()))?;
        Ok(Anonymous(parse_body(&bytes)?))
    }
}

fn id(raw: &str) -> Result<Hash32, ApiError> {
    Hash32::from_str(raw).map_err(|_| ApiError::bad_request("MalformedId", format!("{raw:?} is not a 64-character lowercase hex id")))
}

// ---- request and response bodies ------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialRequest {
    pub actor_id: String,
    pub role: Role,
    pub public_key: Hash32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MintRequest {
    pub definition_id: Hash32,
    pub holder: Address,
    pub grade: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractRequest {
    pub definition_id: Hash32,
    pub grade: String,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecuteRequest {
    pub user: Address,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateRulesRequest {
    pub conditions: Vec<Condition>,
    pub tally: TallyResult,
}

/// Round parameters; omitted fields take the node defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRequest {
    pub subject_hash: Hash32,
    pub eligible_voters: BTreeSet<Address>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quorum: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlindedRequest {
    #[serde(with = "biguint_hex")]
    pub blinded: BigUint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlindedResponse {
    #[serde(with = "biguint_hex")]
    pub signed_blinded: BigUint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CastRequest {
    pub serial: Serial,
    #[serde(with = "biguint_hex")]
    pub signature: BigUint,
    pub option: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CastResponse {
    pub event_id: Hash32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationRequest {
    pub payload: ApplicationPayload,
    /// Save as Draft instead of submitting.
    #[serde(default)]
    pub draft: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub checks: ReviewChecks,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResubmitRequest {
    pub payload: ApplicationPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TipView {
    pub height: u64,
    pub hash: Hash32,
    pub timestamp: u64,
    pub total_work: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DigestView {
    pub digest: Hash32,
    pub height: u64,
    pub journal_records: usize,
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub from: u64,
    pub limit: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct StateQuery {
    pub state: Option<String>,
}

// ---- router ----------------------------------------------------------------

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/chain/tip", get(chain_tip))
        .route("/v1/chain/digest", get(chain_digest))
        .route("/v1/chain/blocks", get(chain_blocks))
        .route("/v1/chain/blocks/{height}", get(chain_block))
        .route("/v1/events/{id}/proof", get(event_proof))
        .route("/v1/credentials", post(register_credential))
        .route("/v1/credentials/{actor}", get(get_credential))
        .route("/v1/definitions", post(register_definition))
        .route("/v1/definitions/{id}", get(get_definition))
        .route("/v1/tokens", post(mint_token))
        .route("/v1/tokens/{id}", get(get_token))
        .route("/v1/tokens/{id}/verify", get(verify_token))
        .route("/v1/tokens/{id}/freeze", post(freeze_token))
        .route("/v1/tokens/{id}/revoke", post(revoke_token))
        .route("/v1/tokens/{id}/restore", post(restore_token))
        .route("/v1/holders/{address}/tokens", get(holder_tokens))
        .route("/v1/activity", post(ingest_activity))
        .route("/v1/contracts", post(create_contract))
        .route("/v1/contracts/{id}", get(get_contract))
        .route("/v1/contracts/{id}/execute", post(execute_contract))
        .route("/v1/contracts/{id}/update", post(update_contract))
        .route("/v1/rounds", post(open_round))
        .route("/v1/rounds/{id}", get(get_round))
        .route("/v1/rounds/{id}/request-token", post(request_token))
        .route("/v1/rounds/{id}/cast", post(cast_vote))
        .route("/v1/rounds/{id}/close", post(close_round))
        .route("/v1/rounds/{id}/tally", get(round_tally))
        .route("/v1/applications", post(create_application).get(list_applications))
        .route("/v1/applications/{id}", get(get_application))
        .route("/v1/applications/{id}/submit", post(submit_application))
        .route("/v1/applications/{id}/review", post(review_application))
        .route("/v1/applications/{id}/decision", post(decide_application))
        .route("/v1/applications/{id}/certify", post(certify_application))
        .route("/v1/applications/{id}/resubmit", post(resubmit_application))
        .route("/v1/applications/{id}/withdraw", post(withdraw_application))
        .fallback(|| async { ApiError::not_found("NotFound", "no such endpoint") })
        .layer(axum::middleware::map_response_with_state(state.clone(), tip_header))
        .with_state(state)
}

async fn tip_header(State(state): State<AppState>, mut response: Response) -> Response {
    let tip = HeaderValue::from_str(&state.tip().to_hex()).expect("hex is a valid header value");
    response.headers_mut().insert(TIP_HEADER, tip);
    response
}

// ---- chain -----------------------------------------------------------------

async fn chain_tip(State(state): State<AppState>) -> ApiResult<TipView> {
    state
        .node(|n| {
            let tip = n.chain().tip();
            TipView { height: tip.height(), hash: tip.hash(), timestamp: tip.header().timestamp(), total_work: n.chain().total_work() }
        })
        .map(Json)
}

async fn chain_digest(State(state): State<AppState>) -> ApiResult<DigestView> {
    state
        .read(|s| DigestView { digest: s.node().state_digest(), height: s.node().chain().height(), journal_records: s.journal_len() })
        .map(Json)
}

async fn chain_blocks(State(state): State<AppState>, Query(page): Query<PageQuery>) -> ApiResult<Vec<Block>> {
    let limit = page.limit.unwrap_or(MAX_PAGE).min(MAX_PAGE) as usize;
    state.node(|n| n.blocks().iter().skip(page.from as usize).take(limit).cloned().collect()).map(Json)
}

async fn chain_block(State(state): State<AppState>, Path(height): Path<u64>) -> ApiResult<Block> {
    state
        .node(|n| n.blocks().get(height as usize).cloned())?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownBlock", format!("no block at height {height}")))
}

async fn event_proof(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<TracedEvent> {
    let event_id = id(&raw)?;
    state
        .node(|n| {
            n.blocks().iter().find_map(|b| {
                let ids = b.event_ids();
                let i = ids.iter().position(|e| *e == event_id)?;
                Some(TracedEvent {
                    height: b.height(),
                    block_root: b.header().merkle_root(),
                    event: b.events()[i].clone(),
                    proof: merkle::prove(&ids, i).expect("index within block"),
                })
            })
        })?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownEvent", "event not found"))
}

// ---- credentials -----------------------------------------------------------

async fn register_credential(State(state): State<AppState>, req: Signed<CredentialRequest>) -> ApiResult<Credential> {
    let actor = req.actor;
    let body = req.body;
    state
        .mutate(move |n| {
            if !n.credential(&actor).is_some_and(Credential::is_authority) {
                return Err(NodeError::Unauthorized("only the authority provisions credentials".into()));
            }
            let credential = Credential { actor_id: body.actor_id, role: body.role, public_key: body.public_key, issued_at: n.now() };
            n.register_credential(credential.clone())?;
            Ok(credential)
        })
        .await
        .map(Json)
}

async fn get_credential(State(state): State<AppState>, Path(actor): Path<String>) -> ApiResult<Credential> {
    state
        .node(|n| n.credential(&actor).cloned())?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownActor", format!("actor {actor:?} not found")))
}

// ---- registry --------------------------------------------------------------

async fn register_definition(State(state): State<AppState>, req: Signed<DefinitionMetadata>) -> ApiResult<BadgeDefinition> {
    let Signed { actor, body } = req;
    state
        .mutate(move |n| {
            let id = n.register_definition(&actor, body)?;
            Ok(n.registry().definition(&id).cloned().expect("registered definition is indexed"))
        })
        .await
        .map(Json)
}

async fn get_definition(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<BadgeDefinition> {
    let def = id(&raw)?;
    state
        .node(|n| n.registry().definition(&def).cloned())?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownDefinition", "definition not found"))
}

async fn mint_token(State(state): State<AppState>, req: Signed<MintRequest>) -> ApiResult<BadgeToken> {
    let Signed { actor, body } = req;
    state.mutate(move |n| n.mint_token(&actor, &body.definition_id, &body.holder, &body.grade)).await.map(Json)
}

async fn get_token(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<BadgeToken> {
    let token = id(&raw)?;
    state.node(|n| n.registry().token(&token).cloned())?.map(Json).ok_or_else(|| ApiError::not_found("UnknownToken", "token not found"))
}

async fn verify_token(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<VerificationReport> {
    let token = id(&raw)?;
    let report = state.node(|n| n.verify_token(&token))?;
    if !report.exists {
        return Err(ApiError::not_found("UnknownToken", "token not found"));
    }
    Ok(Json(report))
}

async fn freeze_token(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<BadgeToken> {
    let token = id(&raw)?;
    state.mutate(move |n| n.freeze_token(&req.actor, &token)).await.map(Json)
}

async fn revoke_token(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<BadgeToken> {
    let token = id(&raw)?;
    state.mutate(move |n| n.revoke_token(&req.actor, &token)).await.map(Json)
}

async fn restore_token(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<BadgeToken> {
    let token = id(&raw)?;
    state.mutate(move |n| n.restore_token(&req.actor, &token)).await.map(Json)
}

async fn holder_tokens(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<Vec<BadgeToken>> {
    let holder = id(&raw)?;
    state.node(|n| n.registry().tokens_of_holder(&holder).cloned().collect()).map(Json)
}

// ---- contracts -------------------------------------------------------------

async fn ingest_activity(State(state): State<AppState>, req: Signed<ActivityEvent>) -> ApiResult<ActivityEvent> {
    let Signed { actor, body } = req;
    let echo = body.clone();
    state.mutate(move |n| n.ingest_activity(&actor, body)).await?;
    Ok(Json(echo))
}

async fn create_contract(State(state): State<AppState>, req: Signed<ContractRequest>) -> ApiResult<RuleContract> {
    let Signed { actor, body } = req;
    state.mutate(move |n| n.create_contract(&actor, &body.definition_id, &body.grade, body.conditions)).await.map(Json)
}

async fn get_contract(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<RuleContract> {
    let contract = id(&raw)?;
    state
        .node(|n| n.contracts().get(&contract).cloned())?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownContract", "contract not found"))
}

async fn execute_contract(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<ExecuteRequest>) -> ApiResult<BadgeToken> {
    let contract = id(&raw)?;
    let Signed { actor, body } = req;
    state.mutate(move |n| n.execute_issuance(&actor, &contract, &body.user)).await.map(Json)
}

async fn update_contract(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<UpdateRulesRequest>) -> ApiResult<RuleContract> {
    let contract = id(&raw)?;
    let Signed { actor, body } = req;
    state.mutate(move |n| n.update_rules(&actor, &contract, body.conditions, &body.tally)).await.map(Json)
}

// ---- voting ----------------------------------------------------------------

async fn open_round(State(state): State<AppState>, req: Signed<RoundRequest>) -> ApiResult<VotingRound> {
    let Signed { actor, body } = req;
    let bits = state.read(|s| s.config().registrar_bits)?;
    // Key generation is slow at service sizes; do it before taking the write lock.
    let registrar = tokio::task::spawn_blocking(move || keygen(bits, &mut rand::thread_rng()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    state
        .mutate(move |n| {
            let mut spec = n.approval_spec(body.subject_hash, body.eligible_voters);
            if let Some(options) = body.options {
                spec.options = options;
            }
            spec.quorum = body.quorum.unwrap_or(spec.quorum);
            spec.threshold = body.threshold.unwrap_or(spec.threshold);
            n.open_round(&actor, spec, registrar)
        })
        .await
        .map(Json)
}

async fn get_round(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<VotingRound> {
    let round = id(&raw)?;
    state.node(|n| n.votes().round(&round).cloned())?.map(Json).ok_or_else(|| ApiError::not_found("UnknownRound", "round not found"))
}

async fn request_token(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<BlindedRequest>) -> ApiResult<BlindedResponse> {
    let round = id(&raw)?;
    let Signed { actor, body } = req;
    let signed_blinded = state.mutate(move |n| n.request_ballot(&actor, &round, &body.blinded)).await?;
    Ok(Json(BlindedResponse { signed_blinded }))
}

async fn cast_vote(State(state): State<AppState>, Path(raw): Path<String>, Anonymous(body): Anonymous<CastRequest>) -> ApiResult<CastResponse> {
    let round = id(&raw)?;
    let ballot = medalchain_core::vote::BallotToken { serial: body.serial, signature: body.signature };
    let event_id = state.mutate(move |n| n.cast_vote(&round, &ballot, &body.option)).await?;
    Ok(Json(CastResponse { event_id }))
}

async fn close_round(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<TallyResult> {
    let round = id(&raw)?;
    state.mutate(move |n| n.close_round(&req.actor, &round)).await.map(Json)
}

async fn round_tally(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<TallyResult> {
    let round = id(&raw)?;
    state
        .node(|n| n.votes().round(&round).map(|r| r.tally.clone().unwrap_or_else(|| r.current_tally())))?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownRound", "round not found"))
}

// ---- certification ---------------------------------------------------------

async fn create_application(State(state): State<AppState>, req: Signed<ApplicationRequest>) -> ApiResult<CertificationApplication> {
    let Signed { actor, body } = req;
    state
        .mutate(move |n| if body.draft { n.save_draft(&actor, body.payload) } else { n.submit_application(&actor, body.payload) })
        .await
        .map(Json)
}

async fn list_applications(State(state): State<AppState>, Query(q): Query<StateQuery>) -> ApiResult<Vec<CertificationApplication>> {
    let filter = match q.state.as_deref() {
        None | Some("") => None,
        Some(s) => Some(ApplicationState::from_str(s).map_err(|_| ApiError::bad_request("BadRequest", format!("unknown application state {s:?}")))?),
    };
    state.node(|n| n.applications(filter).into_iter().cloned().collect()).map(Json)
}

async fn get_application(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<CertificationApplication> {
    let app = id(&raw)?;
    state
        .node(|n| n.application(&app).cloned())?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownApplication", "application not found"))
}

async fn submit_application(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<CertificationApplication> {
    let app = id(&raw)?;
    state.mutate(move |n| n.submit_draft(&req.actor, &app)).await.map(Json)
}

async fn review_application(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<CertificationApplication> {
    let app = id(&raw)?;
    state.mutate(move |n| n.begin_review(&req.actor, &app)).await.map(Json)
}

async fn decide_application(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<DecisionRequest>) -> ApiResult<CertificationApplication> {
    let app = id(&raw)?;
    let Signed { actor, body } = req;
    state.mutate(move |n| n.decide(&actor, &app, &body.checks, &body.verdict)).await.map(Json)
}

async fn certify_application(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<LinkageReport> {
    let app = id(&raw)?;
    state.mutate(move |n| n.certify(&req.actor, &app)).await.map(Json)
}

async fn resubmit_application(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<ResubmitRequest>) -> ApiResult<CertificationApplication> {
    let app = id(&raw)?;
    let Signed { actor, body } = req;
    state.mutate(move |n| n.resubmit(&actor, &app, body.payload)).await.map(Json)
}

async fn withdraw_application(State(state): State<AppState>, Path(raw): Path<String>, req: Signed<Empty>) -> ApiResult<CertificationApplication> {
    let app = id(&raw)?;
    state.mutate(move |n| n.withdraw(&req.actor, &app)).await.map(Json)
}
