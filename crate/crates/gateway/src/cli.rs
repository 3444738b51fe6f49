//! Command-line interface. Mutations go through the same HTTP router the
//! server uses, in process, so the CLI and the API enforce identical rules.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ed25519_dalek::SigningKey;
use http_body_util::BodyExt;
use medalchain_core::canonical::{canonical_decode, canonical_encode};
use medalchain_core::ledger::{validate_chain, Block, ChainError};
use medalchain_core::Hash32;
use medalchain_sim::{run_script, Script, SimError};
use serde_json::{json, Value};
use tower::ServiceExt;

use crate::api::{self, AppState, ErrorBody};
use crate::auth::{self, KeyError, ACTOR_HEADER, SIGNATURE_HEADER};
use crate::config::{parse_threshold, NodeConfig};
use crate::service::{Service, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "medalchain", version, about = "Badge ledger node and tools")]
pub struct Cli {
    /// Node data directory.
    #[arg(long, global = true, env = "MEDALCHAIN_DATA_DIR", default_value = "medalchain-data")]
    pub data_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Output::Table)]
    pub output: Output,
    /// Credential to act as; defaults to the configured authority.
    #[arg(long, global = true)]
    pub actor: Option<String>,
    /// Signing key file for `--actor`; defaults to the authority key.
    #[arg(long, global = true)]
    pub key: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a data directory with an authority key and an empty ledger.
    Init(InitArgs),
    /// Serve the HTTP API.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Write a new signing key and print its public key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Provision a credential (authority only).
    Register {
        #[arg(long)]
        actor_id: String,
        #[arg(long, value_parser = ["authority", "platform", "user"])]
        role: String,
        /// Hex ed25519 public key, as printed by `keygen`.
        #[arg(long)]
        public_key: Hash32,
    },
    /// Register a badge definition.
    Define {
        #[arg(long)]
        name: String,
        #[arg(long)]
        description: String,
        #[arg(long)]
        criteria: String,
        /// Content hash of the icon image.
        #[arg(long)]
        icon: Hash32,
        /// Grade level; repeat for several.
        #[arg(long = "grade", required = true)]
        grades: Vec<String>,
    },
    /// Mint a badge token.
    Mint {
        #[arg(long)]
        definition: Hash32,
        #[arg(long)]
        holder: Hash32,
        #[arg(long)]
        grade: String,
    },
    /// Verify a token against the ledger.
    Verify { token: Hash32 },
    Freeze { token: Hash32 },
    Revoke { token: Hash32 },
    Restore { token: Hash32 },
    /// Anonymous approval rounds.
    #[command(subcommand)]
    VoteRound(VoteRoundCommand),
    /// Network simulator.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Print the chain, one canonical block per line.
    ExportChain {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an exported chain file.
    ValidateChain { file: PathBuf },
    /// Print the chain tip.
    Tip,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub difficulty: Option<u32>,
    #[arg(long)]
    pub quorum: Option<u64>,
    /// Approval fraction, `3/5` or `0.6`.
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub registrar_bits: Option<u64>,
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long)]
    pub authority_id: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum VoteRoundCommand {
    Open {
        /// Hash of the item under vote.
        #[arg(long)]
        subject: Hash32,
        /// Eligible voter address; repeat or comma-separate.
        #[arg(long = "voter", value_delimiter = ',', required = true)]
        voters: Vec<Hash32>,
        #[arg(long)]
        quorum: Option<u64>,
        #[arg(long)]
        threshold: Option<String>,
    },
    Close { round: Hash32 },
    Tally { round: Hash32 },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Run a scenario script and print each node's final state.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        difficulty: u32,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{code}: {message}")]
    Api { status: StatusCode, code: String, message: String },
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("chain file line {line}: {message}")]
    ChainFile { line: usize, message: String },
    #[error("chain is invalid: {0}")]
    InvalidChain(#[from] ChainError),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Init(args) => init(&cli, args),
        Command::Serve { listen } => serve(&cli, *listen).await,
        Command::Keygen { out } => {
            let key = auth::generate_key();
            auth::write_key_file(out, &key).map_err(io_err(out))?;
            emit(cli.output, &json!({ "key_file": out.display().to_string(), "public_key": auth::public_key(&key) }));
            Ok(())
        }
        Command::Sim(SimCommand::Run { scenario, seed, difficulty }) => sim_run(cli.output, scenario, *seed, *difficulty),
        Command::ValidateChain { file } => validate_chain_file(cli.output, file),
        _ => {
            let local = Local::open(&cli)?;
            local.dispatch(&cli).await
        }
    }
}

fn init(cli: &Cli, args: &InitArgs) -> Result<(), CliError> {
    let mut config = NodeConfig::new(&cli.data_dir);
    if let Some(d) = args.difficulty {
        config.difficulty = d;
    }
    if let Some(q) = args.quorum {
        config.quorum = q;
    }
    if let Some(t) = &args.threshold {
        config.threshold = parse_threshold(t).map_err(CliError::Invalid)?;
    }
    if let Some(b) = args.registrar_bits {
        config.registrar_bits = b;
    }
    if let Some(l) = args.listen {
        config.listen = l;
    }
    if let Some(a) = &args.authority_id {
        config.authority_id = a.clone();
    }
    let (service, key) = Service::init(config)?;
    emit(
        cli.output,
        &json!({
            "data_dir": cli.data_dir.display().to_string(),
            "authority": service.config().authority_id,
            "public_key": auth::public_key(&key),
            "key_file": service.config().authority_key_path().display().to_string(),
        }),
    );
    Ok(())
}

async fn serve(cli: &Cli, listen: Option<SocketAddr>) -> Result<(), CliError> {
    tracing_subscriber::fmt().with_target(false).init();
    let service = Service::open(&cli.data_dir)?;
    let addr = listen.unwrap_or(service.config().listen);
    let state = AppState::new(service);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| CliError::Io { path: addr.to_string().into(), source })?;
    tracing::info!(%addr, tip = %state.tip(), "serving");
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| CliError::Io { path: addr.to_string().into(), source })?;
    tracing::info!("stopped");
    Ok(())
}

/// A node opened from the data directory with its router, acting as one credential.
struct Local {
    router: Router,
    state: AppState,
    actor: String,
    key_path: PathBuf,
}

impl Local {
    fn open(cli: &Cli) -> Result<Self, CliError> {
        let service = Service::open(&cli.data_dir)?;
        let actor = cli.actor.clone().unwrap_or_else(|| service.config().authority_id.clone());
        let key_path = cli.key.clone().unwrap_or_else(|| service.config().authority_key_path());
        let state = AppState::new(service);
        Ok(Local { router: api::router(state.clone()), state, actor, key_path })
    }

    async fn dispatch(&self, cli: &Cli) -> Result<(), CliError> {
        let out = cli.output;
        let value = match &cli.command {
            Command::Register { actor_id, role, public_key } => {
                let role = format!("{}{}", role[..1].to_uppercase(), &role[1..]);
                self.post("/v1/credentials", json!({ "actor_id": actor_id, "role": role, "public_key": public_key })).await?
            }
            Command::Define { name, description, criteria, icon, grades } => {
                let body = json!({ "name": name, "description": description, "criteria": criteria, "icon": icon, "grade_levels": grades });
                self.post("/v1/definitions", body).await?
            }
            Command::Mint { definition, holder, grade } => {
                self.post("/v1/tokens", json!({ "definition_id": definition, "holder": holder, "grade": grade })).await?
            }
            Command::Verify { token } => self.get(&format!("/v1/tokens/{token}/verify")).await?,
            Command::Freeze { token } => self.post(&format!("/v1/tokens/{token}/freeze"), json!({})).await?,
            Command::Revoke { token } => self.post(&format!("/v1/tokens/{token}/revoke"), json!({})).await?,
            Command::Restore { token } => self.post(&format!("/v1/tokens/{token}/restore"), json!({})).await?,
            Command::VoteRound(VoteRoundCommand::Open { subject, voters, quorum, threshold }) => {
                let mut body = json!({ "subject_hash": subject, "eligible_voters": voters });
                if let Some(q) = quorum {
                    body["quorum"] = json!(q);
                }
                if let Some(t) = threshold {
                    body["threshold"] = serde_json::to_value(parse_threshold(t).map_err(CliError::Invalid)?).expect("threshold serializes");
                }
                self.post("/v1/rounds", body).await?
            }
            Command::VoteRound(VoteRoundCommand::Close { round }) => self.post(&format!("/v1/rounds/{round}/close"), json!({})).await?,
            Command::VoteRound(VoteRoundCommand::Tally { round }) => self.get(&format!("/v1/rounds/{round}/tally")).await?,
            Command::Tip => self.get("/v1/chain/tip").await?,
            Command::ExportChain { out: file } => return self.export(file.as_deref()),
            Command::Init(_) | Command::Serve { .. } | Command::Keygen { .. } | Command::Sim(_) | Command::ValidateChain { .. } => {
                unreachable!("handled without opening the node")
            }
        };
        emit(out, &value);
        Ok(())
    }

    fn export(&self, file: Option<&Path>) -> Result<(), CliError> {
        let blocks = self.state.blocks();
        let mut text = String::new();
        for block in &blocks {
            let bytes = canonical_encode(block).expect("blocks are canonical");
            text.push_str(std::str::from_utf8(&bytes).expect("canonical JSON is UTF-8"));
            text.push('\n');
        }
        match file {
            Some(path) => std::fs::write(path, text).map_err(io_err(path)),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    async fn get(&self, path: &str) -> Result<Value, CliError> {
        let req = Request::builder().method(Method::GET).uri(path).body(Body::empty()).expect("valid request");
        self.send(req).await
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, CliError> {
        let key: SigningKey = auth::read_key_file(&self.key_path)?;
        let bytes = serde_json::to_vec(&body).expect("JSON serializes");
        let signature = auth::sign_request(&key, "POST", path, &bytes);
        let req = Request::builder()
            .method(Method::POST)
            .uri(path)
            .header("content-type", "application/json")
            .header(ACTOR_HEADER, &self.actor)
            .header(SIGNATURE_HEADER, signature)
            .body(Body::from(bytes))
            .expect("valid request");
        self.send(req).await
    }

    async fn send(&self, req: Request<Body>) -> Result<Value, CliError> {
        let response = self.router.clone().oneshot(req).await.expect("router is infallible");
        let status = response.status();
        let bytes = response.into_body().collect().await.map_err(|e| CliError::Invalid(e.to_string()))?.to_bytes();
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| CliError::Invalid(format!("malformed response: {e}")));
        }
        let ErrorBody { code, message } = serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| ErrorBody { code: status.as_str().into(), message: String::from_utf8_lossy(&bytes).into_owned() });
        Err(CliError::Api { status, code, message })
    }
}

fn sim_run(out: Output, scenario: &Path, seed: u64, difficulty: u32) -> Result<(), CliError> {
    let text = std::fs::read_to_string(scenario).map_err(io_err(scenario))?;
    let script: Script = text.parse()?;
    let network = run_script(&script, seed, difficulty)?;
    let reports = network.reports();
    let honest: Vec<_> = reports.iter().filter(|r| r.byzantine.is_none() && r.online).collect();
    let converged = honest.windows(2).all(|w| w[0].digest == w[1].digest);
    match out {
        Output::Json => {
            let nodes: Vec<Value> = reports
                .iter()
                .map(|r| {
                    json!({
                        "node": r.node_id,
                        "online": r.online,
                        "byzantine": r.byzantine.map(|b| b.to_string()),
                        "height": r.height,
                        "total_work": r.total_work,
                        "tip": r.tip,
                        "pending": r.pending,
                        "digest": r.digest,
                    })
                })
                .collect();
            let stats = network.stats();
            emit(
                out,
                &json!({
                    "nodes": nodes,
                    "converged": converged,
                    "delivered": stats.delivered,
                    "dropped": stats.dropped,
                    "mined": stats.mined,
                }),
            );
        }
        Output::Table => {
            println!("{:<8} {:<7} {:<10} {:>6} {:>10} {:<16} {:<16}", "node", "online", "byzantine", "height", "work", "tip", "digest");
            for r in &reports {
                println!(
                    "{:<8} {:<7} {:<10} {:>6} {:>10} {:<16} {:<16}",
                    r.node_id,
                    if r.online { "yes" } else { "no" },
                    r.byzantine.map_or_else(|| "-".to_string(), |b| b.to_string()),
                    r.height,
                    r.total_work,
                    &r.tip.to_hex()[..16],
                    &r.digest.to_hex()[..16],
                );
            }
            println!("converged: {}", if converged { "yes" } else { "no" });
        }
    }
    Ok(())
}

fn validate_chain_file(out: Output, file: &Path) -> Result<(), CliError> {
    let text = std::fs::read(file).map_err(io_err(file))?;
    let mut blocks = Vec::new();
    for (i, line) in text.split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let block = canonical_decode::<Block>(line).map_err(|e| CliError::ChainFile { line: i + 1, message: e.to_string() })?;
        blocks.push(block);
    }
    validate_chain(&blocks)?;
    let tip = blocks.last().expect("a valid chain has a genesis block");
    emit(out, &json!({ "valid": true, "height": tip.height(), "tip": tip.hash(), "blocks": blocks.len() }));
    Ok(())
}

/// Prints a response as pretty JSON or as aligned `key  value` rows.
fn emit(out: Output, value: &Value) {
    match out {
        Output::Json => println!("{}", serde_json::to_string_pretty(value).expect("JSON serializes")),
        Output::Table => print!("{}", table(value)),
    }
}

fn table(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let width = map.keys().map(String::len).max().unwrap_or(0);
            map.iter().map(|(k, v)| format!("{k:<width$}  {}\n", cell(v))).collect()
        }
        Value::Array(items) if items.is_empty() => "(none)\n".into(),
        Value::Array(items) => items.iter().map(table).collect::<Vec<_>>().join("\n"),
        other => format!("{}\n", cell(other)),
    }
}

fn cell(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}
