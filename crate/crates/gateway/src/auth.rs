//! Request credentials: each mutating call is signed with the caller's
//! ed25519 key over its method, path and body.

use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use medalchain_core::hash::decode_lower_hex;
use medalchain_core::Hash32;

pub const ACTOR_HEADER: &str = "x-medalchain-actor";
pub const SIGNATURE_HEADER: &str = "x-medalchain-signature";

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("cannot read key file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("key file {0} must hold 64 lowercase hex characters")]
    Malformed(String),
}

pub fn generate_key() -> SigningKey {
    SigningKey::from_bytes(&rand::random::<[u8; 32]>())
}

/// The credential public key for a signing key.
pub fn public_key(key: &SigningKey) -> Hash32 {
    Hash32(key.verifying_key().to_bytes())
}

/// Bytes covered by a request signature.
pub fn signing_message(method: &str, path_and_query: &str, body: &[u8]) -> Vec<u8> {
    let mut msg = format!("{method} {path_and_query}\n").into_bytes();
    msg.extend_from_slice(body);
    msg
}

pub fn sign_request(key: &SigningKey, method: &str, path_and_query: &str, body: &[u8]) -> String {
    hex::encode(key.sign(&signing_message(method, path_and_query, body)).to_bytes())
}

/// True iff `signature_hex` is a valid signature by `public_key` over the request.
pub fn verify_request(public_key: &Hash32, signature_hex: &str, method: &str, path_and_query: &str, body: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public_key.as_bytes()) else { return false };
    let Some(sig) = decode_lower_hex(signature_hex).and_then(|b| <[u8; 64]>::try_from(b).ok()) else { return false };
    key.verify_strict(&signing_message(method, path_and_query, body), &Signature::from_bytes(&sig)).is_ok()
}

pub fn write_key_file(path: &Path, key: &SigningKey) -> std::io::Result<()> {
    use std::io::Write;
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut f = options.open(path)?;
    writeln!(f, "{}", hex::encode(key.to_bytes()))?;
    f.sync_all()
}

pub fn read_key_file(path: &Path) -> Result<SigningKey, KeyError> {
    let text = std::fs::read_to_string(path).map_err(|source| KeyError::Io { path: path.display().to_string(), source })?;
    decode_lower_hex(text.trim())
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .map(|b| SigningKey::from_bytes(&b))
        .ok_or_else(|| KeyError::Malformed(path.display().to_string()))
}
