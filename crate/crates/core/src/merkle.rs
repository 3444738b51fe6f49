//! Binary Merkle trees over 32-byte leaf hashes.
//!
//! Odd levels duplicate their last hash. The empty tree's root is SHA-256 of
//! the empty string and a single leaf is its own root.

use serde::{Deserialize, Serialize};

use crate::hash::Hash32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// The sibling sits to the left of the running hash.
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sibling {
    pub side: Side,
    pub hash: Hash32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<Sibling>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("leaf index {index} out of range for {len} leaves")]
pub struct IndexOutOfRange {
    pub index: usize,
    pub len: usize,
}

pub fn hash_pair(left: &Hash32, right: &Hash32) -> Hash32 {
    Hash32::digest_parts(&[left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Hash32]) -> Vec<Hash32> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => hash_pair(l, r),
            [l] => hash_pair(l, l),
            _ => unreachable!(),
        })
        .collect()
}

pub fn merkle_root(leaves: &[Hash32]) -> Hash32 {
    if leaves.is_empty() {
        return Hash32::digest(b"");
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

/// Inclusion proof for `leaves[index]`.
pub fn prove(leaves: &[Hash32], index: usize) -> Result<MerkleProof, IndexOutOfRange> {
    if index >= leaves.len() {
        return Err(IndexOutOfRange { index, len: leaves.len() });
    }
    let mut siblings = Vec::new();
    let mut level = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let sibling = if pos.is_multiple_of(2) {
            let hash = level.get(pos + 1).copied().unwrap_or(level[pos]);
            Sibling { side: Side::Right, hash }
        } else {
            Sibling { side: Side::Left, hash: level[pos - 1] }
        };
        siblings.push(sibling);
        level = next_level(&level);
        pos /= 2;
    }
    Ok(MerkleProof { leaf_index: index as u64, siblings })
}

/// Folds `leaf` through the proof's siblings and compares with `root`.
pub fn verify_proof(leaf: &Hash32, proof: &MerkleProof, root: &Hash32) -> bool {
    let folded = proof.siblings.iter().fold(*leaf, |acc, s| match s.side {
        Side::Left => hash_pair(&s.hash, &acc),
        Side::Right => hash_pair(&acc, &s.hash),
    });
    folded == *root
}
