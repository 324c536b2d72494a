//! Small text helpers shared by the tree, case and option code.

/// Canonical comparison key for disease labels and evidence text:
/// case-folded, internal whitespace collapsed, trailing punctuation trimmed.
pub fn normalize_label(raw: &str) -> String {
    let folded = raw.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| ".,;:!?。，；：！？、".contains(c) || c.is_whitespace())
        .to_string()
}

/// Stable 64-bit hash of a string (first eight bytes of its SHA-256).
pub fn stable_hash(value: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(value.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

/// Hex SHA-256 of arbitrary bytes, used for trace and transcript digests.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
