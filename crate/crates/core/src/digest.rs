use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(parts: &[&str]) -> String {
    hex::encode(sha256_bytes(parts))
}

/// Hashes `parts` separated by the ASCII unit separator, so that
/// `["ab", "c"]` and `["a", "bc"]` never collide.
pub(crate) fn sha256_bytes(parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    hasher.finalize().into()
}
