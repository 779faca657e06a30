//! SHA-256 helpers shared by the artifact store, run directories and the
//! backend protocol.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON encoding of `value`.
///
/// `serde_json::Value` keeps object keys sorted, so converting through it
/// first gives a key-order independent encoding.
pub fn canonical_json_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("serializable value");
    sha256_hex(&serde_json::to_vec(&canonical).expect("json encoding"))
}

pub fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b = json!({"a":[1,2],"b":1});
        assert_eq!(canonical_json_hash(&a), canonical_json_hash(&b));
        assert!(is_sha256_hex(&canonical_json_hash(&a)));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
