//! Binary containers: an 8-byte magic, a little-endian version and a
//! bincode body. Used for JEI sessions and graph files.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SESSION_MAGIC: &[u8; 8] = b"LGSSESSN";
pub const GRAPH_MAGIC: &[u8; 8] = b"LGSGRAPH";
pub const SESSION_VERSION: u32 = 1;

pub fn encode<T: Serialize>(magic: &[u8; 8], version: u32, value: &T) -> Result<Vec<u8>> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&version.to_le_bytes());
    bincode::serialize_into(&mut out, value).map_err(|e| Error::Format(format!("encode: {e}")))?;
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(magic: &[u8; 8], version: u32, bytes: &[u8]) -> Result<T> {
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(Error::Format(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let v = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if v != version {
        return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
    }
    bincode::deserialize(&bytes[12..]).map_err(|e| Error::Format(format!("decode: {e}")))
}

/// Hex SHA-256 of the bincode encoding.
pub fn state_hash<T: Serialize>(value: &T) -> Result<String> {
    let b = bincode::serialize(value).map_err(|e| Error::Format(format!("encode: {e}")))?;
    Ok(hex(&Sha256::digest(&b)))
}

pub fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_rejects() {
        let v = vec![1u32, 2, 3];
        let b = encode(SESSION_MAGIC, 1, &v).unwrap();
        assert_eq!(decode::<Vec<u32>>(SESSION_MAGIC, 1, &b).unwrap(), v);
        assert!(decode::<Vec<u32>>(GRAPH_MAGIC, 1, &b).is_err());
        assert!(decode::<Vec<u32>>(SESSION_MAGIC, 2, &b).is_err());
        assert!(decode::<Vec<u32>>(SESSION_MAGIC, 1, &b[..5]).is_err());
        assert_eq!(state_hash(&v).unwrap(), state_hash(&vec![1u32, 2, 3]).unwrap());
    }
}
