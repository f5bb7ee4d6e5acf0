//! Light tile obfuscation.
//!
//! A SHA-256 keystream over `key || nonce || counter`, XORed into the blob and
//! prefixed with a short marker. This is obfuscation at rest, not strong
//! encryption: there is no authentication.

use sha2::{Digest, Sha256};

use super::PyramidError;

pub const KEY_LEN: usize = 16;
/// Marker prefixed to every obfuscated blob; never a JPEG SOI.
pub const MARKER: [u8; 3] = *b"TE\x01";

pub type TileKey = [u8; KEY_LEN];

fn check_key(key: &[u8]) -> Result<(), PyramidError> {
    if key.len() != KEY_LEN {
        return Err(PyramidError::Key(format!(
            "key must be {KEY_LEN} bytes, got {}",
            key.len()
        )));
    }
    Ok(())
}

fn apply_keystream(data: &mut [u8], key: &[u8], nonce: &[u8]) {
    for (counter, chunk) in data.chunks_mut(32).enumerate() {
        let block = keystream_block(key, nonce, counter as u64);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

pub(crate) fn keystream_block(key: &[u8], nonce: &[u8], counter: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(key);
    h.update((nonce.len() as u32).to_le_bytes());
    h.update(nonce);
    h.update(counter.to_le_bytes());
    h.finalize().into()
}

pub fn light_encrypt(blob: &[u8], key: &[u8], nonce: &[u8]) -> Result<Vec<u8>, PyramidError> {
    check_key(key)?;
    let mut out = Vec::with_capacity(MARKER.len() + blob.len());
    out.extend_from_slice(&MARKER);
    out.extend_from_slice(blob);
    apply_keystream(&mut out[MARKER.len()..], key, nonce);
    Ok(out)
}

pub fn light_decrypt(blob: &[u8], key: &[u8], nonce: &[u8]) -> Result<Vec<u8>, PyramidError> {
    check_key(key)?;
    let Some(body) = blob.strip_prefix(&MARKER) else {
        return Err(PyramidError::Key("blob is not obfuscated".into()));
    };
    let mut out = body.to_vec();
    apply_keystream(&mut out, key, nonce);
    Ok(out)
}

/// Derives a per-cut key from a secret and a label; deterministic so that
/// re-running a cut reproduces identical bytes.
pub fn derive_key(secret: &[u8], label: &[u8]) -> TileKey {
    let mut h = Sha256::new();
    h.update(b"terratile-key\0");
    h.update(secret);
    h.update(label);
    let digest = h.finalize();
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&digest[..KEY_LEN]);
    key
}

/// Short printable identifier for a key, safe to log and store beside tiles.
pub fn key_id(key: &TileKey) -> String {
    let digest = Sha256::digest(key);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_key_still_changes_magic() {
        let jpeg = [0xFF, 0xD8, 0xFF, 0xE0, 0, 16, b'J', b'F', b'I', b'F'];
        let key = [0u8; KEY_LEN];
        let nonce = b"cell-0";
        let enc = light_encrypt(&jpeg, &key, nonce).unwrap();
        assert_ne!(&enc[..2], &[0xFF, 0xD8]);

        // Body equals plaintext XOR the oracle keystream.
        let block = keystream_block(&key, nonce, 0);
        for (i, b) in jpeg.iter().enumerate() {
            assert_eq!(enc[MARKER.len() + i], b ^ block[i]);
        }
        assert_eq!(light_decrypt(&enc, &key, nonce).unwrap(), jpeg);
    }

    #[test]
    fn per_tile_nonce_changes_ciphertext() {
        let blob = vec![0xAB; 100];
        let key = [7u8; KEY_LEN];
        let a = light_encrypt(&blob, &key, b"tile-0-0").unwrap();
        let b = light_encrypt(&blob, &key, b"tile-0-1").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_key_length() {
        assert!(matches!(
            light_encrypt(b"x", &[0u8; 15], b""),
            Err(PyramidError::Key(_))
        ));
        assert!(matches!(
            light_decrypt(b"TE\x01x", &[0u8; 17], b""),
            Err(PyramidError::Key(_))
        ));
    }

    proptest! {
        #[test]
        fn decrypt_inverts_encrypt(blob in proptest::collection::vec(any::<u8>(), 0..2000),
                                   key in proptest::array::uniform16(any::<u8>()),
                                   nonce in proptest::collection::vec(any::<u8>(), 0..24)) {
            let enc = light_encrypt(&blob, &key, &nonce).unwrap();
            prop_assert!(!enc.starts_with(&[0xFF, 0xD8]));
            prop_assert_eq!(light_decrypt(&enc, &key, &nonce).unwrap(), blob);
        }
    }
}
