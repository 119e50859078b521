//! SHA-256 digests and Ed25519 keys/signatures.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("seed must be 32 bytes, got {0}")]
    InvalidSeedLength(usize),
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("expected {expected} bytes, got {got}")]
    InvalidLength { expected: usize, got: usize },
}

fn parse_hex<const N: usize>(s: &str) -> Result<[u8; N], CryptoError> {
    let bytes = hex::decode(s.trim()).map_err(|e| CryptoError::Hex(e.to_string()))?;
    bytes.as_slice().try_into().map_err(|_| CryptoError::InvalidLength {
        expected: N,
        got: bytes.len(),
    })
}

macro_rules! byte_newtype {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                parse_hex::<$len>(s).map(Self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl Encode for $name {
            fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
                w.raw(&self.0);
                Ok(())
            }
        }

        impl Decode for $name {
            fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                r.array::<$len>().map(Self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);

byte_newtype!(Hash32, 32);

/// All-zero sentinel: "no removable predecessor". Never the digest of
/// protocol content.
pub const NULL_HASH: Hash32 = Hash32([0u8; 32]);

impl Hash32 {
    pub fn is_null(&self) -> bool {
        *self == NULL_HASH
    }
}

pub fn digest(data: &[u8]) -> Hash32 {
    Hash32(Sha256::digest(data).into())
}

/// Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PubKey(pub [u8; 32]);

byte_newtype!(PubKey, 32);

/// Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

byte_newtype!(Signature, 64);

impl Signature {
    /// Placeholder used while computing the signing payload.
    pub const EMPTY: Signature = Signature([0u8; 64]);
}

/// Secret signing key plus its public key.
#[derive(Clone)]
pub struct KeyPair {
    secret: SigningKey,
    public: PubKey,
}

impl KeyPair {
    pub fn pubkey(&self) -> PubKey {
        self.public
    }

    pub fn seed(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public && self.secret.to_bytes() == other.secret.to_bytes()
    }
}

impl Eq for KeyPair {}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub fn keypair_from_seed(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; 32] = seed
        .try_into()
        .map_err(|_| CryptoError::InvalidSeedLength(seed.len()))?;
    let secret = SigningKey::from_bytes(&seed);
    let public = PubKey(secret.verifying_key().to_bytes());
    Ok(KeyPair { secret, public })
}

pub fn sign_payload(kp: &KeyPair, payload: &[u8]) -> Signature {
    Signature(kp.secret.sign(payload).to_bytes())
}

/// Total: malformed keys or signatures yield `false`.
pub fn verify_signature(pk: &PubKey, payload: &[u8], sig: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    key.verify_strict(payload, &sig).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(b: u8) -> [u8; 32] {
        [b; 32]
    }

    #[test]
    fn empty_digest_matches_reference_vector() {
        assert_eq!(
            digest(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            digest(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_distinguishes_corpus() {
        let corpus: [&[u8]; 5] = [b"", b"a", b"b", b"ab", b"ba"];
        for (i, a) in corpus.iter().enumerate() {
            assert_eq!(digest(a), digest(a));
            for b in &corpus[i + 1..] {
                assert_ne!(digest(a), digest(b));
            }
        }
        assert!(!digest(b"").is_null());
    }

    #[test]
    fn keypair_is_deterministic() {
        let a = keypair_from_seed(&seed(1)).unwrap();
        assert_eq!(a, keypair_from_seed(&seed(1)).unwrap());
        assert_eq!(a.pubkey().as_bytes().len(), 32);
        assert_ne!(a.pubkey(), keypair_from_seed(&seed(2)).unwrap().pubkey());
    }

    #[test]
    fn wrong_seed_length() {
        assert_eq!(
            keypair_from_seed(&[0u8; 31]).unwrap_err(),
            CryptoError::InvalidSeedLength(31)
        );
    }

    #[test]
    fn sign_verify_round_trip_and_tamper() {
        let kp = keypair_from_seed(&seed(3)).unwrap();
        let other = keypair_from_seed(&seed(4)).unwrap();
        let msg = b"payload";
        let sig = sign_payload(&kp, msg);
        assert!(verify_signature(&kp.pubkey(), msg, &sig));
        assert!(!verify_signature(&kp.pubkey(), b"payload!", &sig));
        assert!(!verify_signature(&other.pubkey(), msg, &sig));
    }

    #[test]
    fn malformed_key_is_false_not_panic() {
        // y = 2 is not on the curve
        let mut bad = [0u8; 32];
        bad[0] = 2;
        let kp = keypair_from_seed(&seed(5)).unwrap();
        let sig = sign_payload(&kp, b"x");
        assert!(!verify_signature(&PubKey(bad), b"x", &sig));
        assert!(!verify_signature(&kp.pubkey(), b"x", &Signature([0xff; 64])));
    }

    #[test]
    fn hex_round_trip() {
        let h = digest(b"x");
        assert_eq!(Hash32::from_hex(&h.to_hex()).unwrap(), h);
        assert!(Hash32::from_hex("abcd").is_err());
    }
}
