//! Vote attestations.
//!
//! [`KeyedHashSigner`] is a stand-in for real signatures: each node's key is
//! `SHA-256(secret ‖ id)` and a token is `SHA-256(key ‖ message)`. The
//! verifier shares the secret, so this authenticates only against nodes that
//! do not know it. Swap in a real scheme behind [`Signer`].

use sha2::{Digest as _, Sha256};

use crate::model::{Digest, NodeId};

pub trait Signer {
    fn sign(&self, signer: NodeId, msg: &[u8]) -> Digest;
    fn verify(&self, signer: NodeId, msg: &[u8], token: &Digest) -> bool;
}

#[derive(Debug, Clone)]
pub struct KeyedHashSigner {
    keys: Vec<[u8; 32]>,
}

impl KeyedHashSigner {
    pub fn new(n: usize, secret: u64) -> Self {
        let keys = (0..n as u32)
            .map(|i| {
                let mut h = Sha256::new();
                h.update(secret.to_le_bytes());
                h.update(i.to_le_bytes());
                h.finalize().into()
            })
            .collect();
        Self { keys }
    }
}

impl Signer for KeyedHashSigner {
    fn sign(&self, signer: NodeId, msg: &[u8]) -> Digest {
        let mut h = Sha256::new();
        h.update(self.keys[signer.index()]);
        h.update(msg);
        Digest(h.finalize().into())
    }

    fn verify(&self, signer: NodeId, msg: &[u8], token: &Digest) -> bool {
        signer.index() < self.keys.len() && self.sign(signer, msg) == *token
    }
}
