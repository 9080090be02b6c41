//! Blocks, quorum certificates and wire messages.
//!
//! Every message encodes as a one-byte kind tag followed by little-endian
//! fixed-width fields; [`Msg::wire_bytes`] is the exact encoded length.

use std::collections::BTreeSet;

use crate::model::{Digest, NodeId, Transaction};

use super::signer::Signer;

pub type View = u64;

pub fn leader_of(view: View, n: usize) -> NodeId {
    NodeId((view % n as u64) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Prepare,
    PreCommit,
    Commit,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::Prepare => 0,
            Phase::PreCommit => 1,
            Phase::Commit => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub view: View,
    pub height: u64,
    pub parent: Digest,
    pub proposer: NodeId,
    pub batch: Vec<Transaction>,
}

impl Block {
    pub fn genesis() -> Self {
        Self {
            view: 0,
            height: 0,
            parent: Digest([0; 32]),
            proposer: NodeId(0),
            batch: Vec::new(),
        }
    }

    fn encoded_len(&self) -> usize {
        8 + 8 + 32 + 4 + 4 + self.batch.iter().map(Transaction::encoded_len).sum::<usize>()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.view.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.parent.0);
        out.extend_from_slice(&self.proposer.0.to_le_bytes());
        out.extend_from_slice(&(self.batch.len() as u32).to_le_bytes());
        for tx in &self.batch {
            tx.encode_into(out);
        }
    }

    pub fn hash(&self) -> Digest {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut buf);
        Digest::of_bytes(&buf)
    }
}

/// Bytes a voter attests to.
pub fn vote_payload(view: View, phase: Phase, block: &Digest) -> [u8; 41] {
    let mut out = [0u8; 41];
    out[..8].copy_from_slice(&view.to_le_bytes());
    out[8] = phase.tag();
    out[9..].copy_from_slice(&block.0);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumCert {
    pub view: View,
    pub phase: Phase,
    pub block: Digest,
    /// Distinct signers with their attestations, ascending by id.
    pub signers: Vec<(NodeId, Digest)>,
}

impl QuorumCert {
    pub fn genesis() -> Self {
        Self {
            view: 0,
            phase: Phase::Prepare,
            block: Block::genesis().hash(),
            signers: Vec::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        *self == Self::genesis()
    }

    pub fn signer_set(&self) -> BTreeSet<NodeId> {
        self.signers.iter().map(|(id, _)| *id).collect()
    }

    /// At least `quorum` distinct in-range signers, every attestation valid.
    pub fn verify(&self, signer: &dyn Signer, n: usize, quorum: usize) -> bool {
        if self.is_genesis() {
            return true;
        }
        let distinct = self.signers.windows(2).all(|w| w[0].0 < w[1].0);
        if !distinct || self.signers.len() < quorum {
            return false;
        }
        let payload = vote_payload(self.view, self.phase, &self.block);
        self.signers
            .iter()
            .all(|(id, tok)| id.index() < n && signer.verify(*id, &payload, tok))
    }

    fn encoded_len(&self) -> usize {
        8 + 1 + 32 + 4 + self.signers.len() * (4 + 32)
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.view.to_le_bytes());
        out.push(self.phase.tag());
        out.extend_from_slice(&self.block.0);
        out.extend_from_slice(&(self.signers.len() as u32).to_le_bytes());
        for (id, tok) in &self.signers {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&tok.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub voter: NodeId,
    pub view: View,
    pub phase: Phase,
    pub block: Digest,
    pub attestation: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Msg {
    NewView { view: View, justify: QuorumCert },
    Prepare { view: View, block: Block, justify: QuorumCert },
    Vote(Vote),
    PreCommit { view: View, qc: QuorumCert },
    Commit { view: View, qc: QuorumCert },
    Decide { view: View, qc: QuorumCert },
    BlockRequest { hash: Digest },
    BlockResponse { block: Block },
}

impl Msg {
    pub fn tag(&self) -> u8 {
        match self {
            Msg::NewView { .. } => 0x10,
            Msg::Prepare { .. } => 0x11,
            Msg::Vote(_) => 0x12,
            Msg::PreCommit { .. } => 0x13,
            Msg::Commit { .. } => 0x14,
            Msg::Decide { .. } => 0x15,
            Msg::BlockRequest { .. } => 0x16,
            Msg::BlockResponse { .. } => 0x17,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Msg::NewView { .. } => "NEW-VIEW",
            Msg::Prepare { .. } => "PREPARE",
            Msg::Vote(_) => "VOTE",
            Msg::PreCommit { .. } => "PRE-COMMIT",
            Msg::Commit { .. } => "COMMIT",
            Msg::Decide { .. } => "DECIDE",
            Msg::BlockRequest { .. } => "BLOCK-REQ",
            Msg::BlockResponse { .. } => "BLOCK-RESP",
        }
    }

    pub fn wire_bytes(&self) -> usize {
        1 + match self {
            Msg::NewView { justify, .. } => 8 + justify.encoded_len(),
            Msg::Prepare { block, justify, .. } => 8 + block.encoded_len() + justify.encoded_len(),
            Msg::Vote(_) => 4 + 8 + 1 + 32 + 32,
            Msg::PreCommit { qc, .. } | Msg::Commit { qc, .. } | Msg::Decide { qc, .. } => {
                8 + qc.encoded_len()
            }
            Msg::BlockRequest { .. } => 32,
            Msg::BlockResponse { block } => block.encoded_len(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_bytes());
        out.push(self.tag());
        match self {
            Msg::NewView { view, justify } => {
                out.extend_from_slice(&view.to_le_bytes());
                justify.encode_into(&mut out);
            }
            Msg::Prepare { view, block, justify } => {
                out.extend_from_slice(&view.to_le_bytes());
                block.encode_into(&mut out);
                justify.encode_into(&mut out);
            }
            Msg::Vote(v) => {
                out.extend_from_slice(&v.voter.0.to_le_bytes());
                out.extend_from_slice(&vote_payload(v.view, v.phase, &v.block));
                out.extend_from_slice(&v.attestation.0);
            }
            Msg::PreCommit { view, qc } | Msg::Commit { view, qc } | Msg::Decide { view, qc } => {
                out.extend_from_slice(&view.to_le_bytes());
                qc.encode_into(&mut out);
            }
            Msg::BlockRequest { hash } => out.extend_from_slice(&hash.0),
            Msg::BlockResponse { block } => block.encode_into(&mut out),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::signer::KeyedHashSigner;
    use crate::model::RoundId;

    fn qc(signer: &KeyedHashSigner, ids: &[u32]) -> QuorumCert {
        let block = Digest([5; 32]);
        let payload = vote_payload(3, Phase::Prepare, &block);
        QuorumCert {
            view: 3,
            phase: Phase::Prepare,
            block,
            signers: ids
                .iter()
                .map(|&i| (NodeId(i), signer.sign(NodeId(i), &payload)))
                .collect(),
        }
    }

    #[test]
    fn wire_bytes_match_encoding() {
        let s = KeyedHashSigner::new(6, 1);
        let block = Block {
            view: 4,
            height: 2,
            parent: Digest([1; 32]),
            proposer: NodeId(4),
            batch: vec![
                Transaction::upd(NodeId(1), RoundId(1), 0, Digest([2; 32])),
                Transaction::agg(NodeId(2), RoundId(1), 1),
            ],
        };
        let msgs = vec![
            Msg::NewView { view: 4, justify: qc(&s, &[0, 1, 2, 3, 4]) },
            Msg::Prepare { view: 4, block: block.clone(), justify: QuorumCert::genesis() },
            Msg::Vote(Vote {
                voter: NodeId(1),
                view: 4,
                phase: Phase::Commit,
                block: block.hash(),
                attestation: Digest([9; 32]),
            }),
            Msg::PreCommit { view: 4, qc: qc(&s, &[1, 2, 3, 4, 5]) },
            Msg::Commit { view: 4, qc: qc(&s, &[1, 2, 3, 4, 5]) },
            Msg::Decide { view: 4, qc: qc(&s, &[1, 2, 3, 4, 5]) },
            Msg::BlockRequest { hash: block.hash() },
            Msg::BlockResponse { block },
        ];
        let mut tags = BTreeSet::new();
        for m in msgs {
            assert_eq!(m.encode().len(), m.wire_bytes(), "{}", m.label());
            assert!(tags.insert(m.tag()));
        }
    }

    #[test]
    fn qc_verification() {
        let s = KeyedHashSigner::new(6, 1);
        assert!(qc(&s, &[0, 1, 2, 3, 4]).verify(&s, 6, 5));
        assert!(!qc(&s, &[0, 1, 2, 3]).verify(&s, 6, 5));
        let mut dup = qc(&s, &[0, 1, 2, 3, 4]);
        dup.signers[1] = dup.signers[0];
        assert!(!dup.verify(&s, 6, 5));
        let mut forged = qc(&s, &[0, 1, 2, 3, 4]);
        forged.block = Digest([6; 32]);
        assert!(!forged.verify(&s, 6, 5));
        assert!(QuorumCert::genesis().verify(&s, 6, 5));
    }

    #[test]
    fn block_hash_covers_batch() {
        let mut b = Block::genesis();
        let h0 = b.hash();
        b.batch.push(Transaction::agg(NodeId(0), RoundId(1), 0));
        assert_ne!(b.hash(), h0);
    }

    #[test]
    fn leader_rotates() {
        let leaders: Vec<_> = (0..8).map(|v| leader_of(v, 4).0).collect();
        assert_eq!(leaders, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }
}
