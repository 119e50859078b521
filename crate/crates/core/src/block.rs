//! Permanent and removable blocks.
//!
//! Permanent block `B_i` links to `B_{i-1}` and to the last removable block of
//! interval `I_i`. Removable block `B_{i.j}` links only to its predecessor:
//! `B_{i-1}` for `j = 1`, otherwise `B_{i.(j-1)}`. Removable blocks carry no
//! nonce and are released together with the permanent block that closes
//! their interval.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_encode, CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{digest, Hash32, PubKey, NULL_HASH};
use crate::ledger::ChainError;
use crate::tx::{validate_stateless, Transaction, TxId};

/// Maximum number of keys a permanent header's P-list may hold.
pub const P_LIST_CAPACITY: usize = 4;

/// Encoded size of a permanent header with an empty P-list.
pub const PERMANENT_HEADER_FIXED_LEN: usize = 4 + 32 + 32 + 1 + 1 + 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovableBlockHeader {
    pub interval: u32,
    /// 1-based position inside the interval.
    pub position: u16,
    pub prev: Hash32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovableBlock {
    pub header: RemovableBlockHeader,
    pub transactions: Vec<Transaction>,
}

impl RemovableBlock {
    /// Digest over header and body.
    pub fn hash(&self) -> Hash32 {
        digest(&canonical_encode(self).expect("blocks built by this crate encode"))
    }

    pub fn interval(&self) -> u32 {
        self.header.interval
    }

    pub fn position(&self) -> u16 {
        self.header.position
    }
}

impl Encode for RemovableBlockHeader {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u32(self.interval);
        w.u16(self.position);
        self.prev.encode(w)
    }
}

impl Decode for RemovableBlockHeader {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            interval: r.u32()?,
            position: r.u16()?,
            prev: Hash32::decode(r)?,
        })
    }
}

impl Encode for RemovableBlock {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        self.header.encode(w)?;
        w.seq("transactions", &self.transactions)
    }
}

impl Decode for RemovableBlock {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            header: RemovableBlockHeader::decode(r)?,
            transactions: r.seq()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermanentBlockHeader {
    pub height: u32,
    pub prev_permanent: Hash32,
    /// Hash of `B_{i.|I_i|}`, or `NULL_HASH` for an empty interval.
    pub prev_removable: Hash32,
    pub interval_len: u8,
    /// Sorted, deduplicated signers of the removable transactions in `I_i`.
    pub p_list: Vec<PubKey>,
    pub tx_root: Hash32,
}

impl PermanentBlockHeader {
    pub fn hash(&self) -> Hash32 {
        digest(&canonical_encode(self).expect("headers built by this crate encode"))
    }
}

impl Encode for PermanentBlockHeader {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u32(self.height);
        self.prev_permanent.encode(w)?;
        self.prev_removable.encode(w)?;
        w.u8(self.interval_len);
        let count = u8::try_from(self.p_list.len()).map_err(|_| CodecError::TooManyItems {
            what: "p_list",
            count: self.p_list.len(),
            max: u8::MAX as usize,
        })?;
        w.u8(count);
        self.p_list.iter().try_for_each(|k| k.encode(w))?;
        self.tx_root.encode(w)
    }
}

impl Decode for PermanentBlockHeader {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let height = r.u32()?;
        let prev_permanent = Hash32::decode(r)?;
        let prev_removable = Hash32::decode(r)?;
        let interval_len = r.u8()?;
        let n = r.u8()? as usize;
        let p_list = (0..n).map(|_| PubKey::decode(r)).collect::<Result<_, _>>()?;
        Ok(Self {
            height,
            prev_permanent,
            prev_removable,
            interval_len,
            p_list,
            tx_root: Hash32::decode(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermanentBlock {
    pub header: PermanentBlockHeader,
    pub transactions: Vec<Transaction>,
}

impl PermanentBlock {
    /// Header digest; the body is committed through `tx_root`.
    pub fn hash(&self) -> Hash32 {
        self.header.hash()
    }

    pub fn height(&self) -> u32 {
        self.header.height
    }
}

impl Encode for PermanentBlock {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        self.header.encode(w)?;
        w.seq("transactions", &self.transactions)
    }
}

impl Decode for PermanentBlock {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            header: PermanentBlockHeader::decode(r)?,
            transactions: r.seq()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    Permanent(PermanentBlock),
    Removable(RemovableBlock),
}

impl From<PermanentBlock> for Block {
    fn from(b: PermanentBlock) -> Self {
        Block::Permanent(b)
    }
}

impl From<RemovableBlock> for Block {
    fn from(b: RemovableBlock) -> Self {
        Block::Removable(b)
    }
}

/// Digest over the count-prefixed list of transaction ids.
pub fn tx_root(txs: &[Transaction]) -> Hash32 {
    let ids: Vec<TxId> = txs.iter().map(Transaction::id).collect();
    let mut w = Writer::new();
    w.seq("tx ids", &ids).expect("block bodies are bounded by the codec");
    digest(&w.into_bytes())
}

pub fn build_removable_block(
    prev: Hash32,
    interval: u32,
    position: u16,
    txs: Vec<Transaction>,
) -> Result<RemovableBlock, ChainError> {
    if position == 0 {
        return Err(ChainError::PositionMismatch {
            expected: 1,
            found: 0,
        });
    }
    for tx in &txs {
        if !tx.kind().is_removable() {
            return Err(ChainError::BlockShape {
                txid: tx.id(),
                kind: tx.kind(),
            });
        }
        validate_stateless(tx).map_err(|e| ChainError::InvalidTransaction {
            txid: tx.id(),
            error: e,
        })?;
    }
    let block = RemovableBlock {
        header: RemovableBlockHeader {
            interval,
            position,
            prev,
        },
        transactions: txs,
    };
    canonical_encode(&block)?;
    Ok(block)
}

/// Sorted, deduplicated signer keys of every transaction in the interval.
pub fn derive_p_list(interval_blocks: &[RemovableBlock]) -> Vec<PubKey> {
    interval_blocks
        .iter()
        .flat_map(|b| b.transactions.iter().map(|tx| tx.signer))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Byte cost of the mutability fields of a permanent header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderOverhead {
    pub second_link: usize,
    pub interval_len: usize,
    /// One count byte plus 32 bytes per key.
    pub p_list: usize,
    pub total: usize,
}

impl HeaderOverhead {
    /// Second link plus interval length; independent of the P-list.
    pub fn fixed(&self) -> usize {
        self.second_link + self.interval_len
    }
}

pub fn header_overhead(header: &PermanentBlockHeader) -> HeaderOverhead {
    let second_link = NULL_HASH.as_bytes().len();
    let interval_len = std::mem::size_of_val(&header.interval_len);
    let p_list = 1 + header.p_list.len() * PubKey::LEN;
    HeaderOverhead {
        second_link,
        interval_len,
        p_list,
        total: second_link + interval_len + p_list,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keypair_from_seed, KeyPair};

    fn kp(b: u8) -> KeyPair {
        keypair_from_seed(&[b; 32]).unwrap()
    }

    fn header(keys: usize) -> PermanentBlockHeader {
        PermanentBlockHeader {
            height: 1,
            prev_permanent: digest(b"p"),
            prev_removable: NULL_HASH,
            interval_len: 0,
            p_list: (0..keys).map(|i| kp(i as u8 + 1).pubkey()).collect(),
            tx_root: tx_root(&[]),
        }
    }

    #[test]
    fn header_layout_size() {
        // 4 + 32 + 32 + 1 + 1 + 32, hand-summed
        assert_eq!(PERMANENT_HEADER_FIXED_LEN, 102);
        assert_eq!(canonical_encode(&header(0)).unwrap().len(), 102);
        assert_eq!(canonical_encode(&header(2)).unwrap().len(), 102 + 64);
    }

    #[test]
    fn overhead_fixed_part_is_33_bytes() {
        for keys in [0, 1, 4] {
            assert_eq!(header_overhead(&header(keys)).fixed(), 33);
        }
        let empty = header_overhead(&header(0));
        assert_eq!((empty.second_link, empty.interval_len, empty.p_list), (32, 1, 1));
        let four = header_overhead(&header(4));
        assert_eq!(four.p_list, 129);
        assert_eq!(four.total, 162);
    }

    #[test]
    fn removable_block_rejects_permanent_kinds() {
        let a = kp(1);
        let reg = Transaction::register(&a);
        assert!(matches!(
            build_removable_block(NULL_HASH, 1, 1, vec![reg]),
            Err(ChainError::BlockShape { .. })
        ));
    }

    #[test]
    fn empty_removable_block_is_valid() {
        let b = build_removable_block(digest(b"b0"), 1, 1, vec![]).unwrap();
        assert!(b.transactions.is_empty());
        assert_ne!(b.hash(), NULL_HASH);
    }

    #[test]
    fn p_list_is_sorted_and_deduplicated() {
        let (a, b) = (kp(1), kp(2));
        let ra = Transaction::register(&a).id();
        let rb = Transaction::register(&b).id();
        let blocks = vec![
            build_removable_block(
                NULL_HASH,
                1,
                1,
                vec![
                    Transaction::removable(&b, rb, "x"),
                    Transaction::removable(&a, ra, "m"),
                ],
            )
            .unwrap(),
            build_removable_block(NULL_HASH, 1, 2, vec![Transaction::removable(&b, rb, "y")])
                .unwrap(),
        ];
        let mut expected = vec![a.pubkey(), b.pubkey()];
        expected.sort();
        assert_eq!(derive_p_list(&blocks), expected);
        assert!(derive_p_list(&[]).is_empty());
    }

    #[test]
    fn removable_hash_commits_to_body() {
        let a = kp(1);
        let ra = Transaction::register(&a).id();
        let b1 = build_removable_block(NULL_HASH, 1, 1, vec![Transaction::removable(&a, ra, "m")])
            .unwrap();
        let b2 = build_removable_block(NULL_HASH, 1, 1, vec![Transaction::removable(&a, ra, "o")])
            .unwrap();
        assert_ne!(b1.hash(), b2.hash());
    }
}
