//! Mutable blockchain protocol core.
//!
//! Permanent blocks form an ordinary hash chain. Between two permanent blocks
//! sits an interval of removable blocks that can later be erased through
//! on-chain Prepare and Delete transactions, while the permanent chain stays
//! verifiable.

pub mod block;
pub mod codec;
pub mod consent;
pub mod crypto;
pub mod ledger;
pub mod mempool;
pub mod tx;
pub mod verify;

pub use block::{
    build_removable_block, derive_p_list, header_overhead, tx_root, Block, HeaderOverhead,
    PermanentBlock, PermanentBlockHeader, RemovableBlock, RemovableBlockHeader, P_LIST_CAPACITY,
};
pub use codec::{canonical_decode, canonical_encode, CodecError, Decode, Encode};
pub use crypto::{
    digest, keypair_from_seed, sign_payload, verify_signature, Hash32, KeyPair, PubKey, Signature,
    NULL_HASH,
};
pub use ledger::{
    build_permanent_block, ChainError, DeleteError, IntervalStatus, Ledger, LedgerConfig,
    MinerJudge, PrepareError, RemovalPolicy,
};
pub use tx::{
    build_transaction, tx_id, validate_stateless, OutPoint, Payload, Transaction, TxError, TxId,
    TxKind, TxParams,
};
