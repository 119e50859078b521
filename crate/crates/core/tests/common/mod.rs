#![allow(dead_code)]

use mutachain_core::{
    build_permanent_block, build_removable_block, keypair_from_seed, ChainError, KeyPair, Ledger,
    LedgerConfig, RemovableBlock, Transaction, TxId,
};

pub fn key(name: &str) -> KeyPair {
    let mut seed = [0u8; 32];
    seed[..name.len()].copy_from_slice(name.as_bytes());
    keypair_from_seed(&seed).unwrap()
}

pub fn reg_id(kp: &KeyPair) -> TxId {
    Transaction::register(kp).id()
}

/// Builds removable blocks for the next interval, one block per inner list.
pub fn interval(ledger: &Ledger, blocks: Vec<Vec<Transaction>>) -> Vec<RemovableBlock> {
    let h = ledger.next_height();
    let mut prev = ledger.tip_hash();
    let mut out = Vec::new();
    for (j, txs) in blocks.into_iter().enumerate() {
        let b = build_removable_block(prev, h, j as u16 + 1, txs).unwrap();
        prev = b.hash();
        out.push(b);
    }
    out
}

/// Closes the next interval with a permanent block and applies both.
pub fn close(
    ledger: &mut Ledger,
    blocks: Vec<Vec<Transaction>>,
    txs: Vec<Transaction>,
) -> Result<(), ChainError> {
    let iv = interval(ledger, blocks);
    let pb = build_permanent_block(ledger, &iv, txs)?;
    ledger.apply_interval_and_block(&iv, &pb)
}

pub fn genesis(config: LedgerConfig, keys: &[&KeyPair]) -> Ledger {
    let mut ledger = Ledger::new(config);
    close(&mut ledger, vec![], keys.iter().map(|k| Transaction::register(k)).collect()).unwrap();
    ledger
}

pub fn fig2_config() -> LedgerConfig {
    LedgerConfig {
        confirm_depth: 1,
        delete_lock: 0,
        ..LedgerConfig::default()
    }
}
