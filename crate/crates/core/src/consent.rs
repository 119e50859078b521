//! Consent management on top of the ledger.
//!
//! A data controller publishes an Info transaction listing purposes; bit `k`
//! of a consent value grants `purposes[k]`. A subject's consents form a
//! chain: each Consent spends the previous one's output, so exactly one
//! output per (subject, info) is unspent and it holds the current value. A
//! value of 0 is a revocation.
//!
//! Info and Consent transactions live in permanent blocks and are never
//! erased. Personal data that must stay deletable belongs in removable
//! transactions instead.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::PubKey;
use crate::ledger::Ledger;
use crate::tx::{OutPoint, Payload, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsentError {
    #[error("unknown info transaction {0:?}")]
    UnknownInfo(TxId),
    #[error("label {0:?} is not a purpose of this info")]
    UnknownLabel(String),
    #[error("value {value:#x} sets bits beyond the {purposes} declared purposes")]
    ValueOutOfRange { value: u64, purposes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PurposeSchema {
    pub info_txid: TxId,
    #[serde(serialize_with = "as_text")]
    pub controller: Vec<u8>,
    pub purposes: Vec<String>,
}

fn as_text<S: serde::Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(bytes))
}

impl PurposeSchema {
    pub fn from_ledger(ledger: &Ledger, info: &TxId) -> Result<Self, ConsentError> {
        let rec = ledger.info(info).ok_or(ConsentError::UnknownInfo(*info))?;
        Ok(Self {
            info_txid: *info,
            controller: rec.payload.controller.clone(),
            purposes: rec.payload.purposes.clone(),
        })
    }
}

pub fn encode_consent_value<S: AsRef<str>>(schema: &PurposeSchema, granted: &[S]) -> Result<u64, ConsentError> {
    granted.iter().try_fold(0u64, |acc, label| {
        let label = label.as_ref();
        let bit = schema
            .purposes
            .iter()
            .position(|p| p == label)
            .ok_or_else(|| ConsentError::UnknownLabel(label.to_string()))?;
        Ok(acc | 1 << bit)
    })
}

/// Granted labels in schema order.
pub fn decode_consent_value(schema: &PurposeSchema, value: u64) -> Result<Vec<String>, ConsentError> {
    let n = schema.purposes.len();
    if n < 64 && value >> n != 0 {
        return Err(ConsentError::ValueOutOfRange { value, purposes: n });
    }
    Ok(schema
        .purposes
        .iter()
        .enumerate()
        .filter(|(k, _)| value >> k & 1 == 1)
        .map(|(_, p)| p.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsentState {
    pub subject: PubKey,
    pub info_txid: TxId,
    pub value: u64,
    /// The unspent consent output.
    pub tip: OutPoint,
    /// The live chain, oldest first.
    pub history: Vec<(TxId, u64)>,
}

impl ConsentState {
    pub fn is_revoked(&self) -> bool {
        self.value == 0
    }
}

/// The subject's current consent for `info`, or `None` if they never
/// consented.
pub fn current_consent(ledger: &Ledger, subject: &PubKey, info: &TxId) -> Result<Option<ConsentState>, ConsentError> {
    ledger.info(info).ok_or(ConsentError::UnknownInfo(*info))?;
    let Some(tip) = ledger.live_consent(subject, info) else {
        return Ok(None);
    };
    let mut history = Vec::new();
    let mut cursor = Some(tip.txid);
    while let Some(id) = cursor {
        let Some(rec) = ledger.consent_record(&id) else {
            break;
        };
        history.push((rec.txid, rec.value));
        cursor = ledger.consent_record(&rec.input.txid).map(|r| r.txid);
    }
    history.reverse();
    let value = ledger.consent_record(&tip.txid).map_or(0, |r| r.value);
    Ok(Some(ConsentState {
        subject: *subject,
        info_txid: *info,
        value,
        tip,
        history,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub subject: PubKey,
    /// Every consent the subject issued for the info, in chain order.
    pub history: Vec<(TxId, u64)>,
    pub current: u64,
}

/// Full consent history per subject, in order of first consent.
pub fn audit_trail(ledger: &Ledger, info: &TxId) -> Result<Vec<AuditEntry>, ConsentError> {
    ledger.info(info).ok_or(ConsentError::UnknownInfo(*info))?;
    let mut order: Vec<PubKey> = Vec::new();
    let mut histories: BTreeMap<PubKey, Vec<(TxId, u64)>> = BTreeMap::new();
    for block in ledger.permanent_blocks() {
        for tx in &block.transactions {
            if !matches!(&tx.payload, Payload::Consent { info: i } if i == info) {
                continue;
            }
            let entry = histories.entry(tx.signer).or_insert_with(|| {
                order.push(tx.signer);
                Vec::new()
            });
            entry.push((tx.id(), tx.value));
        }
    }
    Ok(order
        .into_iter()
        .map(|subject| {
            let current = ledger
                .live_consent(&subject, info)
                .and_then(|op| ledger.consent_utxos().get(&op))
                .map_or(0, |u| u.value);
            AuditEntry {
                subject,
                history: histories.remove(&subject).unwrap_or_default(),
                current,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::digest;

    fn schema() -> PurposeSchema {
        PurposeSchema {
            info_txid: TxId(digest(b"info")),
            controller: b"alice".to_vec(),
            purposes: vec!["necessary".into(), "functional".into(), "performance".into()],
        }
    }

    #[test]
    fn bitmask_values_follow_label_order() {
        let s = schema();
        assert_eq!(encode_consent_value(&s, &["necessary"]).unwrap(), 1);
        assert_eq!(encode_consent_value(&s, &["necessary", "functional"]).unwrap(), 3);
        assert_eq!(encode_consent_value::<&str>(&s, &[]).unwrap(), 0);
        assert_eq!(encode_consent_value(&s, &["performance"]).unwrap(), 4);
    }

    #[test]
    fn unknown_label_rejected() {
        assert_eq!(
            encode_consent_value(&schema(), &["marketing"]),
            Err(ConsentError::UnknownLabel("marketing".into()))
        );
    }

    #[test]
    fn decode_rejects_undeclared_bits() {
        assert_eq!(decode_consent_value(&schema(), 3).unwrap(), vec!["necessary", "functional"]);
        assert!(matches!(
            decode_consent_value(&schema(), 8),
            Err(ConsentError::ValueOutOfRange { .. })
        ));
    }
}
