//! The six transaction kinds and their stateless validation.
//!
//! | Kind | Inputs | Outputs | Block type |
//! |------|--------|---------|------------|
//! | Register | none | 1, reusable | permanent |
//! | Removable | signer's register output (not consumed) | none | removable |
//! | Prepare | signer's register output (not consumed) | 1, spendable by the Delete | permanent |
//! | Delete | none, or the signer's confirmed Prepare | none | permanent |
//! | Info | signer's register output (not consumed) | 1, reusable | permanent |
//! | Consent | register output or previous consent output (consumed) | 1 | permanent |
//!
//! Consent and Info transactions are permanent: they can never be erased.
//! Anything personal that must stay deletable belongs in a Removable
//! transaction.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{canonical_encode, CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{digest, sign_payload, verify_signature, Hash32, KeyPair, PubKey, Signature};

/// Upper bound on purpose labels: one bit of the 64-bit consent value each.
pub const MAX_PURPOSES: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub Hash32);

impl TxId {
    pub fn from_hex(s: &str) -> Result<Self, crate::crypto::CryptoError> {
        Hash32::from_hex(s).map(TxId)
    }

    pub fn short(&self) -> String {
        self.0.to_hex()[..8].to_string()
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", self.short())
    }
}

impl Encode for TxId {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        self.0.encode(w)
    }
}

impl Decode for TxId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Hash32::decode(r).map(TxId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: TxId,
    pub index: u16,
}

impl OutPoint {
    pub fn new(txid: TxId, index: u16) -> Self {
        Self { txid, index }
    }

    /// Output 0 of `txid`; every kind has at most one output.
    pub fn first(txid: TxId) -> Self {
        Self { txid, index: 0 }
    }
}

impl Encode for OutPoint {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        self.txid.encode(w)?;
        w.u16(self.index);
        Ok(())
    }
}

impl Decode for OutPoint {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            txid: TxId::decode(r)?,
            index: r.u16()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TxKind {
    Register = 1,
    Removable = 2,
    Prepare = 3,
    Delete = 4,
    Info = 5,
    Consent = 6,
}

impl TxKind {
    pub const ALL: [TxKind; 6] = [
        TxKind::Register,
        TxKind::Removable,
        TxKind::Prepare,
        TxKind::Delete,
        TxKind::Info,
        TxKind::Consent,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Only Removable transactions go into removable blocks.
    pub fn is_removable(self) -> bool {
        self == TxKind::Removable
    }

    /// Number of outputs a well-formed transaction of this kind declares.
    pub fn output_count(self) -> u8 {
        match self {
            TxKind::Removable | TxKind::Delete => 0,
            _ => 1,
        }
    }
}

/// Purpose schema carried by an Info transaction. Bit `k` of a consent value
/// grants `purposes[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InfoPayload {
    pub controller: Vec<u8>,
    pub purposes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Register,
    Removable { data: Vec<u8> },
    Prepare { interval: u32 },
    Delete { interval: u32 },
    Info(InfoPayload),
    Consent { info: TxId },
}

impl Payload {
    pub fn kind(&self) -> TxKind {
        match self {
            Payload::Register => TxKind::Register,
            Payload::Removable { .. } => TxKind::Removable,
            Payload::Prepare { .. } => TxKind::Prepare,
            Payload::Delete { .. } => TxKind::Delete,
            Payload::Info(_) => TxKind::Info,
            Payload::Consent { .. } => TxKind::Consent,
        }
    }

    fn encode_body(&self, w: &mut Writer) -> Result<(), CodecError> {
        match self {
            Payload::Register => Ok(()),
            Payload::Removable { data } => w.bytes(data),
            Payload::Prepare { interval } | Payload::Delete { interval } => {
                w.u32(*interval);
                Ok(())
            }
            Payload::Info(info) => {
                w.bytes(&info.controller)?;
                w.seq("purposes", &info.purposes)
            }
            Payload::Consent { info } => info.encode(w),
        }
    }

    fn decode_body(kind: TxKind, r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(match kind {
            TxKind::Register => Payload::Register,
            TxKind::Removable => Payload::Removable { data: r.bytes()? },
            TxKind::Prepare => Payload::Prepare { interval: r.u32()? },
            TxKind::Delete => Payload::Delete { interval: r.u32()? },
            TxKind::Info => Payload::Info(InfoPayload {
                controller: r.bytes()?,
                purposes: r.seq()?,
            }),
            TxKind::Consent => Payload::Consent {
                info: TxId::decode(r)?,
            },
        })
    }
}

/// A signed transaction. The signature covers the canonical encoding of
/// every other field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub signer: PubKey,
    pub inputs: Vec<OutPoint>,
    pub outputs: u8,
    pub payload: Payload,
    pub value: u64,
    pub signature: Signature,
}

impl Transaction {
    /// Signs the given fields as-is, without shape checks. Use
    /// [`build_transaction`] for well-formed transactions.
    pub fn sign_raw(
        kp: &KeyPair,
        inputs: Vec<OutPoint>,
        outputs: u8,
        payload: Payload,
        value: u64,
    ) -> Result<Self, CodecError> {
        let mut tx = Transaction {
            signer: kp.pubkey(),
            inputs,
            outputs,
            payload,
            value,
            signature: Signature::EMPTY,
        };
        tx.signature = sign_payload(kp, &tx.signing_payload()?);
        Ok(tx)
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }

    fn encode_unsigned(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u8(self.kind().tag());
        self.signer.encode(w)?;
        w.seq("inputs", &self.inputs)?;
        w.u8(self.outputs);
        self.payload.encode_body(w)?;
        w.u64(self.value);
        Ok(())
    }

    pub fn signing_payload(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        self.encode_unsigned(&mut w)?;
        Ok(w.into_bytes())
    }

    pub fn id(&self) -> TxId {
        tx_id(self)
    }

    /// Target interval of a Prepare or Delete.
    pub fn target_interval(&self) -> Option<u32> {
        match self.payload {
            Payload::Prepare { interval } | Payload::Delete { interval } => Some(interval),
            _ => None,
        }
    }

    pub fn removable_data(&self) -> Option<&[u8]> {
        match &self.payload {
            Payload::Removable { data } => Some(data),
            _ => None,
        }
    }

    pub fn register(kp: &KeyPair) -> Self {
        build_transaction(TxKind::Register, kp, TxParams::default())
            .expect("register params are always valid")
    }

    pub fn removable(kp: &KeyPair, register: TxId, data: impl Into<Vec<u8>>) -> Self {
        build_transaction(
            TxKind::Removable,
            kp,
            TxParams::default().register(register).data(data.into()),
        )
        .expect("removable params are complete")
    }

    pub fn prepare(kp: &KeyPair, register: TxId, interval: u32) -> Self {
        build_transaction(
            TxKind::Prepare,
            kp,
            TxParams::default().register(register).interval(interval),
        )
        .expect("prepare params are complete")
    }

    pub fn delete(kp: &KeyPair, interval: u32, prepare: Option<TxId>) -> Self {
        let mut params = TxParams::default().interval(interval);
        params.prepare = prepare;
        build_transaction(TxKind::Delete, kp, params).expect("delete params are complete")
    }

    pub fn info(
        kp: &KeyPair,
        register: TxId,
        controller: impl Into<Vec<u8>>,
        purposes: Vec<String>,
    ) -> Result<Self, TxError> {
        build_transaction(
            TxKind::Info,
            kp,
            TxParams::default()
                .register(register)
                .controller(controller.into())
                .purposes(purposes),
        )
    }

    pub fn consent(kp: &KeyPair, input: OutPoint, info: TxId, value: u64) -> Self {
        build_transaction(
            TxKind::Consent,
            kp,
            TxParams::default().input(input).info(info).value(value),
        )
        .expect("consent params are complete")
    }
}

impl Encode for Transaction {
    fn encode(&self, w: &mut Writer) -> Result<(), CodecError> {
        self.encode_unsigned(w)?;
        self.signature.encode(w)
    }
}

impl Decode for Transaction {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let kind = TxKind::from_tag(tag).ok_or(CodecError::InvalidTag {
            tag,
            what: "transaction kind",
        })?;
        let signer = PubKey::decode(r)?;
        let inputs = r.seq()?;
        let outputs = r.u8()?;
        let payload = Payload::decode_body(kind, r)?;
        let value = r.u64()?;
        let signature = Signature::decode(r)?;
        Ok(Transaction {
            signer,
            inputs,
            outputs,
            payload,
            value,
            signature,
        })
    }
}

pub fn tx_id(tx: &Transaction) -> TxId {
    let bytes = canonical_encode(tx).expect("validated transactions always encode");
    TxId(digest(&bytes))
}

/// Kind-specific parameters for [`build_transaction`]. Fields that a kind
/// does not use must stay unset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxParams {
    pub data: Option<Vec<u8>>,
    pub interval: Option<u32>,
    pub register: Option<TxId>,
    pub prepare: Option<TxId>,
    pub input: Option<OutPoint>,
    pub info: Option<TxId>,
    pub controller: Option<Vec<u8>>,
    pub purposes: Option<Vec<String>>,
    pub value: Option<u64>,
}

impl TxParams {
    pub fn data(mut self, data: Vec<u8>) -> Self {
        self.data = Some(data);
        self
    }
    pub fn interval(mut self, interval: u32) -> Self {
        self.interval = Some(interval);
        self
    }
    pub fn register(mut self, register: TxId) -> Self {
        self.register = Some(register);
        self
    }
    pub fn prepare(mut self, prepare: TxId) -> Self {
        self.prepare = Some(prepare);
        self
    }
    pub fn input(mut self, input: OutPoint) -> Self {
        self.input = Some(input);
        self
    }
    pub fn info(mut self, info: TxId) -> Self {
        self.info = Some(info);
        self
    }
    pub fn controller(mut self, controller: Vec<u8>) -> Self {
        self.controller = Some(controller);
        self
    }
    pub fn purposes(mut self, purposes: Vec<String>) -> Self {
        self.purposes = Some(purposes);
        self
    }
    pub fn value(mut self, value: u64) -> Self {
        self.value = Some(value);
        self
    }

    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut mark = |set: bool, name| {
            if set {
                out.push(name)
            }
        };
        mark(self.data.is_some(), "data");
        mark(self.interval.is_some(), "interval");
        mark(self.register.is_some(), "register");
        mark(self.prepare.is_some(), "prepare");
        mark(self.input.is_some(), "input");
        mark(self.info.is_some(), "info");
        mark(self.controller.is_some(), "controller");
        mark(self.purposes.is_some(), "purposes");
        mark(self.value.is_some(), "value");
        out
    }
}

/// Table-level shape rules checked by [`validate_stateless`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeRule {
    RegisterHasNoInputs,
    RemovableHasNoOutputs,
    RemovableHasOneRegisterInput,
    PrepareHasOneRegisterInput,
    DeleteHasAtMostOnePrepareInput,
    InfoHasOneRegisterInput,
    ConsentHasOneInput,
    OutputCountForKind,
    ValueOnlyInConsent,
    PurposeCountInRange,
    PurposeLabelsUnique,
}

impl fmt::Display for ShapeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ShapeRule::RegisterHasNoInputs => "a register transaction has no input",
            ShapeRule::RemovableHasNoOutputs => "removable transactions have no output",
            ShapeRule::RemovableHasOneRegisterInput => {
                "removable transactions take exactly one register output as input"
            }
            ShapeRule::PrepareHasOneRegisterInput => "prepare takes exactly one register input",
            ShapeRule::DeleteHasAtMostOnePrepareInput => "delete takes at most one prepare input",
            ShapeRule::InfoHasOneRegisterInput => "info takes exactly one register input",
            ShapeRule::ConsentHasOneInput => "consent consumes exactly one input",
            ShapeRule::OutputCountForKind => "declared output count does not match kind",
            ShapeRule::ValueOnlyInConsent => "only consent transactions carry a value",
            ShapeRule::PurposeCountInRange => "info must declare between 1 and 64 purposes",
            ShapeRule::PurposeLabelsUnique => "purpose labels must be unique",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("shape violation: {0}")]
    ShapeViolation(ShapeRule),
    #[error("{kind:?} requires parameter `{param}`")]
    MissingParam { kind: TxKind, param: &'static str },
    #[error("{kind:?} does not take parameter `{param}`")]
    UnexpectedParam { kind: TxKind, param: &'static str },
    #[error("value must be zero for {0:?}")]
    NonZeroValue(TxKind),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub fn build_transaction(
    kind: TxKind,
    signer: &KeyPair,
    params: TxParams,
) -> Result<Transaction, TxError> {
    let allowed: &[&str] = match kind {
        TxKind::Register => &[],
        TxKind::Removable => &["data", "register"],
        TxKind::Prepare => &["interval", "register"],
        TxKind::Delete => &["interval", "prepare"],
        TxKind::Info => &["register", "controller", "purposes"],
        TxKind::Consent => &["input", "info", "value"],
    };
    for param in params.set_fields() {
        if !allowed.contains(&param) {
            if param == "value" && params.value != Some(0) {
                return Err(TxError::NonZeroValue(kind));
            }
            if param != "value" {
                return Err(TxError::UnexpectedParam { kind, param });
            }
        }
    }
    let missing = |param| TxError::MissingParam { kind, param };
    let register_input = |p: &TxParams| p.register.map(OutPoint::first).ok_or(missing("register"));

    let (inputs, payload, value) = match kind {
        TxKind::Register => (vec![], Payload::Register, 0),
        TxKind::Removable => (
            vec![register_input(&params)?],
            Payload::Removable {
                data: params.data.clone().ok_or(missing("data"))?,
            },
            0,
        ),
        TxKind::Prepare => (
            vec![register_input(&params)?],
            Payload::Prepare {
                interval: params.interval.ok_or(missing("interval"))?,
            },
            0,
        ),
        TxKind::Delete => (
            params.prepare.map(OutPoint::first).into_iter().collect(),
            Payload::Delete {
                interval: params.interval.ok_or(missing("interval"))?,
            },
            0,
        ),
        TxKind::Info => (
            vec![register_input(&params)?],
            Payload::Info(InfoPayload {
                controller: params.controller.clone().ok_or(missing("controller"))?,
                purposes: params.purposes.clone().ok_or(missing("purposes"))?,
            }),
            0,
        ),
        TxKind::Consent => (
            vec![params.input.ok_or(missing("input"))?],
            Payload::Consent {
                info: params.info.ok_or(missing("info"))?,
            },
            params.value.ok_or(missing("value"))?,
        ),
    };
    let tx = Transaction::sign_raw(signer, inputs, kind.output_count(), payload, value)?;
    validate_stateless(&tx)?;
    Ok(tx)
}

/// Signature check followed by the kind's shape rules. No ledger lookups.
pub fn validate_stateless(tx: &Transaction) -> Result<(), TxError> {
    let payload = tx.signing_payload()?;
    if !verify_signature(&tx.signer, &payload, &tx.signature) {
        return Err(TxError::BadSignature);
    }
    check_shape(tx).map_err(TxError::ShapeViolation)
}

fn check_shape(tx: &Transaction) -> Result<(), ShapeRule> {
    let kind = tx.kind();
    let n_in = tx.inputs.len();
    let rule = |ok: bool, rule: ShapeRule| if ok { Ok(()) } else { Err(rule) };

    if kind == TxKind::Removable {
        rule(tx.outputs == 0, ShapeRule::RemovableHasNoOutputs)?;
    }
    rule(tx.outputs == kind.output_count(), ShapeRule::OutputCountForKind)?;
    if kind != TxKind::Consent {
        rule(tx.value == 0, ShapeRule::ValueOnlyInConsent)?;
    }
    match &tx.payload {
        Payload::Register => rule(n_in == 0, ShapeRule::RegisterHasNoInputs),
        Payload::Removable { .. } => rule(n_in == 1, ShapeRule::RemovableHasOneRegisterInput),
        Payload::Prepare { .. } => rule(n_in == 1, ShapeRule::PrepareHasOneRegisterInput),
        Payload::Delete { .. } => rule(n_in <= 1, ShapeRule::DeleteHasAtMostOnePrepareInput),
        Payload::Consent { .. } => rule(n_in == 1, ShapeRule::ConsentHasOneInput),
        Payload::Info(info) => {
            rule(n_in == 1, ShapeRule::InfoHasOneRegisterInput)?;
            rule(
                (1..=MAX_PURPOSES).contains(&info.purposes.len()),
                ShapeRule::PurposeCountInRange,
            )?;
            let unique: BTreeSet<&String> = info.purposes.iter().collect();
            rule(unique.len() == info.purposes.len(), ShapeRule::PurposeLabelsUnique)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::canonical_decode;
    use crate::crypto::keypair_from_seed;

    fn kp(b: u8) -> KeyPair {
        keypair_from_seed(&[b; 32]).unwrap()
    }

    #[test]
    fn register_has_no_inputs_and_one_output() {
        let a = kp(1);
        let reg = Transaction::register(&a);
        assert!(reg.inputs.is_empty());
        assert_eq!(reg.outputs, 1);
        assert_eq!(reg.signer, a.pubkey());
        assert_eq!(validate_stateless(&reg), Ok(()));
    }

    #[test]
    fn removable_has_no_outputs() {
        let a = kp(1);
        let reg = Transaction::register(&a).id();
        let rem = Transaction::removable(&a, reg, b"m".to_vec());
        assert_eq!(rem.outputs, 0);
        assert_eq!(rem.inputs, vec![OutPoint::first(reg)]);
        assert_eq!(rem.removable_data(), Some(&b"m"[..]));
    }

    #[test]
    fn consent_carries_value() {
        let a = kp(1);
        let b = kp(2);
        let reg_a = Transaction::register(&a).id();
        let reg_b = Transaction::register(&b).id();
        let info = Transaction::info(&a, reg_a, "Alice", vec!["necessary".into()])
            .unwrap()
            .id();
        let con = Transaction::consent(&b, OutPoint::first(reg_b), info, 1);
        assert_eq!(con.value, 1);
        assert_eq!(con.inputs, vec![OutPoint::first(reg_b)]);
        assert_eq!(con.payload, Payload::Consent { info });
    }

    #[test]
    fn removable_with_an_output_is_a_shape_violation() {
        let a = kp(1);
        let reg = Transaction::register(&a).id();
        let tx = Transaction::sign_raw(
            &a,
            vec![OutPoint::first(reg)],
            1,
            Payload::Removable { data: b"m".to_vec() },
            0,
        )
        .unwrap();
        assert_eq!(
            validate_stateless(&tx),
            Err(TxError::ShapeViolation(ShapeRule::RemovableHasNoOutputs))
        );
    }

    #[test]
    fn register_with_an_input_is_a_shape_violation() {
        let a = kp(1);
        let other = Transaction::register(&kp(2)).id();
        let tx = Transaction::sign_raw(&a, vec![OutPoint::first(other)], 1, Payload::Register, 0)
            .unwrap();
        assert_eq!(
            validate_stateless(&tx),
            Err(TxError::ShapeViolation(ShapeRule::RegisterHasNoInputs))
        );
    }

    #[test]
    fn param_errors() {
        let a = kp(1);
        assert_eq!(
            build_transaction(TxKind::Delete, &a, TxParams::default()),
            Err(TxError::MissingParam {
                kind: TxKind::Delete,
                param: "interval"
            })
        );
        assert_eq!(
            build_transaction(TxKind::Register, &a, TxParams::default().interval(1)),
            Err(TxError::UnexpectedParam {
                kind: TxKind::Register,
                param: "interval"
            })
        );
        assert_eq!(
            build_transaction(TxKind::Register, &a, TxParams::default().value(5)),
            Err(TxError::NonZeroValue(TxKind::Register))
        );
    }

    #[test]
    fn info_purpose_rules() {
        let a = kp(1);
        let reg = Transaction::register(&a).id();
        assert_eq!(
            Transaction::info(&a, reg, "c", vec![]).unwrap_err(),
            TxError::ShapeViolation(ShapeRule::PurposeCountInRange)
        );
        assert_eq!(
            Transaction::info(&a, reg, "c", vec!["x".into(), "x".into()]).unwrap_err(),
            TxError::ShapeViolation(ShapeRule::PurposeLabelsUnique)
        );
        let many: Vec<String> = (0..65).map(|i| format!("p{i}")).collect();
        assert!(Transaction::info(&a, reg, "c", many[..64].to_vec()).is_ok());
        assert!(Transaction::info(&a, reg, "c", many).is_err());
    }

    #[test]
    fn tx_id_tracks_payload_bytes() {
        let a = kp(1);
        let reg = Transaction::register(&a).id();
        let m = Transaction::removable(&a, reg, b"m".to_vec());
        assert_eq!(m.id(), m.clone().id());
        let n = Transaction::removable(&a, reg, b"n".to_vec());
        assert_ne!(m.id(), n.id());
        // re-encoding a decoded copy keeps the id
        let copy: Transaction = canonical_decode(&canonical_encode(&m).unwrap()).unwrap();
        assert_eq!(copy.id(), m.id());
    }

    #[test]
    fn mutation_after_signing_breaks_signature() {
        let a = kp(1);
        let reg = Transaction::register(&a).id();
        let mut tx = Transaction::prepare(&a, reg, 1);
        tx.payload = Payload::Prepare { interval: 2 };
        assert_eq!(validate_stateless(&tx), Err(TxError::BadSignature));
    }

    #[test]
    fn encoded_size_follows_layout() {
        let a = kp(1);
        let reg = Transaction::register(&a);
        assert_eq!(canonical_encode(&reg).unwrap().len(), 108);
        let rem = Transaction::removable(&a, reg.id(), vec![7u8; 16]);
        assert_eq!(canonical_encode(&rem).unwrap().len(), 108 + 34 + 4 + 16);
    }

    #[test]
    fn unknown_kind_tag_rejected() {
        let a = kp(1);
        let mut bytes = canonical_encode(&Transaction::register(&a)).unwrap();
        bytes[0] = 9;
        assert!(matches!(
            canonical_decode::<Transaction>(&bytes),
            Err(CodecError::InvalidTag { tag: 9, .. })
        ));
    }
}
