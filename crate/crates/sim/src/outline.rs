//! Text rendering of a ledger in the `B_i` / `B_i.j` / `sk_A(...)` notation.

use std::collections::BTreeMap;

use mutachain_core::{IntervalStatus, Ledger, Payload, PubKey, Transaction, TxId};

/// Display names for known keys; unknown keys print as a short hex prefix.
#[derive(Debug, Clone, Default)]
pub struct Names(BTreeMap<PubKey, String>);

impl Names {
    pub fn insert(&mut self, key: PubKey, name: impl Into<String>) {
        self.0.insert(key, name.into());
    }

    pub fn get(&self, key: &PubKey) -> String {
        self.0
            .get(key)
            .cloned()
            .unwrap_or_else(|| key.to_hex()[..8].to_string())
    }
}

pub fn data_label(data: &[u8]) -> String {
    let printable = !data.is_empty() && data.len() <= 24 && data.iter().all(|b| b.is_ascii_graphic() || *b == b' ');
    if printable {
        String::from_utf8_lossy(data).into_owned()
    } else {
        format!("#{}", hex::encode(&data[..data.len().min(4)]))
    }
}

/// Labels transactions in chain order, numbering consents per subject and
/// info as `Con_1`, `Con_2`, ...
#[derive(Debug, Clone, Default)]
struct Labeler {
    consent_index: BTreeMap<TxId, usize>,
    consent_count: BTreeMap<(PubKey, TxId), usize>,
}

impl Labeler {
    fn label(&mut self, tx: &Transaction, ledger: &Ledger, names: &Names) -> String {
        let who = names.get(&tx.signer);
        let inner = match &tx.payload {
            Payload::Register => format!("Reg({who})"),
            Payload::Removable { data } => format!("Rem({})", data_label(data)),
            Payload::Prepare { interval } => format!("Prep({interval})"),
            Payload::Delete { interval } => format!("Del({interval})"),
            Payload::Info(_) => format!("Info(Reg({who}))"),
            Payload::Consent { info } => {
                let n = self.consent_count.entry((tx.signer, *info)).or_default();
                *n += 1;
                self.consent_index.insert(tx.id(), *n);
                let input = tx.inputs.first().map_or_else(String::new, |op| {
                    match self.consent_index.get(&op.txid) {
                        Some(j) => format!("Con_{j}"),
                        None => match ledger.registered_keys().find(|(_, id)| **id == op.txid) {
                            Some((k, _)) => format!("Reg({})", names.get(k)),
                            None => op.txid.short(),
                        },
                    }
                });
                format!("Con_{n}({input},{})", tx.value)
            }
        };
        format!("sk_{who}({inner})")
    }
}

fn tx_list(txs: &[Transaction], labeler: &mut Labeler, ledger: &Ledger, names: &Names) -> String {
    txs.iter()
        .map(|t| labeler.label(t, ledger, names))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One line per block, oldest first. A pruned interval is rendered as a
/// single line naming the Delete that removed it.
pub fn render_outline(ledger: &Ledger, names: &Names) -> Vec<String> {
    let mut labeler = Labeler::default();
    let mut lines = Vec::new();
    for block in ledger.permanent_blocks() {
        let i = block.height();
        match ledger.interval_status(i) {
            Some(IntervalStatus::Deleted {
                del_txid,
                deleted_at_height,
            }) => {
                let del = ledger
                    .permanent_block(deleted_at_height)
                    .and_then(|b| b.transactions.iter().find(|t| t.id() == del_txid))
                    .map(|t| format!("sk_{}(Del({i}))", names.get(&t.signer)))
                    .unwrap_or_else(|| del_txid.short());
                lines.push(format!("I_{i} deleted by {del} in B_{deleted_at_height}"));
            }
            _ => {
                for rb in ledger.interval_blocks(i).unwrap_or_default() {
                    lines.push(format!(
                        "B_{i}.{}: {}",
                        rb.position(),
                        tx_list(&rb.transactions, &mut labeler, ledger, names)
                    ));
                }
            }
        }
        let p_list = block
            .header
            .p_list
            .iter()
            .map(|k| format!("pk_{}", names.get(k)))
            .collect::<Vec<_>>()
            .join(", ");
        let mut line = format!("B_{i} |I_{i}|={} P_{i}={{{p_list}}}", block.header.interval_len);
        if !block.transactions.is_empty() {
            line.push_str(": ");
            line.push_str(&tx_list(&block.transactions, &mut labeler, ledger, names));
        }
        lines.push(line);
    }
    lines
}
