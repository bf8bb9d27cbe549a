//! Append-only hash-chained audit ledger.
//!
//! `hash = SHA-256("epitrace/ledger/v1" | seq u64 | prev_hash | json(content))`
//! where `json` is the compact serde_json encoding of the content. The JSONL
//! export holds one entry per line; import rejects any line that does not
//! re-encode to exactly the same bytes, so every byte of the file is covered.

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::pdr::Minute;

use super::request::{AuthorityId, KeyId, MinuteRange, OperationClass, RequestId, SystemStateKind};

const LEDGER_DOMAIN: &[u8] = b"epitrace/ledger/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LedgerEvent {
    RequestSubmitted {
        request_id: RequestId,
        class: OperationClass,
        requester: AuthorityId,
        request_hash: Digest,
    },
    Certified {
        request_id: RequestId,
        class: OperationClass,
        request_hash: Digest,
        approvers: Vec<AuthorityId>,
    },
    Denied {
        request_id: RequestId,
        class: OperationClass,
        approvals: usize,
        required: usize,
    },
    AccessDenied {
        operation: String,
        request_id: Option<RequestId>,
        reason: String,
    },
    StateChanged {
        request_id: RequestId,
        from: SystemStateKind,
        to: SystemStateKind,
        epoch: u64,
    },
    KeyReconstructed {
        request_id: RequestId,
        key_ids: Vec<KeyId>,
        shares_used: Vec<AuthorityId>,
    },
    DataReleased {
        request_id: RequestId,
        operation: String,
        range: MinuteRange,
    },
    VaultDeleted {
        objects: Vec<String>,
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerContent {
    pub minute: Minute,
    pub event: LedgerEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub seq: u64,
    pub prev_hash: Digest,
    pub hash: Digest,
    pub content: LedgerContent,
}

fn entry_hash(seq: u64, prev: &Digest, content: &LedgerContent) -> Digest {
    let json = serde_json::to_vec(content).expect("ledger content serializes");
    Digest::of_parts(&[LEDGER_DOMAIN, &seq.to_be_bytes(), prev.as_bytes(), &json])
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, minute: Minute, event: LedgerEvent) -> &LedgerEntry {
        let seq = self.entries.len() as u64;
        let prev_hash = self.entries.last().map_or(Digest::ZERO, |e| e.hash);
        let content = LedgerContent { minute, event };
        let hash = entry_hash(seq, &prev_hash, &content);
        self.entries.push(LedgerEntry {
            seq,
            prev_hash,
            hash,
            content,
        });
        self.entries.last().unwrap()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Digest {
        self.entries.last().map_or(Digest::ZERO, |e| e.hash)
    }

    pub fn verify(&self) -> bool {
        verify_ledger(&self.entries)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("ledger entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Counts entries whose event matches `pred`.
    pub fn count(&self, pred: impl Fn(&LedgerEvent) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.content.event)).count()
    }
}

/// True iff the entries form an unbroken chain from genesis.
pub fn verify_ledger(entries: &[LedgerEntry]) -> bool {
    let mut prev = Digest::ZERO;
    for (i, e) in entries.iter().enumerate() {
        if e.seq != i as u64 || e.prev_hash != prev || e.hash != entry_hash(e.seq, &prev, &e.content)
        {
            return false;
        }
        prev = e.hash;
    }
    true
}

/// Parses a JSONL export. Each line must be in canonical encoding.
pub fn parse_jsonl(text: &str) -> Result<Vec<LedgerEntry>, String> {
    let body = text
        .strip_suffix('\n')
        .ok_or_else(|| "ledger export must end with a newline".to_owned())?;
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let entry: LedgerEntry =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let canonical = serde_json::to_string(&entry).expect("ledger entry serializes");
            if canonical != line {
                return Err(format!("line {}: not in canonical form", i + 1));
            }
            Ok(entry)
        })
        .collect()
}

/// Parse and chain-verify; any parse failure counts as a failed verification.
pub fn verify_jsonl(text: &str) -> bool {
    parse_jsonl(text).is_ok_and(|entries| verify_ledger(&entries))
}
