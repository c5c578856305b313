//! Hash-chained audit log. Each entry's hash covers the previous hash and
//! the entry's own fields, so any edit breaks every later link.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::Millis;
use crate::digest::{canonical_json, sha256_parts};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub t_ms: Millis,
    pub ticket_id: String,
    pub action: String,
    pub operator: String,
    pub prev_hash: String,
    pub entry_hash: String,
}

impl AuditEntry {
    fn compute_hash(
        prev_hash: &str,
        seq: u64,
        t_ms: Millis,
        ticket_id: &str,
        action: &str,
        operator: &str,
    ) -> String {
        let body = json!({
            "seq": seq,
            "t_ms": t_ms,
            "ticket_id": ticket_id,
            "action": action,
            "operator": operator,
        });
        sha256_parts([prev_hash.as_bytes(), canonical_json(&body).as_bytes()])
    }

    pub fn expected_hash(&self) -> String {
        Self::compute_hash(
            &self.prev_hash,
            self.seq,
            self.t_ms,
            &self.ticket_id,
            &self.action,
            &self.operator,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(
        &mut self,
        t_ms: Millis,
        ticket_id: &str,
        action: &str,
        operator: &str,
    ) -> &AuditEntry {
        let seq = self.entries.len() as u64;
        let prev_hash = self
            .entries
            .last()
            .map(|e| e.entry_hash.clone())
            .unwrap_or_else(|| GENESIS_HASH.to_string());
        let entry_hash =
            AuditEntry::compute_hash(&prev_hash, seq, t_ms, ticket_id, action, operator);
        self.entries.push(AuditEntry {
            seq,
            t_ms,
            ticket_id: ticket_id.to_string(),
            action: action.to_string(),
            operator: operator.to_string(),
            prev_hash,
            entry_hash,
        });
        self.entries.last().expect("just pushed")
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One canonical JSON object per line.
    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.entries)
    }
}

pub fn to_jsonl(entries: &[AuditEntry]) -> String {
    entries.iter().map(|e| canonical_json(e) + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<AuditEntry>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// True iff seqs run 0, 1, 2, … and every hash link recomputes.
pub fn verify_audit(entries: &[AuditEntry]) -> bool {
    let mut prev = GENESIS_HASH;
    for (i, e) in entries.iter().enumerate() {
        if e.seq != i as u64 || e.prev_hash != prev || e.entry_hash != e.expected_hash() {
            return false;
        }
        prev = &e.entry_hash;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> AuditLog {
        let mut log = AuditLog::new();
        log.append(0, "T-00001", "SUBMIT", "system");
        log.append(5_000, "T-00001", "APPROVE", "mod-ana");
        log.append(6_000, "T-00002", "SUBMIT", "system");
        log.append(30_000, "T-00002", "REJECT", "timeout-policy");
        log
    }

    #[test]
    fn untouched_log_verifies() {
        assert!(verify_audit(sample().entries()));
    }

    #[test]
    fn empty_log_verifies() {
        assert!(verify_audit(&[]));
    }

    #[test]
    fn flipped_action_is_detected() {
        let mut entries = sample().entries().to_vec();
        entries[1].action = "REJECT".into();
        assert!(!verify_audit(&entries));
    }

    #[test]
    fn gap_in_seq_is_detected() {
        let mut entries = sample().entries().to_vec();
        entries.remove(2);
        assert!(!verify_audit(&entries));
    }

    #[test]
    fn jsonl_roundtrip() {
        let log = sample();
        let back = parse_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log.entries());
        assert!(verify_audit(&back));
    }

    proptest! {
        #[test]
        fn any_single_bit_flip_is_detected(byte in 0usize..4096, bit in 0u8..8) {
            let text = sample().to_jsonl();
            let mut bytes = text.into_bytes();
            let i = byte % bytes.len();
            bytes[i] ^= 1 << bit;
            // a flip either breaks parsing or breaks the chain
            if let Ok(s) = String::from_utf8(bytes) {
                if let Ok(entries) = parse_jsonl(&s) {
                    prop_assert!(entries == sample().entries() || !verify_audit(&entries));
                }
            }
        }
    }
}
