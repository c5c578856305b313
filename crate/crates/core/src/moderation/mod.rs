//! Human review between generation and the stage.
//!
//! Every generated asset gets one ticket. An approval releases the asset; a
//! rejection, a timeout rejection or a dead-lettered job releases the muse's
//! fallback asset instead. Each action is written to the audit log.

pub mod audit;

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::orchestrator::TaskType;
use crate::pipelines::GeneratedAsset;

pub use audit::{verify_audit, AuditEntry, AuditLog};

pub const TIMEOUT_OPERATOR: &str = "timeout-policy";
pub const SYSTEM_OPERATOR: &str = "system";
pub const DEFAULT_DWELL_LIMIT_MS: Millis = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TicketState {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Approve,
    Reject,
}

impl Decision {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "APPROVE" => Some(Decision::Approve),
            "REJECT" => Some(Decision::Reject),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTicket {
    pub ticket_id: String,
    pub asset_id: String,
    pub job_id: String,
    pub muse_id: u8,
    pub task_type: TaskType,
    pub created_at: Millis,
    pub state: TicketState,
    pub decided_by: Option<String>,
    pub decided_at: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubstitutionReason {
    Rejected,
    DeadLetter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionRecord {
    pub substitution_id: String,
    pub job_id: String,
    pub muse_id: u8,
    pub reason: SubstitutionReason,
    /// The archived original, absent for dead-lettered jobs.
    pub original_asset_id: Option<String>,
    pub fallback_asset_id: String,
    pub audit_seq: u64,
}

/// What the sink is allowed to put on stage, and on whose authority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "via", rename_all = "snake_case")]
pub enum Release {
    Approved {
        ticket_id: String,
        asset_id: String,
    },
    Substituted {
        substitution_id: String,
        fallback_asset_id: String,
    },
}

impl Release {
    pub fn asset_id(&self) -> &str {
        match self {
            Release::Approved { asset_id, .. } => asset_id,
            Release::Substituted {
                fallback_asset_id, ..
            } => fallback_asset_id,
        }
    }

    /// Unique per authority: a ticket or a substitution releases once.
    pub fn key(&self) -> String {
        match self {
            Release::Approved { ticket_id, .. } => format!("ticket:{ticket_id}"),
            Release::Substituted {
                substitution_id, ..
            } => format!("substitution:{substitution_id}"),
        }
    }
}

/// Checked by the sink before any asset goes on stage.
pub trait ReleaseGate {
    fn check_release(&self, release: &Release) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationOutcome {
    pub ticket_id: String,
    pub job_id: String,
    pub decision: Decision,
    pub operator: String,
    pub release: Release,
    pub substitution: Option<SubstitutionRecord>,
}

impl ModerationOutcome {
    pub fn substituted(&self) -> bool {
        self.substitution.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeoutPolicy {
    pub dwell_limit_ms: Millis,
    pub t1: Decision,
    pub t2: Decision,
    pub t3: Decision,
}

impl Default for TimeoutPolicy {
    fn default() -> Self {
        Self {
            dwell_limit_ms: DEFAULT_DWELL_LIMIT_MS,
            t1: Decision::Approve,
            t2: Decision::Reject,
            t3: Decision::Approve,
        }
    }
}

impl TimeoutPolicy {
    pub fn decision_for(&self, task: TaskType) -> Decision {
        match task {
            TaskType::T1 => self.t1,
            TaskType::T2 => self.t2,
            TaskType::T3 => self.t3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModerationError {
    #[error("asset {0} already has a ticket")]
    DuplicateAsset(String),
    #[error("ticket {0} was already decided")]
    AlreadyDecided(String),
    #[error("unknown ticket {0}")]
    UnknownTicket(String),
    #[error("asset {0} has an empty manifest")]
    IncompleteAsset(String),
    #[error("no fallback asset configured for muse {0}")]
    NoFallback(u8),
    #[error("job {0} already has a fallback substitution")]
    AlreadySubstituted(String),
}

#[derive(Debug, Clone, Default)]
pub struct ReviewDesk {
    policy: TimeoutPolicy,
    fallbacks: BTreeMap<u8, String>,
    tickets: Vec<ReviewTicket>,
    by_id: HashMap<String, usize>,
    by_asset: HashMap<String, String>,
    queues: BTreeMap<u8, VecDeque<String>>,
    substitutions: Vec<SubstitutionRecord>,
    substitution_by_job: HashMap<String, usize>,
    audit: AuditLog,
}

impl ReviewDesk {
    /// `fallbacks` maps each muse to the asset id shown in place of a
    /// rejected or failed offering.
    pub fn new(policy: TimeoutPolicy, fallbacks: BTreeMap<u8, String>) -> Self {
        Self {
            policy,
            fallbacks,
            ..Self::default()
        }
    }

    pub fn policy(&self) -> &TimeoutPolicy {
        &self.policy
    }

    pub fn submit_for_review(
        &mut self,
        asset: &GeneratedAsset,
        task: TaskType,
        now: Millis,
    ) -> Result<ReviewTicket, ModerationError> {
        if asset.manifest.is_empty() {
            return Err(ModerationError::IncompleteAsset(asset.asset_id.clone()));
        }
        if self.by_asset.contains_key(&asset.asset_id) {
            return Err(ModerationError::DuplicateAsset(asset.asset_id.clone()));
        }
        let ticket_id = format!("T-{:05}", self.tickets.len() + 1);
        let ticket = ReviewTicket {
            ticket_id: ticket_id.clone(),
            asset_id: asset.asset_id.clone(),
            job_id: asset.job_id.clone(),
            muse_id: asset.muse_id,
            task_type: task,
            created_at: now,
            state: TicketState::Pending,
            decided_by: None,
            decided_at: None,
        };
        self.by_id.insert(ticket_id.clone(), self.tickets.len());
        self.by_asset
            .insert(asset.asset_id.clone(), ticket_id.clone());
        self.queues
            .entry(asset.muse_id)
            .or_default()
            .push_back(ticket_id.clone());
        self.tickets.push(ticket.clone());
        self.audit
            .append(now, &ticket_id, "SUBMIT", SYSTEM_OPERATOR);
        Ok(ticket)
    }

    pub fn decide(
        &mut self,
        ticket_id: &str,
        decision: Decision,
        operator: &str,
        now: Millis,
    ) -> Result<ModerationOutcome, ModerationError> {
        let idx = *self
            .by_id
            .get(ticket_id)
            .ok_or_else(|| ModerationError::UnknownTicket(ticket_id.to_string()))?;
        if self.tickets[idx].state != TicketState::Pending {
            return Err(ModerationError::AlreadyDecided(ticket_id.to_string()));
        }
        let (muse_id, job_id, asset_id) = {
            let t = &self.tickets[idx];
            (t.muse_id, t.job_id.clone(), t.asset_id.clone())
        };
        let fallback = match decision {
            Decision::Reject => Some(
                self.fallbacks
                    .get(&muse_id)
                    .cloned()
                    .ok_or(ModerationError::NoFallback(muse_id))?,
            ),
            Decision::Approve => None,
        };
        let t = &mut self.tickets[idx];
        t.state = match decision {
            Decision::Approve => TicketState::Approved,
            Decision::Reject => TicketState::Rejected,
        };
        t.decided_by = Some(operator.to_string());
        t.decided_at = Some(now);
        if let Some(q) = self.queues.get_mut(&muse_id) {
            q.retain(|id| id != ticket_id);
        }
        let action = match decision {
            Decision::Approve => "APPROVE",
            Decision::Reject => "REJECT",
        };
        let seq = self.audit.append(now, ticket_id, action, operator).seq;

        let (release, substitution) = match fallback {
            None => (
                Release::Approved {
                    ticket_id: ticket_id.to_string(),
                    asset_id,
                },
                None,
            ),
            Some(fallback_asset_id) => {
                let rec = self.record_substitution(
                    &job_id,
                    muse_id,
                    SubstitutionReason::Rejected,
                    Some(asset_id),
                    fallback_asset_id,
                    seq,
                )?;
                (
                    Release::Substituted {
                        substitution_id: rec.substitution_id.clone(),
                        fallback_asset_id: rec.fallback_asset_id.clone(),
                    },
                    Some(rec),
                )
            }
        };
        Ok(ModerationOutcome {
            ticket_id: ticket_id.to_string(),
            job_id,
            decision,
            operator: operator.to_string(),
            release,
            substitution,
        })
    }

    fn record_substitution(
        &mut self,
        job_id: &str,
        muse_id: u8,
        reason: SubstitutionReason,
        original_asset_id: Option<String>,
        fallback_asset_id: String,
        audit_seq: u64,
    ) -> Result<SubstitutionRecord, ModerationError> {
        if self.substitution_by_job.contains_key(job_id) {
            return Err(ModerationError::AlreadySubstituted(job_id.to_string()));
        }
        let rec = SubstitutionRecord {
            substitution_id: format!("S-{:05}", self.substitutions.len() + 1),
            job_id: job_id.to_string(),
            muse_id,
            reason,
            original_asset_id,
            fallback_asset_id,
            audit_seq,
        };
        self.substitution_by_job
            .insert(job_id.to_string(), self.substitutions.len());
        self.substitutions.push(rec.clone());
        Ok(rec)
    }

    /// Applies the timeout policy if the ticket is still pending past the
    /// dwell limit. Returns `None` when there is nothing to do.
    pub fn auto_decide_timeout(
        &mut self,
        ticket_id: &str,
        now: Millis,
    ) -> Result<Option<ModerationOutcome>, ModerationError> {
        let idx = *self
            .by_id
            .get(ticket_id)
            .ok_or_else(|| ModerationError::UnknownTicket(ticket_id.to_string()))?;
        let t = &self.tickets[idx];
        if t.state != TicketState::Pending
            || now.saturating_sub(t.created_at) <= self.policy.dwell_limit_ms
        {
            return Ok(None);
        }
        let decision = self.policy.decision_for(t.task_type);
        self.decide(ticket_id, decision, TIMEOUT_OPERATOR, now)
            .map(Some)
    }

    /// Times out every overdue ticket, oldest first.
    pub fn sweep_timeouts(&mut self, now: Millis) -> Vec<ModerationOutcome> {
        let due: Vec<String> = self
            .tickets
            .iter()
            .filter(|t| {
                t.state == TicketState::Pending
                    && now.saturating_sub(t.created_at) > self.policy.dwell_limit_ms
            })
            .map(|t| t.ticket_id.clone())
            .collect();
        due.iter()
            .filter_map(|id| self.auto_decide_timeout(id, now).ok().flatten())
            .collect()
    }

    /// Earliest instant at which some pending ticket becomes overdue.
    pub fn next_timeout_at(&self) -> Option<Millis> {
        self.tickets
            .iter()
            .filter(|t| t.state == TicketState::Pending)
            .map(|t| t.created_at + self.policy.dwell_limit_ms + 1)
            .min()
    }

    /// Releases the muse fallback for a job that produced no asset.
    pub fn substitute_dead_letter(
        &mut self,
        job_id: &str,
        muse_id: u8,
        now: Millis,
    ) -> Result<(Release, SubstitutionRecord), ModerationError> {
        let fallback = self
            .fallbacks
            .get(&muse_id)
            .cloned()
            .ok_or(ModerationError::NoFallback(muse_id))?;
        if self.substitution_by_job.contains_key(job_id) {
            return Err(ModerationError::AlreadySubstituted(job_id.to_string()));
        }
        let seq = self
            .audit
            .append(
                now,
                &format!("DL-{job_id}"),
                "DEAD_LETTER_SUBSTITUTE",
                SYSTEM_OPERATOR,
            )
            .seq;
        let rec = self.record_substitution(
            job_id,
            muse_id,
            SubstitutionReason::DeadLetter,
            None,
            fallback,
            seq,
        )?;
        Ok((
            Release::Substituted {
                substitution_id: rec.substitution_id.clone(),
                fallback_asset_id: rec.fallback_asset_id.clone(),
            },
            rec,
        ))
    }

    pub fn ticket(&self, ticket_id: &str) -> Option<&ReviewTicket> {
        self.by_id.get(ticket_id).map(|&i| &self.tickets[i])
    }

    pub fn ticket_for_asset(&self, asset_id: &str) -> Option<&ReviewTicket> {
        self.by_asset.get(asset_id).and_then(|id| self.ticket(id))
    }

    pub fn tickets(&self) -> &[ReviewTicket] {
        &self.tickets
    }

    /// Tickets in `state`, in submission order.
    pub fn tickets_in(&self, state: TicketState) -> Vec<&ReviewTicket> {
        self.tickets.iter().filter(|t| t.state == state).collect()
    }

    /// Pending tickets for one muse in review order.
    pub fn review_queue(&self, muse_id: u8) -> Vec<&ReviewTicket> {
        self.queues
            .get(&muse_id)
            .map(|q| q.iter().filter_map(|id| self.ticket(id)).collect())
            .unwrap_or_default()
    }

    pub fn substitutions(&self) -> &[SubstitutionRecord] {
        &self.substitutions
    }

    pub fn substitution_for_job(&self, job_id: &str) -> Option<&SubstitutionRecord> {
        self.substitution_by_job
            .get(job_id)
            .map(|&i| &self.substitutions[i])
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }
}

impl ReleaseGate for ReviewDesk {
    fn check_release(&self, release: &Release) -> Result<(), String> {
        match release {
            Release::Approved {
                ticket_id,
                asset_id,
            } => {
                let t = self
                    .ticket(ticket_id)
                    .ok_or_else(|| format!("unknown ticket {ticket_id}"))?;
                if &t.asset_id != asset_id {
                    return Err(format!(
                        "ticket {ticket_id} is for {}, not {asset_id}",
                        t.asset_id
                    ));
                }
                if t.state != TicketState::Approved {
                    return Err(format!("ticket {ticket_id} is {:?}", t.state));
                }
                Ok(())
            }
            Release::Substituted {
                substitution_id,
                fallback_asset_id,
            } => {
                let rec = self
                    .substitutions
                    .iter()
                    .find(|s| &s.substitution_id == substitution_id)
                    .ok_or_else(|| format!("unknown substitution {substitution_id}"))?;
                if &rec.fallback_asset_id != fallback_asset_id {
                    return Err(format!(
                        "substitution {substitution_id} releases {}",
                        rec.fallback_asset_id
                    ));
                }
                Ok(())
            }
        }
    }
}
