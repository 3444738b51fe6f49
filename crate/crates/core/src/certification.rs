//! Central certification workflow for platform badges.
//!
//! Applications are off-ledger workflow records; only review decisions and
//! the resulting certifications and record links reach the ledger.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_hash;
use crate::hash::Hash32;
use crate::identity::Address;
use crate::ledger::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertificationError {
    #[error("definition {0} not found")]
    UnknownDefinition(Hash32),
    #[error("definition belongs to another platform")]
    ForeignDefinition,
    #[error("sample award {0} is not a live token of this definition and holder")]
    DanglingSample(Hash32),
    #[error("referenced voting round {0} is unknown or still open")]
    DanglingVote(Hash32),
    #[error("application {0} not found")]
    UnknownApplication(Hash32),
    #[error("caller is not allowed to perform this action")]
    Unauthorized,
    #[error("action {action:?} is illegal in state {from:?}")]
    IllegalTransition { from: ApplicationState, action: ApplicationAction },
    #[error("review record is incomplete: {0}")]
    IncompleteReview(String),
    #[error("application has not been approved")]
    NotApproved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ApplicationState {
    Draft,
    Submitted,
    UnderReview,
    Approved,
    Rejected,
    Withdrawn,
}

impl fmt::Display for ApplicationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for ApplicationState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ApplicationState::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| format!("unknown application state {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ApplicationAction {
    Submit,
    BeginReview,
    Approve,
    Reject,
    Resubmit,
    Withdraw,
}

impl ApplicationState {
    pub const ALL: [ApplicationState; 6] = [
        ApplicationState::Draft,
        ApplicationState::Submitted,
        ApplicationState::UnderReview,
        ApplicationState::Approved,
        ApplicationState::Rejected,
        ApplicationState::Withdrawn,
    ];

    /// The legal-transition table. `None` marks an illegal pair.
    pub fn after(self, action: ApplicationAction) -> Option<ApplicationState> {
        use ApplicationAction::*;
        use ApplicationState::*;
        match (self, action) {
            (Draft, Submit) => Some(Submitted),
            (Submitted, BeginReview) => Some(UnderReview),
            (UnderReview, Approve) => Some(Approved),
            (UnderReview, Reject) => Some(Rejected),
            (Rejected, Resubmit) => Some(Submitted),
            (Draft | Submitted | Rejected, Withdraw) => Some(Withdrawn),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ApplicationState::Approved | ApplicationState::Withdrawn)
    }
}

impl ApplicationAction {
    pub const ALL: [ApplicationAction; 6] = [
        ApplicationAction::Submit,
        ApplicationAction::BeginReview,
        ApplicationAction::Approve,
        ApplicationAction::Reject,
        ApplicationAction::Resubmit,
        ApplicationAction::Withdraw,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleAward {
    pub token_id: Hash32,
    pub holder: Address,
    /// Reference to the evidence that the holder earned the award.
    pub eligibility_proof: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationPayload {
    pub definition_id: Hash32,
    /// Canonical texts of the rule contracts used to award the badge.
    pub awarding_rules: Vec<String>,
    pub sample_awards: Vec<SampleAward>,
    /// Closed voting round backing the application, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voting_data: Option<Hash32>,
    /// Proposed official description; the definition's own is used otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub official_description: Option<String>,
}

/// The four review checks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewChecks {
    /// Complies with laws and regulations.
    pub compliance_ok: Option<bool>,
    /// Badge design is clear, fair and valuable.
    pub design_ok: Option<bool>,
    /// Submitted award records and the platform's qualifications are authentic.
    pub platform_ok: Option<bool>,
    /// No security vulnerabilities or risks.
    pub security_ok: Option<bool>,
    #[serde(default)]
    pub compliance_notes: String,
    #[serde(default)]
    pub design_notes: String,
    #[serde(default)]
    pub platform_notes: String,
    #[serde(default)]
    pub security_notes: String,
}

impl ReviewChecks {
    pub fn all_passed() -> Self {
        ReviewChecks {
            compliance_ok: Some(true),
            design_ok: Some(true),
            platform_ok: Some(true),
            security_ok: Some(true),
            ..Default::default()
        }
    }

    fn entries(&self) -> [(&'static str, Option<bool>, &str); 4] {
        [
            ("compliance", self.compliance_ok, &self.compliance_notes),
            ("design", self.design_ok, &self.design_notes),
            ("platform", self.platform_ok, &self.platform_notes),
            ("security", self.security_ok, &self.security_notes),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Verdict {
    Approve,
    Reject { reason: String },
}

/// A completed review: every check answered, decision consistent with them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRecord {
    pub compliance_ok: bool,
    pub design_ok: bool,
    pub platform_ok: bool,
    pub security_ok: bool,
    pub compliance_notes: String,
    pub design_notes: String,
    pub platform_notes: String,
    pub security_notes: String,
    pub reviewer: String,
    pub reviewed_at: Timestamp,
}

impl ReviewRecord {
    /// Approval needs all four checks true; rejection needs at least one
    /// false plus a reason. Failed checks must carry a note.
    pub fn complete(
        checks: &ReviewChecks,
        verdict: &Verdict,
        reviewer: &str,
        reviewed_at: Timestamp,
    ) -> Result<Self, CertificationError> {
        let incomplete = |m: String| Err(CertificationError::IncompleteReview(m));
        let mut answers = [false; 4];
        for (i, (name, answer, notes)) in checks.entries().into_iter().enumerate() {
            match answer {
                None => return incomplete(format!("{name} check not answered")),
                Some(false) if notes.trim().is_empty() => return incomplete(format!("failed {name} check needs a note")),
                Some(ok) => answers[i] = ok,
            }
        }
        let all_ok = answers.iter().all(|&a| a);
        match verdict {
            Verdict::Approve if !all_ok => return incomplete("approval requires all four checks to pass".into()),
            Verdict::Reject { .. } if all_ok => return incomplete("rejection requires at least one failed check".into()),
            Verdict::Reject { reason } if reason.trim().is_empty() => {
                return incomplete("rejection requires a reason".into())
            }
            _ => {}
        }
        Ok(ReviewRecord {
            compliance_ok: answers[0],
            design_ok: answers[1],
            platform_ok: answers[2],
            security_ok: answers[3],
            compliance_notes: checks.compliance_notes.clone(),
            design_notes: checks.design_notes.clone(),
            platform_notes: checks.platform_notes.clone(),
            security_notes: checks.security_notes.clone(),
            reviewer: reviewer.to_string(),
            reviewed_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationApplication {
    pub application_id: Hash32,
    pub platform: String,
    pub payload: ApplicationPayload,
    pub state: ApplicationState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<ReviewRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
    pub revision: u32,
    pub created_at: Timestamp,
    /// Ledger position of the approving decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_height: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_event: Option<Hash32>,
}

impl CertificationApplication {
    pub fn new(application_id: Hash32, platform: &str, payload: ApplicationPayload, state: ApplicationState, now: Timestamp) -> Self {
        CertificationApplication {
            application_id,
            platform: platform.to_string(),
            payload,
            state,
            reviewer: None,
            review: None,
            rejection_reason: None,
            revision: 1,
            created_at: now,
            decision_height: None,
            decision_event: None,
        }
    }

    pub fn definition_id(&self) -> Hash32 {
        self.payload.definition_id
    }

    /// Hash of what was reviewed: identity, payload and revision.
    pub fn content_hash(&self) -> Hash32 {
        #[derive(Serialize)]
        struct Reviewed<'a> {
            application_id: Hash32,
            platform: &'a str,
            payload: &'a ApplicationPayload,
            revision: u32,
        }
        canonical_hash(&Reviewed {
            application_id: self.application_id,
            platform: &self.platform,
            payload: &self.payload,
            revision: self.revision,
        })
        .expect("application is canonical")
    }

    /// Next state under `action`, or `IllegalTransition`.
    pub fn next_state(&self, action: ApplicationAction) -> Result<ApplicationState, CertificationError> {
        self.state
            .after(action)
            .ok_or(CertificationError::IllegalTransition { from: self.state, action })
    }
}

/// On-ledger record of a review outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationDecisionBody {
    pub application_id: Hash32,
    pub application_hash: Hash32,
    pub definition_id: Hash32,
    pub platform: String,
    pub revision: u32,
    pub approved: bool,
    pub compliance_ok: bool,
    pub design_ok: bool,
    pub platform_ok: bool,
    pub security_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Outcome of a certify run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkageReport {
    pub application_id: Hash32,
    pub certified: Vec<Hash32>,
    pub already_certified: Vec<Hash32>,
    pub skipped_frozen: Vec<Hash32>,
    /// Tokens minted after the decision; they need a new application.
    pub minted_after_decision: Vec<Hash32>,
    pub events_appended: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ApplicationAction::*;
    use ApplicationState::*;

    #[test]
    fn transition_table_is_exact() {
        let legal: Vec<_> = ApplicationState::ALL
            .iter()
            .flat_map(|&s| ApplicationAction::ALL.iter().filter_map(move |&a| s.after(a).map(|n| (s, a, n))))
            .collect();
        assert_eq!(
            legal,
            vec![
                (Draft, Submit, Submitted),
                (Draft, Withdraw, Withdrawn),
                (Submitted, BeginReview, UnderReview),
                (Submitted, Withdraw, Withdrawn),
                (UnderReview, Approve, Approved),
                (UnderReview, Reject, Rejected),
                (Rejected, Resubmit, Submitted),
                (Rejected, Withdraw, Withdrawn),
            ]
        );
        for terminal in [Approved, Withdrawn] {
            assert!(terminal.is_terminal());
            assert!(ApplicationAction::ALL.iter().all(|&a| terminal.after(a).is_none()));
        }
    }

    #[test]
    fn review_consistency() {
        let all = ReviewChecks::all_passed();
        assert!(ReviewRecord::complete(&all, &Verdict::Approve, "gov", 1).is_ok());
        assert!(matches!(
            ReviewRecord::complete(&all, &Verdict::Reject { reason: "no".into() }, "gov", 1),
            Err(CertificationError::IncompleteReview(_))
        ));

        let mut design_fail = ReviewChecks::all_passed();
        design_fail.design_ok = Some(false);
        design_fail.design_notes = "criteria unclear".into();
        assert!(matches!(
            ReviewRecord::complete(&design_fail, &Verdict::Approve, "gov", 1),
            Err(CertificationError::IncompleteReview(_))
        ));
        assert!(matches!(
            ReviewRecord::complete(&design_fail, &Verdict::Reject { reason: " ".into() }, "gov", 1),
            Err(CertificationError::IncompleteReview(_))
        ));
        let rec = ReviewRecord::complete(&design_fail, &Verdict::Reject { reason: "fix criteria".into() }, "gov", 1).unwrap();
        assert!(!rec.design_ok && rec.compliance_ok);

        let mut unanswered = ReviewChecks::all_passed();
        unanswered.security_ok = None;
        assert!(ReviewRecord::complete(&unanswered, &Verdict::Approve, "gov", 1).is_err());

        let mut silent_fail = ReviewChecks::all_passed();
        silent_fail.security_ok = Some(false);
        assert!(ReviewRecord::complete(&silent_fail, &Verdict::Reject { reason: "risk".into() }, "gov", 1).is_err());
    }

    #[test]
    fn verdict_wire_form() {
        assert_eq!(serde_json::to_string(&Verdict::Approve).unwrap(), r#"{"decision":"approve"}"#);
        let r: Verdict = serde_json::from_str(r#"{"decision":"reject","reason":"x"}"#).unwrap();
        assert_eq!(r, Verdict::Reject { reason: "x".into() });
    }
}
