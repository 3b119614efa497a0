//! Which roles may call which endpoint.

use congait_core::contest::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    IngestSession,
    SessionFeatures,
    SessionWindow,
    RunSession,
    GetPrediction,
    GetRelevance,
    OpenContest,
    GetContest,
    ContestDecision,
    ResolveContest,
    Trend,
    AddMedication,
    ComputeCas,
    AuditVerify,
    AuditExport,
    Health,
}

impl Endpoint {
    pub const ALL: [Endpoint; 16] = [
        Endpoint::IngestSession,
        Endpoint::SessionFeatures,
        Endpoint::SessionWindow,
        Endpoint::RunSession,
        Endpoint::GetPrediction,
        Endpoint::GetRelevance,
        Endpoint::OpenContest,
        Endpoint::GetContest,
        Endpoint::ContestDecision,
        Endpoint::ResolveContest,
        Endpoint::Trend,
        Endpoint::AddMedication,
        Endpoint::ComputeCas,
        Endpoint::AuditVerify,
        Endpoint::AuditExport,
        Endpoint::Health,
    ];

    /// Whether the endpoint changes stored state (and so is audited).
    pub fn is_mutating(self) -> bool {
        matches!(
            self,
            Endpoint::IngestSession
                | Endpoint::RunSession
                | Endpoint::OpenContest
                | Endpoint::ContestDecision
                | Endpoint::ResolveContest
                | Endpoint::AddMedication
                | Endpoint::ComputeCas
        )
    }
}

pub fn allowed(endpoint: Endpoint, role: Role) -> bool {
    use Endpoint::*;
    use Role::*;
    match endpoint {
        Health => true,
        IngestSession | AddMedication | ComputeCas => role == Admin,
        SessionFeatures | SessionWindow | RunSession | OpenContest | ContestDecision | Trend => role == Clinician,
        ResolveContest => role == Reviewer,
        GetPrediction | GetRelevance | GetContest => matches!(role, Clinician | Reviewer),
        AuditVerify | AuditExport => matches!(role, Reviewer | Admin),
    }
}
