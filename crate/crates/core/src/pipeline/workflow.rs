use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::MetaphorId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowState {
    Sourced,
    ScreenedVisual,
    DiscardedNonVisual,
    Elaborated,
    Validated,
    Imaged,
    Published,
    Abandoned,
}

impl WorkflowState {
    pub const ALL: [WorkflowState; 8] = [
        WorkflowState::Sourced,
        WorkflowState::ScreenedVisual,
        WorkflowState::DiscardedNonVisual,
        WorkflowState::Elaborated,
        WorkflowState::Validated,
        WorkflowState::Imaged,
        WorkflowState::Published,
        WorkflowState::Abandoned,
    ];

    /// The only transition function; every state change goes through it.
    pub fn apply(self, event: WorkflowEvent) -> Result<WorkflowState> {
        use WorkflowEvent as E;
        use WorkflowState as S;
        let next = match (self, event) {
            (S::Sourced, E::ScreenVisual) => S::ScreenedVisual,
            (S::Sourced, E::ScreenNonVisual) => S::DiscardedNonVisual,
            (S::ScreenedVisual, E::Elaborate) => S::Elaborated,
            (S::Elaborated, E::Validate) => S::Validated,
            (S::Validated, E::GenerateImages) => S::Imaged,
            (S::Imaged, E::Regenerate) => S::Imaged,
            (S::Imaged, E::Publish) => S::Published,
            (S::Imaged, E::Abandon) => S::Abandoned,
            (from, event) => return Err(Error::IllegalTransition { from: from.to_string(), event: event.to_string() }),
        };
        Ok(next)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, WorkflowState::DiscardedNonVisual | WorkflowState::Published | WorkflowState::Abandoned)
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowEvent {
    ScreenVisual,
    ScreenNonVisual,
    Elaborate,
    Validate,
    GenerateImages,
    Regenerate,
    Publish,
    Abandon,
}

impl WorkflowEvent {
    pub const ALL: [WorkflowEvent; 8] = [
        WorkflowEvent::ScreenVisual,
        WorkflowEvent::ScreenNonVisual,
        WorkflowEvent::Elaborate,
        WorkflowEvent::Validate,
        WorkflowEvent::GenerateImages,
        WorkflowEvent::Regenerate,
        WorkflowEvent::Publish,
        WorkflowEvent::Abandon,
    ];
}

impl fmt::Display for WorkflowEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub event: WorkflowEvent,
    pub actor: String,
    pub at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRecord {
    pub metaphor_id: MetaphorId,
    pub state: WorkflowState,
    pub version: u64,
    pub history: Vec<HistoryEntry>,
}

impl WorkflowRecord {
    pub fn new(metaphor_id: MetaphorId) -> Self {
        WorkflowRecord { metaphor_id, state: WorkflowState::Sourced, version: 0, history: Vec::new() }
    }

    /// Applies `event`; on error the record is left untouched.
    pub fn record(
        &mut self,
        event: WorkflowEvent,
        actor: &str,
        at: DateTime<Utc>,
        detail: Option<String>,
    ) -> Result<()> {
        let next = self.state.apply(event)?;
        self.state = next;
        self.history.push(HistoryEntry { event, actor: actor.to_owned(), at, detail });
        self.version += 1;
        Ok(())
    }

    /// Bumps the version for mutations that do not change state.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn check_version(&self, expected: Option<u64>) -> Result<()> {
        match expected {
            Some(v) if v != self.version => {
                Err(Error::Conflict { id: self.metaphor_id.to_string(), expected: v, actual: self.version })
            }
            _ => Ok(()),
        }
    }

    /// Replays `history` from `Sourced`.
    pub fn replay(history: &[HistoryEntry]) -> Result<WorkflowState> {
        history.iter().try_fold(WorkflowState::Sourced, |s, h| s.apply(h.event))
    }
}
