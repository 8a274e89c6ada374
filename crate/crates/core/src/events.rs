//! Append-only per-session event log.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    AgentMessage,
    ToolStarted,
    ToolResult,
    ConditionsChanged,
    Error,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::AgentMessage => "agent_message",
            EventType::ToolStarted => "tool_started",
            EventType::ToolResult => "tool_result",
            EventType::ConditionsChanged => "conditions_changed",
            EventType::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: EventType,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<SessionEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    /// Appends an event and returns its sequence number (starting at 1).
    pub fn push(&mut self, kind: EventType, payload: serde_json::Value) -> u64 {
        let seq = self.last_seq() + 1;
        self.events.push(SessionEvent { seq, kind, payload });
        seq
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn all(&self) -> &[SessionEvent] {
        &self.events
    }

    /// Events with `seq > after`.
    pub fn since(&self, after: u64) -> &[SessionEvent] {
        let start = self.events.partition_point(|e| e.seq <= after);
        &self.events[start..]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
