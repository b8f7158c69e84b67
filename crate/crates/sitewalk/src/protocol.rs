//! Relay wire protocol.
//!
//! Frames are a 4-byte big-endian length followed by one UTF-8 JSON envelope.
//! Envelope bodies are kept as raw JSON so that relayed bodies are forwarded
//! byte for byte.

use std::fmt;

use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sitewalk_core::capture::base64_bytes;
use sitewalk_core::{Capture, Pose2D};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio_util::codec::{Framed, LengthDelimitedCodec};

/// Largest accepted frame. Capture bundles carry PNG payloads.
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Hello,
    HelloAck,
    RobotStateRequest,
    RobotState,
    MissionDispatch,
    MissionAck,
    MissionProgress,
    CaptureBundle,
    QueryCaptures,
    CapturesResult,
    Error,
}

impl MessageType {
    pub fn is_reply(self) -> bool {
        matches!(
            self,
            MessageType::HelloAck
                | MessageType::RobotState
                | MessageType::MissionAck
                | MessageType::CapturesResult
                | MessageType::Error
        )
    }

    /// Types a sender of `role` may put on the wire.
    pub fn allowed_from(self, role: Role) -> bool {
        use MessageType::*;
        match role {
            Role::Client => matches!(self, Hello | RobotStateRequest | MissionDispatch | QueryCaptures),
            Role::Middleware => matches!(self, Hello | RobotState | MissionAck | MissionProgress | CaptureBundle | Error),
            Role::Relay => matches!(self, HelloAck | CapturesResult | Error),
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).expect("enum serializes");
        f.write_str(s.trim_matches('"'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Middleware,
    /// Messages the relay originates itself (acks, errors, query results).
    Relay,
}

impl Role {
    pub fn counterpart(self) -> Option<Role> {
        match self {
            Role::Client => Some(Role::Middleware),
            Role::Middleware => Some(Role::Client),
            Role::Relay => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Client => "client",
            Role::Middleware => "middleware",
            Role::Relay => "relay",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub message_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<String>,
    pub sender_role: Role,
    pub project_id: String,
    pub body: Box<RawValue>,
}

impl Envelope {
    pub fn new<B: Serialize>(kind: MessageType, role: Role, project_id: &str, body: &B) -> Envelope {
        Envelope {
            kind,
            message_id: new_message_id(),
            correlation_id: None,
            sender_role: role,
            project_id: project_id.to_string(),
            body: to_raw(body),
        }
    }

    /// An envelope whose body is the given JSON text, untouched.
    pub fn with_raw_body(kind: MessageType, role: Role, project_id: &str, body: Box<RawValue>) -> Envelope {
        Envelope {
            kind,
            message_id: new_message_id(),
            correlation_id: None,
            sender_role: role,
            project_id: project_id.to_string(),
            body,
        }
    }

    pub fn reply<B: Serialize>(&self, kind: MessageType, role: Role, body: &B) -> Envelope {
        Envelope::new(kind, role, &self.project_id, body).correlated(&self.message_id)
    }

    pub fn correlated(mut self, id: &str) -> Envelope {
        self.correlation_id = Some(id.to_string());
        self
    }

    pub fn body<T: DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_str(self.body.get()).map_err(|e| ProtocolError::Body {
            kind: self.kind,
            reason: e.to_string(),
        })
    }

    pub fn to_bytes(&self) -> bytes::Bytes {
        serde_json::to_vec(self).expect("envelope serializes").into()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
        let env: Envelope = serde_json::from_slice(bytes).map_err(|e| ProtocolError::Envelope(e.to_string()))?;
        if env.message_id.is_empty() {
            return Err(ProtocolError::Envelope("empty message_id".into()));
        }
        if env.kind.is_reply() && env.correlation_id.is_none() {
            return Err(ProtocolError::Envelope(format!("{} without correlation_id", env.kind)));
        }
        Ok(env)
    }
}

pub fn new_message_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

pub fn to_raw<B: Serialize>(body: &B) -> Box<RawValue> {
    serde_json::value::to_raw_value(body).expect("body serializes")
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed envelope: {0}")]
    Envelope(String),
    #[error("malformed {kind} body: {reason}")]
    Body { kind: MessageType, reason: String },
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("connection closed")]
    Closed,
}

/// Length-prefixed envelope stream over any byte transport.
pub type Transport<S> = Framed<S, LengthDelimitedCodec>;

pub fn framed<S: AsyncRead + AsyncWrite>(io: S) -> Transport<S> {
    let codec = LengthDelimitedCodec::builder()
        .length_field_length(4)
        .big_endian()
        .max_frame_length(MAX_FRAME)
        .new_codec();
    Framed::new(io, codec)
}

pub async fn send<S: AsyncRead + AsyncWrite + Unpin>(t: &mut Transport<S>, env: &Envelope) -> Result<(), ProtocolError> {
    t.send(env.to_bytes()).await?;
    Ok(())
}

/// Next envelope, or `Closed` at end of stream.
pub async fn recv<S: AsyncRead + AsyncWrite + Unpin>(t: &mut Transport<S>) -> Result<Envelope, ProtocolError> {
    match t.next().await {
        Some(frame) => Envelope::from_bytes(&frame?),
        None => Err(ProtocolError::Closed),
    }
}

// Bodies.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloAck {
    pub session_id: String,
    pub role: Role,
    pub project_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotActivity {
    Idle,
    Executing,
    Uploading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub localization_degraded: bool,
    /// Wall clock time of the report (RFC 3339).
    pub timestamp: String,
    pub state: RobotActivity,
    pub mission_id: Option<String>,
    /// Simulated seconds since the current mission started.
    pub mission_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionAck {
    pub mission_id: String,
    pub estimated_duration_s: f64,
    pub drp_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionProgress {
    pub mission_id: String,
    /// Simulated seconds since mission start.
    pub t: f64,
    pub pose: Pose2D,
    pub localization_degraded: bool,
    pub fiducial_id: Option<String>,
    /// Index of the next waypoint to reach.
    pub waypoint_index: usize,
    pub waypoint_count: usize,
    pub captures_taken: usize,
    pub drp_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureBundle {
    pub mission_id: String,
    /// `YYYY-MM-DD`.
    pub inspection_date: String,
    pub drp_ids: Vec<String>,
    pub total_time: f64,
    pub captures: Vec<Capture>,
}

/// Which records a QUERY_CAPTURES asks for. Exactly one selector is expected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryCaptures {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub list_dates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedCapture {
    /// Position on the mission path, starting at 0.
    pub order: usize,
    pub capture_id: String,
    pub mission_id: String,
    pub drp_id: String,
    pub pose_at_capture: Pose2D,
    pub timestamp: f64,
    #[serde(with = "base64_bytes")]
    pub payload: Vec<u8>,
}

impl IndexedCapture {
    pub fn new(order: usize, c: Capture) -> Self {
        Self {
            order,
            capture_id: c.capture_id,
            mission_id: c.mission_id,
            drp_id: c.drp_id,
            pose_at_capture: c.pose_at_capture,
            timestamp: c.timestamp,
            payload: c.payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionRecord {
    pub project_id: String,
    pub inspection_date: String,
    pub mission_id: String,
    pub total_time: f64,
    pub captures: Vec<IndexedCapture>,
}

impl InspectionRecord {
    pub fn drp_ids(&self) -> Vec<String> {
        self.captures.iter().map(|c| c.drp_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapturesResult {
    #[serde(default)]
    pub records: Vec<InspectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Unauthorized,
    Conflict,
    IllegalType,
    NoRobotOnline,
    DuplicateMessageId,
    Forbidden,
    BadRequest,
    InvalidBundle,
    StorageError,
    Busy,
    MissionParseError,
    ExecutionError,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).expect("enum serializes");
        f.write_str(s.trim_matches('"'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorBody {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_field_names() {
        let env = Envelope::new(MessageType::RobotStateRequest, Role::Client, "p1", &serde_json::json!({}));
        let v: serde_json::Value = serde_json::from_slice(&env.to_bytes()).unwrap();
        assert_eq!(v["type"], "ROBOT_STATE_REQUEST");
        assert_eq!(v["sender_role"], "client");
        assert_eq!(v["project_id"], "p1");
        assert!(v.get("correlation_id").is_none());
    }

    #[test]
    fn raw_bodies_survive_a_round_trip() {
        let body = RawValue::from_string("{ \"b\":1,   \"a\": [1.50, 2] }".into()).unwrap();
        let env = Envelope::with_raw_body(MessageType::MissionDispatch, Role::Client, "p", body);
        let back = Envelope::from_bytes(&env.to_bytes()).unwrap();
        assert_eq!(back.body.get(), "{ \"b\":1,   \"a\": [1.50, 2] }");
    }

    #[test]
    fn replies_need_correlation() {
        let mut env = Envelope::new(MessageType::HelloAck, Role::Relay, "p", &serde_json::json!({}));
        assert!(Envelope::from_bytes(&env.to_bytes()).is_err());
        env.correlation_id = Some("x".into());
        assert!(Envelope::from_bytes(&env.to_bytes()).is_ok());
        assert!(Envelope::from_bytes(b"{\"type\":\"NOPE\"}").is_err());
    }

    #[test]
    fn role_type_matrix() {
        assert!(MessageType::MissionDispatch.allowed_from(Role::Client));
        assert!(!MessageType::MissionDispatch.allowed_from(Role::Middleware));
        assert!(MessageType::CaptureBundle.allowed_from(Role::Middleware));
        assert!(!MessageType::CaptureBundle.allowed_from(Role::Client));
        assert!(!MessageType::HelloAck.allowed_from(Role::Client));
    }

    #[tokio::test]
    async fn frames_are_length_prefixed() {
        use tokio::io::AsyncReadExt;
        let (a, mut b) = tokio::io::duplex(1 << 16);
        let mut t = framed(a);
        let env = Envelope::new(MessageType::Hello, Role::Client, "p", &Hello { token: "t".into() });
        send(&mut t, &env).await.unwrap();
        let mut len = [0u8; 4];
        b.read_exact(&mut len).await.unwrap();
        let n = u32::from_be_bytes(len) as usize;
        let mut buf = vec![0u8; n];
        b.read_exact(&mut buf).await.unwrap();
        assert_eq!(buf, env.to_bytes().to_vec());
    }
}
