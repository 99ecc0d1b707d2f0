//! Command and telemetry wire messages.
//!
//! Every record on the wire is a single UTF-8 JSON object tagged with a
//! `kind` field. Field names are fixed so encoded output is byte-stable:
//!
//! ```text
//! {"kind":"command","seq":1,"ts_us":0,"steering":0.0,"throttle":0.0,"brake":0.0}
//! ```
//!
//! All timestamps are integer microseconds. Sequence numbers start at 1; a
//! telemetry record with `echo_seq == 0` and `echo_ts_us == 0` means the
//! vehicle has not processed any command yet.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::metrics::MetricSummary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MessageError {
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("field `{field}` is invalid: {reason}")]
    Invalid {
        field: &'static str,
        reason: &'static str,
    },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("expected a `{expected}` record, got `{found}`")]
    WrongKind {
        expected: &'static str,
        found: String,
    },
}

/// Operator intent, normalized. Steering in [-1, 1], pedals in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopCommand {
    pub seq: u64,
    pub ts_us: u64,
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl TeleopCommand {
    pub fn neutral(seq: u64, ts_us: u64) -> Self {
        Self {
            seq,
            ts_us,
            steering: 0.0,
            throttle: 0.0,
            brake: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), MessageError> {
        check_seq("seq", self.seq)?;
        check_range("steering", self.steering, -1.0, 1.0)?;
        check_range("throttle", self.throttle, 0.0, 1.0)?;
        check_range("brake", self.brake, 0.0, 1.0)
    }
}

/// Vehicle state report with the echo of the last processed command.
///
/// `x_m`, `y_m` and `heading_rad` are optional on decode (default 0) and only
/// feed the top-down view; the measurement procedures never read them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub seq: u64,
    pub ts_us: u64,
    pub speed_mps: f64,
    pub steering_pos: f64,
    pub echo_ts_us: u64,
    pub echo_seq: u64,
    #[serde(default)]
    pub x_m: f64,
    #[serde(default)]
    pub y_m: f64,
    #[serde(default)]
    pub heading_rad: f64,
}

impl Telemetry {
    pub fn has_echo(&self) -> bool {
        self.echo_seq != 0
    }

    pub fn validate(&self) -> Result<(), MessageError> {
        check_seq("seq", self.seq)?;
        check_range("steering_pos", self.steering_pos, -1.0, 1.0)?;
        if !(self.speed_mps >= 0.0 && self.speed_mps.is_finite()) {
            return Err(MessageError::OutOfRange {
                field: "speed_mps",
                value: self.speed_mps,
            });
        }
        if self.echo_seq == 0 && self.echo_ts_us != 0 {
            return Err(MessageError::Invalid {
                field: "echo_ts_us",
                reason: "must be 0 when echo_seq is the no-command sentinel",
            });
        }
        for (field, v) in [
            ("x_m", self.x_m),
            ("y_m", self.y_m),
            ("heading_rad", self.heading_rad),
        ] {
            if !v.is_finite() {
                return Err(MessageError::OutOfRange { field, value: v });
            }
        }
        Ok(())
    }
}

/// Per-frame G2G sample pushed to live clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: u64,
    pub event_us: u64,
    pub display_us: u64,
    pub g2g_us: u64,
}

/// Rolling summaries pushed to live clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySnapshot {
    pub ts_us: u64,
    pub rtt: Option<MetricSummary>,
    pub g2g: Option<MetricSummary>,
}

/// Any record that can travel in a wire envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Message {
    Command(TeleopCommand),
    Telemetry(Telemetry),
    FrameMeta(FrameMeta),
    Summary(SummarySnapshot),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Command(_) => "command",
            Message::Telemetry(_) => "telemetry",
            Message::FrameMeta(_) => "frame-meta",
            Message::Summary(_) => "summary",
        }
    }

    pub fn validate(&self) -> Result<(), MessageError> {
        match self {
            Message::Command(c) => c.validate(),
            Message::Telemetry(t) => t.validate(),
            Message::FrameMeta(f) => {
                if f.display_us < f.event_us || f.g2g_us != f.display_us - f.event_us {
                    return Err(MessageError::Invalid {
                        field: "g2g_us",
                        reason: "must equal display_us - event_us",
                    });
                }
                Ok(())
            }
            Message::Summary(_) => Ok(()),
        }
    }
}

impl From<TeleopCommand> for Message {
    fn from(c: TeleopCommand) -> Self {
        Message::Command(c)
    }
}

impl From<Telemetry> for Message {
    fn from(t: Telemetry) -> Self {
        Message::Telemetry(t)
    }
}

fn check_seq(field: &'static str, seq: u64) -> Result<(), MessageError> {
    if seq == 0 {
        return Err(MessageError::Invalid {
            field,
            reason: "sequence numbers start at 1",
        });
    }
    Ok(())
}

fn check_range(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), MessageError> {
    // NaN fails both comparisons
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(MessageError::OutOfRange { field, value })
    }
}

/// Encodes a message as canonical JSON bytes.
pub fn encode(msg: &Message) -> Result<Vec<u8>, MessageError> {
    msg.validate()?;
    serde_json::to_vec(msg).map_err(|e| MessageError::Malformed(e.to_string()))
}

pub fn encode_command(cmd: &TeleopCommand) -> Result<Vec<u8>, MessageError> {
    encode(&Message::Command(*cmd))
}

pub fn encode_telemetry(t: &Telemetry) -> Result<Vec<u8>, MessageError> {
    encode(&Message::Telemetry(*t))
}

const COMMAND_FIELDS: &[&str] = &["seq", "ts_us", "steering", "throttle", "brake"];
const TELEMETRY_FIELDS: &[&str] = &[
    "seq",
    "ts_us",
    "speed_mps",
    "steering_pos",
    "echo_ts_us",
    "echo_seq",
];
const FRAME_FIELDS: &[&str] = &["frame_id", "event_us", "display_us", "g2g_us"];
const SUMMARY_FIELDS: &[&str] = &["ts_us"];

/// Decodes one envelope. Unknown extra fields are ignored.
pub fn decode(bytes: &[u8]) -> Result<Message, MessageError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| MessageError::Malformed(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(MessageError::Malformed("record is not an object".into()));
    };
    let kind = match obj.remove("kind") {
        Some(Value::String(k)) => k,
        Some(_) => return Err(MessageError::Malformed("`kind` is not a string".into())),
        None => return Err(MessageError::MissingField("kind")),
    };
    let msg = match kind.as_str() {
        "command" => Message::Command(typed(obj, COMMAND_FIELDS)?),
        "telemetry" => Message::Telemetry(typed(obj, TELEMETRY_FIELDS)?),
        "frame-meta" => Message::FrameMeta(typed(obj, FRAME_FIELDS)?),
        "summary" => Message::Summary(typed(obj, SUMMARY_FIELDS)?),
        _ => return Err(MessageError::UnknownKind(kind)),
    };
    msg.validate()?;
    Ok(msg)
}

pub fn decode_command(bytes: &[u8]) -> Result<TeleopCommand, MessageError> {
    match decode(bytes)? {
        Message::Command(c) => Ok(c),
        other => Err(MessageError::WrongKind {
            expected: "command",
            found: other.kind().to_string(),
        }),
    }
}

pub fn decode_telemetry(bytes: &[u8]) -> Result<Telemetry, MessageError> {
    match decode(bytes)? {
        Message::Telemetry(t) => Ok(t),
        other => Err(MessageError::WrongKind {
            expected: "telemetry",
            found: other.kind().to_string(),
        }),
    }
}

fn typed<T: serde::de::DeserializeOwned>(
    obj: Map<String, Value>,
    required: &[&'static str],
) -> Result<T, MessageError> {
    if let Some(missing) = required.iter().find(|f| !obj.contains_key(**f)) {
        return Err(MessageError::MissingField(missing));
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| MessageError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sequence went from {previous} to {current}")]
pub struct SeqViolation {
    pub previous: u64,
    pub current: u64,
}

/// Flags any non-increasing sequence number in a session stream.
#[derive(Debug, Default, Clone)]
pub struct SeqMonitor {
    last: Option<u64>,
    violations: u64,
}

impl SeqMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, seq: u64) -> Result<(), SeqViolation> {
        let prev = self.last;
        match prev {
            Some(p) if seq <= p => {
                self.violations += 1;
                Err(SeqViolation {
                    previous: p,
                    current: seq,
                })
            }
            _ => {
                self.last = Some(seq);
                Ok(())
            }
        }
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_command_has_all_fields() {
        let bytes = encode_command(&TeleopCommand::neutral(1, 0)).unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            r#"{"kind":"command","seq":1,"ts_us":0,"steering":0.0,"throttle":0.0,"brake":0.0}"#
        );
    }

    #[test]
    fn steering_out_of_range_rejected() {
        let mut c = TeleopCommand::neutral(1, 0);
        c.steering = 1.5;
        assert_eq!(
            encode_command(&c),
            Err(MessageError::OutOfRange {
                field: "steering",
                value: 1.5
            })
        );
        c.steering = f64::NAN;
        assert!(encode_command(&c).is_err());
    }

    #[test]
    fn telemetry_round_trip() {
        let t = Telemetry {
            seq: 7,
            ts_us: 123_456,
            speed_mps: 5.5,
            steering_pos: -0.25,
            echo_ts_us: 120_000,
            echo_seq: 3,
            x_m: 0.0,
            y_m: 0.0,
            heading_rad: 0.0,
        };
        let bytes = encode_telemetry(&t).unwrap();
        assert_eq!(decode_telemetry(&bytes).unwrap(), t);
    }

    #[test]
    fn missing_ts_is_reported() {
        let raw = br#"{"kind":"command","seq":1,"steering":0.0,"throttle":0.0,"brake":0.0}"#;
        assert_eq!(decode(raw), Err(MessageError::MissingField("ts_us")));
    }

    #[test]
    fn extra_fields_are_dropped() {
        let raw = br#"{"kind":"command","seq":2,"ts_us":10,"steering":0.5,"throttle":0.1,"brake":0.0,"debug":true}"#;
        let cmd = decode_command(raw).unwrap();
        assert_eq!(
            cmd,
            TeleopCommand {
                seq: 2,
                ts_us: 10,
                steering: 0.5,
                throttle: 0.1,
                brake: 0.0
            }
        );
        // re-encoding is canonical: the unknown field is gone
        assert!(!String::from_utf8(encode_command(&cmd).unwrap())
            .unwrap()
            .contains("debug"));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode(b"{not json"),
            Err(MessageError::Malformed(_))
        ));
        assert!(matches!(decode(b"[1,2]"), Err(MessageError::Malformed(_))));
        assert!(matches!(
            decode(br#"{"kind":"bogus"}"#),
            Err(MessageError::UnknownKind(_))
        ));
        assert!(matches!(
            decode(
                br#"{"kind":"command","seq":1,"ts_us":0,"steering":-1.01,"throttle":0,"brake":0}"#
            ),
            Err(MessageError::OutOfRange {
                field: "steering",
                ..
            })
        ));
        let t = br#"{"kind":"telemetry","seq":1,"ts_us":0,"speed_mps":0,"steering_pos":0,"echo_ts_us":0,"echo_seq":0}"#;
        assert!(matches!(
            decode_command(t),
            Err(MessageError::WrongKind {
                expected: "command",
                ..
            })
        ));
        assert!(decode_telemetry(t).is_ok());
    }

    #[test]
    fn sentinel_echo_must_be_zero() {
        let raw = br#"{"kind":"telemetry","seq":1,"ts_us":0,"speed_mps":0,"steering_pos":0,"echo_ts_us":5,"echo_seq":0}"#;
        assert!(matches!(
            decode(raw),
            Err(MessageError::Invalid {
                field: "echo_ts_us",
                ..
            })
        ));
    }

    #[test]
    fn seq_monitor_flags_decrease() {
        let mut m = SeqMonitor::new();
        assert!(m.observe(1).is_ok());
        assert!(m.observe(2).is_ok());
        assert_eq!(
            m.observe(2),
            Err(SeqViolation {
                previous: 2,
                current: 2
            })
        );
        assert!(m.observe(1).is_err());
        assert!(m.observe(3).is_ok());
        assert_eq!(m.violations(), 2);
    }
}
