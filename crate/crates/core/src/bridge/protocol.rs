//! Newline-delimited JSON frames exchanged with the sandbox worker.
//!
//! Every frame is one JSON object on one line with a `type` discriminator:
//! `hello` → `ready` once per session, then strict `execute` → `result`
//! request/response pairs, and finally `shutdown`. A worker answers frames
//! it cannot interpret with an `error` frame and keeps serving.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Validation,
    Test,
    Both,
}

impl Split {
    pub fn includes_validation(self) -> bool {
        matches!(self, Split::Validation | Split::Both)
    }

    pub fn includes_test(self) -> bool {
        matches!(self, Split::Test | Split::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecStatus::Ok => "ok",
            ExecStatus::Error => "error",
            ExecStatus::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub id: String,
    pub task: String,
    pub split: Split,
    pub source: String,
    pub pre_name: String,
    pub post_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, serde_json::Value>>,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCalls {
    #[serde(default)]
    pub pre: Vec<String>,
    #[serde(default)]
    pub post: Vec<String>,
}

/// One literal argument observed at an API call site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub api: String,
    pub param: String,
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFrame {
    pub id: String,
    pub status: ExecStatus,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub metrics_test: BTreeMap<String, f64>,
    #[serde(default)]
    pub feedback: String,
    #[serde(default)]
    pub api_calls: ApiCalls,
    #[serde(default)]
    pub param_values: Vec<ParamValue>,
    #[serde(default)]
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Hello {
        protocol: u32,
    },
    Ready {
        protocol: u32,
        tasks: Vec<String>,
    },
    Execute(ExecuteRequest),
    Result(ResultFrame),
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        feedback: String,
    },
    Shutdown,
}

impl Frame {
    /// Serializes to a single line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }

    pub fn parse(line: &str) -> Result<Frame, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
    }
}

/// Normalized outcome of one execution, as seen by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub id: String,
    pub status: ExecStatus,
    pub metrics_val: BTreeMap<String, f64>,
    /// Test-split metrics. Never rendered into anything an LLM reads.
    pub metrics_test: BTreeMap<String, f64>,
    pub feedback: String,
    pub api_calls_pre: Vec<String>,
    pub api_calls_post: Vec<String>,
    pub param_values: Vec<ParamValue>,
    pub duration_s: f64,
}

impl ExecutionResult {
    pub fn failed(id: impl Into<String>, status: ExecStatus, feedback: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            status,
            metrics_val: BTreeMap::new(),
            metrics_test: BTreeMap::new(),
            feedback: feedback.into(),
            api_calls_pre: Vec::new(),
            api_calls_post: Vec::new(),
            param_values: Vec::new(),
            duration_s: 0.0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

impl From<ResultFrame> for ExecutionResult {
    fn from(frame: ResultFrame) -> Self {
        let ok = frame.status == ExecStatus::Ok;
        Self {
            id: frame.id,
            status: frame.status,
            metrics_val: if ok { frame.metrics } else { BTreeMap::new() },
            metrics_test: if ok { frame.metrics_test } else { BTreeMap::new() },
            feedback: frame.feedback,
            api_calls_pre: frame.api_calls.pre,
            api_calls_post: frame.api_calls.post,
            param_values: frame.param_values,
            duration_s: frame.duration_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn execute_frame_bytes() {
        let frame = Frame::Execute(ExecuteRequest {
            id: "r0-1".into(),
            task: "quadratic-bowl".into(),
            split: Split::Both,
            source: "def f():\n    pass\n".into(),
            pre_name: "preprocess_images_1".into(),
            post_name: "postprocess_preds_1".into(),
            params: Some(BTreeMap::from([("f1_pre_p1".into(), serde_json::json!(0.5))])),
            timeout_s: 120.0,
        });
        assert_eq!(
            frame.to_line(),
            r#"{"type":"execute","id":"r0-1","task":"quadratic-bowl","split":"both","source":"def f():\n    pass\n","pre_name":"preprocess_images_1","post_name":"postprocess_preds_1","params":{"f1_pre_p1":0.5},"timeout_s":120.0}"#
        );
    }

    #[test]
    fn result_frame_bytes() {
        let frame = Frame::Result(ResultFrame {
            id: "a".into(),
            status: ExecStatus::Ok,
            metrics: BTreeMap::from([("objective".into(), 0.5)]),
            metrics_test: BTreeMap::from([("objective".into(), 0.25)]),
            feedback: String::new(),
            api_calls: ApiCalls {
                pre: vec!["numpy.clip".into()],
                post: vec![],
            },
            param_values: vec![ParamValue {
                api: "numpy.clip".into(),
                param: "a_min".into(),
                value: serde_json::json!(0),
            }],
            duration_s: 0.0,
        });
        let line = frame.to_line();
        assert_eq!(
            line,
            r#"{"type":"result","id":"a","status":"ok","metrics":{"objective":0.5},"metrics_test":{"objective":0.25},"feedback":"","api_calls":{"pre":["numpy.clip"],"post":[]},"param_values":[{"api":"numpy.clip","param":"a_min","value":0}],"duration_s":0.0}"#
        );
        assert_eq!(Frame::parse(&line).unwrap(), frame);
    }

    #[test]
    fn handshake_and_control_frames() {
        assert_eq!(Frame::Hello { protocol: 1 }.to_line(), r#"{"type":"hello","protocol":1}"#);
        assert_eq!(Frame::Shutdown.to_line(), r#"{"type":"shutdown"}"#);
        let ready = Frame::parse(r#"{"type":"ready","protocol":1,"tasks":["quadratic-bowl"]}"#).unwrap();
        assert_eq!(
            ready,
            Frame::Ready {
                protocol: 1,
                tasks: vec!["quadratic-bowl".into()]
            }
        );
        assert!(Frame::parse(r#"{"type":"bogus"}"#).is_err());
    }

    #[test]
    fn failed_results_drop_metrics() {
        let frame = ResultFrame {
            id: "x".into(),
            status: ExecStatus::Error,
            metrics: BTreeMap::from([("objective".into(), 1.0)]),
            metrics_test: BTreeMap::from([("objective".into(), 1.0)]),
            feedback: "boom".into(),
            api_calls: ApiCalls::default(),
            param_values: vec![],
            duration_s: 0.0,
        };
        let result = ExecutionResult::from(frame);
        assert!(result.metrics_val.is_empty());
        assert!(result.metrics_test.is_empty());
    }
}
