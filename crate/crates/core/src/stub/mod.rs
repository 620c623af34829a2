//! Reference worker implementing the stdio wire contract without a Python
//! runtime.
//!
//! It evaluates the `quadratic-bowl` task analytically and reads a small set
//! of `# stub:` directive comments from candidate function bodies so tests
//! can script failures:
//!
//! - `# stub: p1=0.6 p2=0.3` hardcoded bowl parameters (used when no params are injected)
//! - `# stub: raise ZeroDivisionError` execution error with a traceback
//! - `# stub: bad-shape` output-shape violation
//! - `# stub: hang` never returns (until killed)
//! - `# stub: exit` the worker process dies mid-request
//!
//! API-call and literal-parameter metadata come from [`scan`].

pub mod scan;

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;

use crate::bridge::protocol::{
    ApiCalls, ExecStatus, ExecuteRequest, Frame, ResultFrame, PROTOCOL_VERSION,
};
use crate::presets::QUADRATIC_BOWL;

/// Validation-split optimum of the bowl.
pub const BOWL_VAL_OPTIMUM: (f64, f64) = (0.73, 0.20);
/// Test-split optimum; offset from validation so overfitting is observable.
pub const BOWL_TEST_OPTIMUM: (f64, f64) = (0.70, 0.25);
pub const BOWL_DEFAULT: f64 = 0.5;

pub fn bowl_objective(p1: f64, p2: f64, optimum: (f64, f64)) -> f64 {
    1.0 - (p1 - optimum.0).powi(2) - (p2 - optimum.1).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubOptions {
    pub tasks: Vec<String>,
    /// Replace every test-split metric with this value (leak testing).
    pub sealed_sentinel: Option<f64>,
}

impl Default for StubOptions {
    fn default() -> Self {
        Self {
            tasks: vec![QUADRATIC_BOWL.to_owned()],
            sealed_sentinel: None,
        }
    }
}

impl StubOptions {
    /// Parses `--tasks a,b` and `--sealed-sentinel X`.
    pub fn from_args<S: AsRef<str>>(args: &[S]) -> Result<Self, String> {
        let mut opts = Self::default();
        let mut iter = args.iter().map(AsRef::as_ref);
        while let Some(arg) = iter.next() {
            match arg {
                "--tasks" => {
                    let list = iter.next().ok_or("--tasks needs a value")?;
                    opts.tasks = list
                        .split(',')
                        .filter(|t| !t.is_empty())
                        .map(str::to_owned)
                        .collect();
                }
                "--sealed-sentinel" => {
                    let value = iter.next().ok_or("--sealed-sentinel needs a value")?;
                    opts.sealed_sentinel =
                        Some(value.parse().map_err(|_| format!("bad sentinel {value}"))?);
                }
                other => return Err(format!("unknown stub worker argument `{other}`")),
            }
        }
        Ok(opts)
    }
}

/// Why [`StubWorker::serve`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeExit {
    Shutdown,
    Eof,
    /// A candidate asked the worker to die.
    Died,
    Cancelled,
}

enum Outcome {
    Reply(ResultFrame),
    Died,
    Cancelled,
}

#[derive(Debug, Clone, Default)]
pub struct StubWorker {
    options: StubOptions,
}

impl StubWorker {
    pub fn new(options: StubOptions) -> Self {
        Self { options }
    }

    pub fn serve<R: BufRead, W: Write>(
        &self,
        input: R,
        mut output: W,
        cancel: &AtomicBool,
    ) -> io::Result<ServeExit> {
        for line in input.lines() {
            let line = line?;
            if cancel.load(Ordering::SeqCst) {
                return Ok(ServeExit::Cancelled);
            }
            if line.trim().is_empty() {
                continue;
            }
            let reply = match Frame::parse(&line) {
                Ok(Frame::Hello { .. }) => Frame::Ready {
                    protocol: PROTOCOL_VERSION,
                    tasks: self.options.tasks.clone(),
                },
                Ok(Frame::Shutdown) => return Ok(ServeExit::Shutdown),
                Ok(Frame::Execute(request)) => match self.execute(&request, cancel) {
                    Outcome::Reply(result) => Frame::Result(result),
                    Outcome::Died => return Ok(ServeExit::Died),
                    Outcome::Cancelled => return Ok(ServeExit::Cancelled),
                },
                Ok(other) => Frame::Error {
                    id: None,
                    feedback: format!("unexpected frame from engine: {}", frame_type(&other)),
                },
                Err(err) => Frame::Error {
                    id: serde_json::from_str::<serde_json::Value>(&line)
                        .ok()
                        .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_owned)),
                    feedback: format!("malformed frame: {err}"),
                },
            };
            writeln!(output, "{}", reply.to_line())?;
            output.flush()?;
        }
        Ok(ServeExit::Eof)
    }

    fn execute(&self, req: &ExecuteRequest, cancel: &AtomicBool) -> Outcome {
        let fail = |feedback: String| {
            Outcome::Reply(ResultFrame {
                id: req.id.clone(),
                status: ExecStatus::Error,
                metrics: BTreeMap::new(),
                metrics_test: BTreeMap::new(),
                feedback,
                api_calls: ApiCalls::default(),
                param_values: Vec::new(),
                duration_s: 0.0,
            })
        };

        if !self.options.tasks.iter().any(|t| t == &req.task) {
            return fail(format!("unsupported task `{}`", req.task));
        }
        let bindings = scan::import_bindings(&req.source);
        let mut api_calls = ApiCalls::default();
        let mut param_values = Vec::new();
        let mut bodies = Vec::new();
        for (name, calls) in [(&req.pre_name, &mut api_calls.pre), (&req.post_name, &mut api_calls.post)] {
            let Some(body) = scan::function_body(&req.source, name) else {
                return fail(format!(
                    "Traceback (most recent call last):\n  File \"<candidate>\", line 1, in <module>\nNameError: name '{name}' is not defined"
                ));
            };
            let (found, params) = scan::api_calls(body, &bindings);
            *calls = found;
            param_values.extend(params);
            bodies.push((name.as_str(), body));
        }

        let mut hardcoded = BTreeMap::new();
        for (name, body) in &bodies {
            for directive in scan::directives(body) {
                let mut words = directive.split_whitespace();
                match words.next() {
                    Some("exit") => return Outcome::Died,
                    Some("hang") => loop {
                        if cancel.load(Ordering::SeqCst) {
                            return Outcome::Cancelled;
                        }
                        std::thread::sleep(Duration::from_millis(5));
                    },
                    Some("raise") => {
                        let exc = words.next().unwrap_or("RuntimeError");
                        let message = match exc {
                            "ZeroDivisionError" => "division by zero",
                            _ => "raised by candidate",
                        };
                        return fail(format!(
                            "Traceback (most recent call last):\n  File \"<candidate>\", line 3, in {name}\n{exc}: {message}"
                        ));
                    }
                    Some("bad-shape") => {
                        return fail(format!(
                            "output shape violation: {name} must return an array shaped like its input"
                        ))
                    }
                    Some(first) => {
                        for assignment in std::iter::once(first).chain(words) {
                            if let Some((key, value)) = assignment.split_once('=') {
                                if let Ok(v) = value.parse::<f64>() {
                                    hardcoded.insert(key.to_owned(), v);
                                }
                            }
                        }
                    }
                    None => {}
                }
            }
        }

        if req.task != QUADRATIC_BOWL {
            return fail(format!("task `{}` is not implemented by the stub worker", req.task));
        }
        let p1 = bowl_param(req.params.as_ref(), &hardcoded, "p1");
        let p2 = bowl_param(req.params.as_ref(), &hardcoded, "p2");

        let mut metrics = BTreeMap::new();
        let mut metrics_test = BTreeMap::new();
        if req.split.includes_validation() {
            metrics.insert("objective".to_owned(), bowl_objective(p1, p2, BOWL_VAL_OPTIMUM));
        }
        if req.split.includes_test() {
            let value = self
                .options
                .sealed_sentinel
                .unwrap_or_else(|| bowl_objective(p1, p2, BOWL_TEST_OPTIMUM));
            metrics_test.insert("objective".to_owned(), value);
        }
        Outcome::Reply(ResultFrame {
            id: req.id.clone(),
            status: ExecStatus::Ok,
            metrics,
            metrics_test,
            feedback: String::new(),
            api_calls,
            param_values,
            duration_s: 0.0,
        })
    }
}

fn bowl_param(
    params: Option<&BTreeMap<String, serde_json::Value>>,
    hardcoded: &BTreeMap<String, f64>,
    ident: &str,
) -> f64 {
    static PREFIX: OnceLock<Regex> = OnceLock::new();
    let prefix = PREFIX.get_or_init(|| Regex::new(r"^f\d+_(?:pre|post)_").unwrap());
    if let Some(params) = params {
        for (name, value) in params {
            if prefix.replace(name, "") == ident {
                if let Some(v) = value.as_f64() {
                    return v;
                }
            }
        }
    }
    hardcoded.get(ident).copied().unwrap_or(BOWL_DEFAULT)
}

fn frame_type(frame: &Frame) -> &'static str {
    match frame {
        Frame::Hello { .. } => "hello",
        Frame::Ready { .. } => "ready",
        Frame::Execute(_) => "execute",
        Frame::Result(_) => "result",
        Frame::Error { .. } => "error",
        Frame::Shutdown => "shutdown",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(lines: &[&str]) -> (Vec<Frame>, ServeExit) {
        let input = lines.join("\n");
        let mut out = Vec::new();
        let exit = StubWorker::default()
            .serve(input.as_bytes(), &mut out, &AtomicBool::new(false))
            .unwrap();
        let frames = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| Frame::parse(l).unwrap())
            .collect();
        (frames, exit)
    }

    fn execute_line(source: &str, params: Option<serde_json::Value>) -> String {
        let mut v = serde_json::json!({
            "type": "execute", "id": "x", "task": "quadratic-bowl", "split": "both",
            "source": source, "pre_name": "preprocess_images_1", "post_name": "postprocess_preds_1",
            "timeout_s": 5.0
        });
        if let Some(p) = params {
            v["params"] = p;
        }
        v.to_string()
    }

    const PAIR: &str = "def preprocess_images_1(x):\n    return x\n\ndef postprocess_preds_1(x):\n    return x\n";

    #[test]
    fn handshake_unknown_and_shutdown() {
        let (frames, exit) = run(&[
            r#"{"type":"hello","protocol":1}"#,
            r#"{"type":"nonsense","id":"q"}"#,
            "not json",
            r#"{"type":"shutdown"}"#,
            r#"{"type":"hello","protocol":1}"#,
        ]);
        assert_eq!(exit, ServeExit::Shutdown);
        assert_eq!(frames.len(), 3);
        assert!(matches!(frames[0], Frame::Ready { protocol: 1, .. }));
        assert!(matches!(&frames[1], Frame::Error { id: Some(id), .. } if id == "q"));
        assert!(matches!(frames[2], Frame::Error { id: None, .. }));
    }

    #[test]
    fn bowl_defaults_and_params() {
        let (frames, _) = run(&[
            &execute_line(PAIR, None),
            &execute_line(PAIR, Some(serde_json::json!({"f1_pre_p1": 0.73, "f1_post_p2": 0.2}))),
        ]);
        let Frame::Result(defaults) = &frames[0] else { panic!() };
        assert!((defaults.metrics["objective"] - 0.8571).abs() < 1e-12);
        let Frame::Result(optimum) = &frames[1] else { panic!() };
        assert_eq!(optimum.metrics["objective"], 1.0);
        assert!(optimum.metrics_test["objective"] < 1.0);
    }

    #[test]
    fn directives_drive_failures() {
        let raising = PAIR.replace("    return x\n\ndef post", "    # stub: raise ZeroDivisionError\n    return x\n\ndef post");
        let (frames, _) = run(&[&execute_line(&raising, None)]);
        let Frame::Result(result) = &frames[0] else { panic!() };
        assert_eq!(result.status, ExecStatus::Error);
        assert!(result.feedback.contains("ZeroDivisionError"));

        let dying = PAIR.replace("    return x\n\ndef post", "    # stub: exit\n    return x\n\ndef post");
        let (frames, exit) = run(&[&execute_line(&dying, None), &execute_line(PAIR, None)]);
        assert!(frames.is_empty());
        assert_eq!(exit, ServeExit::Died);
    }

    #[test]
    fn missing_entry_point_is_name_error() {
        let (frames, _) = run(&[&execute_line("def preprocess_images_1(x):\n    return x\n", None)]);
        let Frame::Result(result) = &frames[0] else { panic!() };
        assert!(result.feedback.contains("NameError"));
    }

    #[test]
    fn option_parsing() {
        let opts = StubOptions::from_args(&["--tasks", "synth-spots", "--sealed-sentinel", "424242"]).unwrap();
        assert_eq!(opts.tasks, vec!["synth-spots"]);
        assert_eq!(opts.sealed_sentinel, Some(424242.0));
        assert!(StubOptions::from_args(&["--what"]).is_err());
    }
}
