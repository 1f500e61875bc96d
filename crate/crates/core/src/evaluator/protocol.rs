//! Newline-delimited JSON messages exchanged with an evaluator plugin over
//! its standard input and output.
//!
//! Host to plugin:
//!
//! ```text
//! {"type":"eval","id":7,"candidate":{...},"epoch_budget":40,"seed":1}
//! ```
//!
//! Plugin to host:
//!
//! ```text
//! {"type":"hello","protocol_version":1,"capabilities":["multiplex"]}
//! {"type":"progress","id":7,"epoch":1,"accuracy":0.31}
//! {"type":"result","id":7,"curve":[0.31,...],"status":"ok"}
//! {"type":"result","id":7,"status":"failed","reason":"out of memory"}
//! ```

use serde::{Deserialize, Serialize};

use super::{EvalRequest, EvalResult, EvalStatus};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HostMessage {
    Eval(EvalRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PluginMessage {
    Hello {
        protocol_version: u32,
        #[serde(default)]
        capabilities: Vec<String>,
    },
    Progress {
        id: u64,
        epoch: u32,
        accuracy: f64,
    },
    Result(EvalResult),
}

fn protocol(message: impl Into<String>, line: &str) -> Error {
    Error::Protocol {
        message: message.into(),
        line: line.to_string(),
    }
}

fn check_accuracy(v: f64, line: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(protocol(format!("accuracy {v} outside [0, 1]"), line));
    }
    Ok(())
}

/// One JSON record, no trailing newline.
pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

pub fn encode_request(r: &EvalRequest) -> String {
    encode(&HostMessage::Eval(r.clone()))
}

pub fn parse_request(line: &str) -> Result<EvalRequest> {
    match serde_json::from_str::<HostMessage>(line.trim_end()) {
        Ok(HostMessage::Eval(r)) if r.epoch_budget >= 1 => Ok(r),
        Ok(_) => Err(protocol("epoch_budget must be at least 1", line)),
        Err(e) => Err(protocol(e.to_string(), line)),
    }
}

/// Parses and sanity-checks one plugin record.
pub fn parse_plugin_message(line: &str) -> Result<PluginMessage> {
    let msg: PluginMessage =
        serde_json::from_str(line.trim_end()).map_err(|e| protocol(e.to_string(), line))?;
    match &msg {
        PluginMessage::Progress {
            epoch, accuracy, ..
        } => {
            if *epoch == 0 {
                return Err(protocol("epochs are numbered from 1", line));
            }
            check_accuracy(*accuracy, line)?;
        }
        PluginMessage::Result(r) => {
            for &v in &r.curve {
                check_accuracy(v, line)?;
            }
            if r.status == EvalStatus::Ok && r.curve.is_empty() {
                return Err(protocol("ok result without a curve", line));
            }
        }
        PluginMessage::Hello { .. } => {}
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::space::sample_uniform;

    #[test]
    fn wire_shapes() {
        let ok = EvalResult {
            id: 3,
            curve: vec![0.25, 0.5],
            status: EvalStatus::Ok,
        };
        assert_eq!(
            encode(&PluginMessage::Result(ok)),
            r#"{"type":"result","id":3,"curve":[0.25,0.5],"status":"ok"}"#
        );
        let failed = r#"{"type":"result","id":4,"status":"failed","reason":"boom"}"#;
        assert_eq!(
            parse_plugin_message(failed).unwrap(),
            PluginMessage::Result(EvalResult::failed(4, vec![], "boom"))
        );
        let hello = r#"{"type":"hello","protocol_version":1,"capabilities":[]}"#;
        assert!(matches!(
            parse_plugin_message(hello).unwrap(),
            PluginMessage::Hello {
                protocol_version: 1,
                ..
            }
        ));
    }

    #[test]
    fn request_round_trip() {
        let space = builtin::default_space();
        for seed in 0..20 {
            let r = EvalRequest {
                id: seed * 7,
                candidate: sample_uniform(&space, seed),
                epoch_budget: 1 + seed as u32,
                seed: u64::MAX - seed,
            };
            let line = encode_request(&r);
            assert!(line.starts_with(r#"{"type":"eval","id":"#));
            assert_eq!(parse_request(&line).unwrap(), r);
        }
    }

    #[test]
    fn malformed_lines_report_the_line() {
        for line in [
            "not json",
            r#"{"type":"progress","id":1,"epoch":1,"accuracy":1.5}"#,
            r#"{"type":"progress","id":1,"epoch":0,"accuracy":0.5}"#,
            r#"{"type":"result","id":1,"status":"ok"}"#,
            r#"{"type":"bogus"}"#,
        ] {
            match parse_plugin_message(line) {
                Err(Error::Protocol { line: l, .. }) => assert_eq!(l, line),
                other => panic!("{line}: {other:?}"),
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn result_round_trip(
            id in proptest::prelude::any::<u64>(),
            curve in proptest::collection::vec(0.0f64..=1.0, 1..50),
            failed in proptest::prelude::any::<bool>(),
        ) {
            let r = if failed {
                EvalResult::failed(id, curve, "reason with \"quotes\"\n")
            } else {
                EvalResult { id, curve, status: EvalStatus::Ok }
            };
            let back = parse_plugin_message(&encode(&PluginMessage::Result(r.clone()))).unwrap();
            proptest::prop_assert_eq!(back, PluginMessage::Result(r));
        }
    }
}
