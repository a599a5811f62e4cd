//! Line-delimited JSON protocol between the tracker and an out-of-process
//! predictor. The tracker sends `init` once, then one `predict` per frame
//! naming the memory entries to condition on; the predictor answers each
//! `predict` with a `prediction` or an `error`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::trace::{decode_candidates, FrameRecord, Trace, WireCandidate};
use super::{CandidateSet, Predictor};
use crate::error::Error;
use crate::mask::BinaryMask;
use crate::membank::{MemoryView, ViewSlot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Init {
        width: usize,
        height: usize,
        init_rle: Vec<u64>,
        #[serde(default)]
        config: serde_json::Value,
    },
    Predict {
        frame_index: u64,
        memory_view: Vec<ViewSlot>,
    },
    Prediction {
        candidates: Vec<WireCandidate>,
    },
    Shutdown {},
    Error {
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, Error> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }
}

fn send(w: &mut impl Write, msg: &Message) -> Result<(), Error> {
    w.write_all(msg.to_line().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::Protocol(format!("write failed: {e}")))
}

/// Client side of the protocol over any reader/writer pair.
pub struct ProtocolClient<R, W> {
    reader: R,
    writer: W,
    width: usize,
    height: usize,
}

impl<R: BufRead, W: Write> ProtocolClient<R, W> {
    /// Sends `init` and returns a ready client.
    pub fn connect(
        reader: R,
        mut writer: W,
        init_mask: &BinaryMask,
        config: serde_json::Value,
    ) -> Result<Self, Error> {
        let (width, height) = init_mask.dims();
        send(
            &mut writer,
            &Message::Init {
                width,
                height,
                init_rle: init_mask.to_rle(),
                config,
            },
        )?;
        Ok(Self {
            reader,
            writer,
            width,
            height,
        })
    }

    pub fn request(&mut self, frame_index: u64, memory_view: Vec<ViewSlot>) -> Result<CandidateSet, Error> {
        send(
            &mut self.writer,
            &Message::Predict {
                frame_index,
                memory_view,
            },
        )?;
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::Protocol(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Protocol("predictor closed the stream".into()));
        }
        match Message::parse(&line)? {
            Message::Prediction { candidates } => decode_candidates(self.width, self.height, &candidates)
                .map_err(|e| Error::Protocol(format!("bad prediction: {e}"))),
            Message::Error { message } => Err(Error::Predictor {
                frame: frame_index,
                message,
            }),
            other => Err(Error::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn shutdown(&mut self) -> Result<(), Error> {
        send(&mut self.writer, &Message::Shutdown {})
    }
}

impl<R: BufRead, W: Write> Predictor for ProtocolClient<R, W> {
    fn predict(&mut self, frame_index: u64, view: &MemoryView<'_>) -> Result<CandidateSet, Error> {
        self.request(frame_index, view.slots())
    }
}

/// A predictor running as a child process speaking the protocol on its
/// standard streams.
pub struct BridgePredictor {
    client: Option<ProtocolClient<BufReader<ChildStdout>, ChildStdin>>,
    child: Child,
}

impl BridgePredictor {
    pub fn spawn(
        program: &str,
        args: &[String],
        init_mask: &BinaryMask,
        config: serde_json::Value,
    ) -> Result<Self, Error> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let client = ProtocolClient::connect(stdout, stdin, init_mask, config)?;
        Ok(Self {
            client: Some(client),
            child,
        })
    }

    /// Sends `shutdown` and waits for the child to exit.
    pub fn close(mut self) -> Result<(), Error> {
        self.finish()
    }

    fn finish(&mut self) -> Result<(), Error> {
        if let Some(mut c) = self.client.take() {
            // The child may already be gone; still reap it.
            let sent = c.shutdown();
            drop(c);
            self.child.wait()?;
            sent?;
        }
        Ok(())
    }
}

impl Predictor for BridgePredictor {
    fn predict(&mut self, frame_index: u64, view: &MemoryView<'_>) -> Result<CandidateSet, Error> {
        match &mut self.client {
            Some(c) => c.predict(frame_index, view),
            None => Err(Error::Protocol("bridge already closed".into())),
        }
    }
}

impl Drop for BridgePredictor {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ServeStats {
    pub predictions: usize,
    pub errors: usize,
}

/// Reference server answering `predict` from a recorded trace. Malformed or
/// out-of-order requests get an `error` reply and the session continues.
pub fn serve_trace(trace: &Trace, reader: impl BufRead, mut writer: impl Write) -> Result<ServeStats, Error> {
    let by_frame: std::collections::BTreeMap<u64, &FrameRecord> =
        trace.frames.iter().map(|f| (f.frame_index, f)).collect();
    let mut dims: Option<(usize, usize)> = None;
    let mut stats = ServeStats::default();

    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::parse(&line) {
            Err(e) => Err(e.to_string()),
            Ok(Message::Shutdown {}) => break,
            Ok(Message::Init { width, height, init_rle, .. }) => {
                let trace_dims = trace.frames.first().map(|f| (f.width, f.height));
                if let Err(e) = BinaryMask::from_rle(width, height, &init_rle) {
                    Err(format!("bad init mask: {e}"))
                } else if trace_dims.is_some_and(|d| d != (width, height)) {
                    Err(format!("init is {width}x{height}, trace is {:?}", trace_dims.unwrap()))
                } else {
                    dims = Some((width, height));
                    Ok(None)
                }
            }
            Ok(Message::Predict { frame_index, .. }) => match (dims, by_frame.get(&frame_index)) {
                (None, _) => Err("predict before init".to_string()),
                (Some(_), None) => Err(format!("frame {frame_index} is not in the trace")),
                (Some(_), Some(rec)) => Ok(Some(Message::Prediction {
                    candidates: rec.candidates.clone(),
                })),
            },
            Ok(other) => Err(format!("unexpected message {other:?}")),
        };
        let msg = match reply {
            Ok(None) => continue,
            Ok(Some(m)) => {
                stats.predictions += 1;
                m
            }
            Err(message) => {
                stats.errors += 1;
                Message::Error { message }
            }
        };
        writer.write_all(msg.to_line().as_bytes())?;
        writer.flush()?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BBox;
    use crate::membank::EntryKind;

    fn trace() -> Trace {
        let m = BinaryMask::rectangle(4, 4, BBox::new(1, 1, 2, 2).unwrap());
        let e = BinaryMask::new(4, 4);
        let c = CandidateSet::new([m, e.clone(), e], [0.75, 0.0, 0.0]).unwrap();
        Trace {
            header: None,
            frames: vec![FrameRecord::from_candidates(1, &c), FrameRecord::from_candidates(2, &c)],
        }
    }

    fn session(input: &str) -> (Vec<Message>, ServeStats) {
        let mut out = Vec::new();
        let stats = serve_trace(&trace(), input.as_bytes(), &mut out).unwrap();
        let msgs = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| Message::parse(l).unwrap())
            .collect();
        (msgs, stats)
    }

    #[test]
    fn message_round_trip() {
        let msgs = [
            Message::Init {
                width: 2,
                height: 1,
                init_rle: vec![0, 2],
                config: serde_json::json!({"n_dam": 6}),
            },
            Message::Predict {
                frame_index: 3,
                memory_view: vec![ViewSlot {
                    frame_index: 0,
                    kind: EntryKind::Init,
                    temporal_rank: None,
                }],
            },
            Message::Prediction { candidates: vec![] },
            Message::Shutdown {},
            Message::Error { message: "x".into() },
        ];
        for m in msgs {
            assert_eq!(Message::parse(&m.to_line()).unwrap(), m);
        }
        assert!(Message::to_line(&Message::Shutdown {}).contains(r#""type":"shutdown""#));
    }

    #[test]
    fn predict_before_init_is_an_error() {
        let (msgs, stats) = session(r#"{"type":"predict","frame_index":1,"memory_view":[]}"#);
        assert!(matches!(msgs[..], [Message::Error { .. }]));
        assert_eq!(stats.errors, 1);
    }

    #[test]
    fn survives_garbage() {
        let init = Message::Init {
            width: 4,
            height: 4,
            init_rle: vec![0, 16],
            config: serde_json::Value::Null,
        }
        .to_line();
        let input = format!(
            "{{not json\n{init}{{\"type\":\"warp\"}}\n{}{}",
            Message::Predict { frame_index: 2, memory_view: vec![] }.to_line(),
            Message::Predict { frame_index: 9, memory_view: vec![] }.to_line(),
        );
        let (msgs, stats) = session(&input);
        assert_eq!(stats, ServeStats { predictions: 1, errors: 3 });
        assert!(matches!(msgs[2], Message::Prediction { .. }));
    }

    #[test]
    fn client_against_server_in_memory() {
        let init = BinaryMask::full(4, 4);
        let mut req = Vec::new();
        {
            let mut c = ProtocolClient::connect(&b""[..], &mut req, &init, serde_json::Value::Null).unwrap();
            assert!(c.request(1, vec![]).is_err()); // no server output yet
        }
        let mut out = Vec::new();
        serve_trace(&trace(), req.as_slice(), &mut out).unwrap();
        let mut c = ProtocolClient::connect(out.as_slice(), Vec::new(), &init, serde_json::Value::Null).unwrap();
        let got = c.request(1, vec![]).unwrap();
        assert_eq!(got, trace().frames[0].candidate_set().unwrap());
    }
}
