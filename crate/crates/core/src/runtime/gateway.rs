//! JSON message protocol between a running session and a viewer.

use std::sync::mpsc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::session::{CompositeEntry, Session, StepEvents, SubFrameEntry};
use crate::guidance::{FoveaDecision, GuidanceMode};
use crate::io::encode_pgm;
use crate::{Error, Field, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Inbound control message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Control {
    Click {
        x: usize,
        y: usize,
    },
    Mode {
        mode: GuidanceMode,
    },
    Pause {},
    Resume {},
    /// Run exactly one fixation while paused.
    Step {},
    Set {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        tau: Option<f64>,
    },
}

pub fn parse_control(text: &str) -> Result<Control> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Protocol(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Protocol("expected a JSON object".into()))?;
    match obj.remove("schema").and_then(|s| s.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(Error::Protocol(format!("unsupported schema {v}"))),
        None => return Err(Error::Protocol("missing schema field".into())),
    }
    serde_json::from_value(value).map_err(|e| Error::Protocol(e.to_string()))
}

fn pgm_base64(field: &Field) -> String {
    BASE64.encode(encode_pgm(field))
}

fn message(kind: &str, mut body: Value) -> String {
    let obj = body.as_object_mut().expect("message bodies are objects");
    obj.insert("schema".into(), json!(SCHEMA_VERSION));
    obj.insert("type".into(), json!(kind));
    body.to_string()
}

pub fn frame_message(s: &SubFrameEntry) -> String {
    let grid = &s.frame.grid;
    let overlay = Field {
        width: grid.width,
        height: grid.height,
        data: grid.boundary_mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    };
    message(
        "frame",
        json!({
            "index": s.index,
            "fixation": s.fixation,
            "shift_index": s.shift_index,
            "center": s.center,
            "t_start": s.record.t_start,
            "t_end": s.record.t_end,
            "image": pgm_base64(&s.frame.image()),
            "overlay": pgm_base64(&overlay),
        }),
    )
}

pub fn blip_message(index: usize, image: &Field, t_start: f64, t_end: f64) -> String {
    message(
        "blip",
        json!({ "index": index, "t_start": t_start, "t_end": t_end, "image": pgm_base64(image) }),
    )
}

pub fn decision_message(index: usize, d: &FoveaDecision) -> String {
    message(
        "decision",
        json!({
            "index": index,
            "t": d.decided_at,
            "center": [d.center.0, d.center.1],
            "reason": d.reason,
        }),
    )
}

pub fn composite_message(c: &CompositeEntry, max_exposure: f64) -> String {
    let exposure = c.composite.exposure();
    let scaled = Field {
        data: exposure.data.iter().map(|e| e / max_exposure).collect(),
        ..exposure
    };
    message(
        "composite",
        json!({
            "index": c.index,
            "kind": c.kind,
            "fixation": c.fixation,
            "t": c.t,
            "frames": c.frames,
            "image": pgm_base64(&c.composite.image()),
            "exposure": pgm_base64(&scaled),
            "max_exposure": max_exposure,
        }),
    )
}

pub fn status_message(state: &str, session: &Session) -> String {
    message(
        "status",
        json!({
            "state": state,
            "clock": session.clock(),
            "mode": session.guidance_mode(),
            "lambda": session.fuser().lambda,
            "tau": session.fuser().tau,
        }),
    )
}

pub fn error_message(text: &str) -> String {
    message("error", json!({ "message": text }))
}

fn ack_message(control: &Control) -> String {
    message("ack", json!({ "control": control }))
}

fn hello_message(session: &Session) -> String {
    let p = session.plan();
    message(
        "hello",
        json!({ "width": p.grid.width, "height": p.grid.height, "plan": p }),
    )
}

/// Messages for one fixation, in acquisition order: blip, decision, then each
/// sub-frame followed by the composites it produced.
pub fn step_messages(session: &Session, events: &StepEvents) -> Vec<String> {
    let out = session.output();
    let mut msgs = Vec::new();
    if let Some(i) = events.blip {
        let b = &out.blips[i];
        msgs.push(blip_message(i, &b.frame.image, b.frame.t_start, b.frame.t_end));
    }
    if let Some(i) = events.decision {
        msgs.push(decision_message(i, &out.decisions[i]));
    }
    let max_exposure = session.plan().max_exposure;
    let mut composites = events.composites.clone().peekable();
    for i in events.subframes.clone() {
        msgs.push(frame_message(&out.subframes[i]));
        if let Some(c) = composites.next() {
            msgs.push(composite_message(&out.composites[c], max_exposure));
        }
    }
    for c in composites {
        msgs.push(composite_message(&out.composites[c], max_exposure));
    }
    msgs
}

pub enum Inbound {
    Message(String),
    Empty,
    Closed,
}

/// Duplex text channel to one viewer.
pub trait Transport {
    fn try_recv(&mut self) -> Inbound;
    /// Blocks until a message arrives; `None` once the peer is gone.
    fn recv(&mut self) -> Option<String>;
    /// Returns false once the peer is gone.
    fn send(&mut self, text: String) -> bool;
}

/// In-process transport over standard channels.
pub struct ChannelTransport {
    pub inbound: mpsc::Receiver<String>,
    pub outbound: mpsc::Sender<String>,
}

impl ChannelTransport {
    /// Returns the transport plus the peer's sending and receiving ends.
    pub fn pair() -> (Self, mpsc::Sender<String>, mpsc::Receiver<String>) {
        let (in_tx, in_rx) = mpsc::channel();
        let (out_tx, out_rx) = mpsc::channel();
        (
            ChannelTransport {
                inbound: in_rx,
                outbound: out_tx,
            },
            in_tx,
            out_rx,
        )
    }
}

impl Transport for ChannelTransport {
    fn try_recv(&mut self) -> Inbound {
        match self.inbound.try_recv() {
            Ok(m) => Inbound::Message(m),
            Err(mpsc::TryRecvError::Empty) => Inbound::Empty,
            Err(mpsc::TryRecvError::Disconnected) => Inbound::Closed,
        }
    }

    fn recv(&mut self) -> Option<String> {
        self.inbound.recv().ok()
    }

    fn send(&mut self, text: String) -> bool {
        self.outbound.send(text).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub duration: f64,
    pub start_paused: bool,
    /// Simulated seconds per wall-clock second; `None` runs flat out.
    pub pace: Option<f64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            duration: 15.0,
            start_paused: false,
            pace: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeEnd {
    Finished,
    Disconnected,
}

struct LoopState {
    paused: bool,
    step_once: bool,
}

/// Applies one inbound message; malformed or rejected input is answered with
/// an error message and otherwise ignored.
fn handle(text: &str, session: &mut Session, state: &mut LoopState, transport: &mut impl Transport) -> bool {
    let control = match parse_control(text) {
        Ok(c) => c,
        Err(e) => return transport.send(error_message(&e.to_string())),
    };
    let applied = match &control {
        Control::Click { x, y } => session.click(*x, *y),
        Control::Mode { mode } => session.set_mode(*mode),
        Control::Pause {} => {
            state.paused = true;
            Ok(())
        }
        Control::Resume {} => {
            state.paused = false;
            Ok(())
        }
        Control::Step {} => {
            state.step_once = true;
            Ok(())
        }
        Control::Set { lambda, tau } => session.set_fusion(*lambda, *tau),
    };
    match applied {
        Ok(()) => {
            let mut ok = transport.send(ack_message(&control));
            if matches!(control, Control::Pause {} | Control::Resume {}) {
                let s = if state.paused { "paused" } else { "running" };
                ok &= transport.send(status_message(s, session));
            }
            ok
        }
        Err(e) => transport.send(error_message(&e.to_string())),
    }
}

/// Drives `session` until `options.duration`, streaming every product and
/// applying controls between fixations.
pub fn serve(session: &mut Session, transport: &mut impl Transport, options: &ServeOptions) -> Result<ServeEnd> {
    let mut state = LoopState {
        paused: options.start_paused,
        step_once: false,
    };
    if !transport.send(hello_message(session)) {
        return Ok(ServeEnd::Disconnected);
    }
    let initial = if state.paused { "paused" } else { "running" };
    if !transport.send(status_message(initial, session)) {
        return Ok(ServeEnd::Disconnected);
    }
    loop {
        loop {
            match transport.try_recv() {
                Inbound::Message(text) => {
                    if !handle(&text, session, &mut state, transport) {
                        return Ok(ServeEnd::Disconnected);
                    }
                }
                Inbound::Empty => break,
                Inbound::Closed => return Ok(ServeEnd::Disconnected),
            }
        }
        if session.clock() >= options.duration {
            transport.send(status_message("finished", session));
            return Ok(ServeEnd::Finished);
        }
        if state.paused && !state.step_once {
            match transport.recv() {
                Some(text) => {
                    if !handle(&text, session, &mut state, transport) {
                        return Ok(ServeEnd::Disconnected);
                    }
                    continue;
                }
                None => return Ok(ServeEnd::Disconnected),
            }
        }
        state.step_once = false;
        let before = session.clock();
        let events = match session.step() {
            Ok(e) => e,
            Err(e) => {
                transport.send(error_message(&e.to_string()));
                return Err(e);
            }
        };
        for m in step_messages(session, &events) {
            if !transport.send(m) {
                return Ok(ServeEnd::Disconnected);
            }
        }
        if let Some(pace) = options.pace.filter(|p| *p > 0.0) {
            std::thread::sleep(Duration::from_secs_f64((session.clock() - before) / pace));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{AcquisitionPlan, CompositeCadence};
    use crate::scene::{presets, DynamicScene};
    use std::thread;

    fn plan() -> AcquisitionPlan {
        AcquisitionPlan {
            cadence: CompositeCadence::OnDemand,
            seed: 5,
            ..AcquisitionPlan::default()
        }
    }

    fn scene() -> DynamicScene {
        presets::moving_sign(128, 128, 3.0)
    }

    fn parse(m: &str) -> Value {
        serde_json::from_str(m).unwrap()
    }

    #[test]
    fn controls_parse_and_reject() {
        assert_eq!(
            parse_control(r#"{"schema":1,"type":"click","x":30,"y":40}"#).unwrap(),
            Control::Click { x: 30, y: 40 }
        );
        assert_eq!(
            parse_control(r#"{"schema":1,"type":"mode","mode":"wavelet"}"#).unwrap(),
            Control::Mode { mode: GuidanceMode::Wavelet }
        );
        assert_eq!(
            parse_control(r#"{"schema":1,"type":"set","tau":0.2}"#).unwrap(),
            Control::Set { lambda: None, tau: Some(0.2) }
        );
        for bad in [
            "not json",
            "[1,2]",
            r#"{"type":"pause"}"#,
            r#"{"schema":2,"type":"pause"}"#,
            r#"{"schema":1,"type":"warp"}"#,
            r#"{"schema":1,"type":"click","x":-3,"y":4}"#,
            r#"{"schema":1,"type":"click","x":3}"#,
            r#"{"schema":1,"type":"pause","extra":1}"#,
            r#"{"schema":1,"type":"mode","mode":"telepathy"}"#,
        ] {
            assert!(matches!(parse_control(bad), Err(Error::Protocol(_))), "{bad}");
        }
    }

    fn collect_until_finished(out: &mpsc::Receiver<String>) -> Vec<Value> {
        let mut msgs = Vec::new();
        for m in out.iter() {
            let v = parse(&m);
            let done = v["type"] == "status" && v["state"] == "finished";
            msgs.push(v);
            if done {
                break;
            }
        }
        msgs
    }

    #[test]
    fn streamed_session_matches_offline_run() {
        let duration = 1.2;
        let (mut transport, tx, rx) = ChannelTransport::pair();
        let handle = thread::spawn(move || {
            let mut session = Session::new(plan(), scene()).unwrap();
            let end = serve(
                &mut session,
                &mut transport,
                &ServeOptions {
                    duration,
                    start_paused: true,
                    pace: None,
                },
            )
            .unwrap();
            (end, session.finish())
        });
        tx.send(r#"{"schema":1,"type":"click","x":30,"y":40}"#.into()).unwrap();
        tx.send(r#"{"schema":1,"type":"resume"}"#.into()).unwrap();
        let msgs = collect_until_finished(&rx);
        let (end, streamed) = handle.join().unwrap();
        assert_eq!(end, ServeEnd::Finished);

        let mut offline = Session::new(plan(), scene()).unwrap();
        offline.click(30, 40).unwrap();
        offline.run_until(duration).unwrap();
        let offline = offline.finish();
        assert_eq!(streamed, offline);

        assert!(msgs.iter().all(|m| m["schema"] == 1));
        let frames: Vec<_> = msgs.iter().filter(|m| m["type"] == "frame").collect();
        assert_eq!(frames.len(), offline.subframes.len());
        for (f, s) in frames.iter().zip(&offline.subframes) {
            let bytes = BASE64.decode(f["image"].as_str().unwrap()).unwrap();
            assert_eq!(bytes, encode_pgm(&s.frame.image()));
        }
        let composites: Vec<_> = msgs.iter().filter(|m| m["type"] == "composite").collect();
        assert_eq!(composites.len(), offline.composites.len());
        for (m, c) in composites.iter().zip(&offline.composites) {
            let bytes = BASE64.decode(m["image"].as_str().unwrap()).unwrap();
            assert_eq!(bytes, encode_pgm(&c.composite.image()));
            assert_eq!(m["frames"], json!(c.frames));
        }
        let decisions: Vec<_> = msgs.iter().filter(|m| m["type"] == "decision").collect();
        assert_eq!(decisions.len(), offline.decisions.len());
        assert_eq!(decisions[0]["reason"], "manual");
        for (m, d) in decisions.iter().zip(&offline.decisions) {
            assert_eq!(m["t"].as_f64().unwrap(), d.decided_at);
            assert_eq!(m["center"], json!([d.center.0, d.center.1]));
        }
    }

    #[test]
    fn malformed_input_is_reported_and_the_session_continues() {
        let (mut transport, tx, rx) = ChannelTransport::pair();
        let handle = thread::spawn(move || {
            let mut session = Session::new(plan(), scene()).unwrap();
            let opts = ServeOptions {
                duration: 0.5,
                start_paused: true,
                pace: None,
            };
            serve(&mut session, &mut transport, &opts).unwrap();
            let lambda = session.fuser().lambda;
            (lambda, session.finish())
        });
        for m in [
            "{oops",
            r#"{"schema":1,"type":"click","x":9999,"y":0}"#,
            r#"{"schema":1,"type":"set","lambda":-2}"#,
            r#"{"schema":1,"type":"step"}"#,
        ] {
            tx.send(m.into()).unwrap();
        }
        let msgs = collect_until_finished(&rx);
        let count = |t: &str| msgs.iter().filter(|v| v["type"] == t).count();
        assert_eq!(count("error"), 3);
        assert_eq!(count("frame"), 4);
        let (lambda, out) = handle.join().unwrap();
        assert_eq!(out.fixations, 1, "0.5 s is one fixation plus its blip");
        assert_eq!(lambda, AcquisitionPlan::default().lambda);
    }

    #[test]
    fn disconnect_ends_the_loop() {
        let (mut transport, tx, rx) = ChannelTransport::pair();
        drop(tx);
        drop(rx);
        let mut session = Session::new(plan(), scene()).unwrap();
        let end = serve(&mut session, &mut transport, &ServeOptions::default()).unwrap();
        assert_eq!(end, ServeEnd::Disconnected);
        assert_eq!(session.output().fixations, 0);
    }
}
