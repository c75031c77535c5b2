//! One interactive episode per connection.
//!
//! [`Session`] is synchronous and owns the [`ExecState`]; [`run_session`]
//! drives it from client messages and a frame clock.

use std::sync::Arc;
use std::time::Duration;

use modsim_core::executor::{EventKind, ExecConfig, ExecState, ExecStatus, ModulationPointMark};
use modsim_core::modlang::{parse, ModulationIR};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;

use crate::outbox::Outbox;
use crate::protocol::{ClientMsg, ErrorCode, FrameMsg, ServerMsg};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub frame_rate_hz: f64,
    /// Queued frames beyond which event-less frames are dropped.
    pub max_lag_frames: usize,
    pub exec: ExecConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 20.0,
            max_lag_frames: 100,
            exec: ExecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub msg: ServerMsg,
    pub droppable: bool,
}

impl Outgoing {
    fn kept(msg: ServerMsg) -> Self {
        Self { msg, droppable: false }
    }
}

struct Pending {
    at_frame: u64,
    ir: ModulationIR,
}

struct Live {
    exec: ExecState,
    turbo: bool,
    /// Sorted by `at_frame`, stable for equal frames.
    pending: Vec<Pending>,
    events_sent: usize,
    marks: Vec<ModulationPointMark>,
    done_sent: bool,
}

impl Live {
    /// Sends events not yet sent; returns how many there were.
    fn drain_events(&mut self, out: &mut Vec<Outgoing>) -> usize {
        let new = &self.exec.events[self.events_sent..];
        for e in new {
            if let EventKind::ModulationApplied { mark, .. } = &e.kind {
                self.marks.push(*mark);
            }
            out.push(Outgoing::kept(ServerMsg::Event(e.clone())));
        }
        let n = new.len();
        self.events_sent += n;
        n
    }

    fn frame(&self, dropped_before: u64) -> ServerMsg {
        let f = self.exec.frame();
        ServerMsg::Frame(Box::new(FrameMsg {
            index: f.index,
            t: f.t,
            views: f.views,
            gripper: f.gripper,
            objects: f.objects,
            status: self.exec.status,
            cursor: self.exec.plan.cursor,
            modulation_points: self.exec.plan.modulation_points.clone(),
            marks: self.marks.clone(),
            dropped_before,
        }))
    }

    /// Injects every pending command due at the current frame. Once the
    /// episode has ended all remaining commands are due.
    fn flush_due(&mut self, out: &mut Vec<Outgoing>) {
        loop {
            let terminal = self.exec.status.is_terminal();
            match self.pending.first() {
                Some(p) if terminal || p.at_frame <= self.exec.step_count => {
                    let p = self.pending.remove(0);
                    self.exec.inject(p.ir);
                }
                _ => break,
            }
        }
        self.drain_events(out);
        if self.exec.status.is_terminal() && !self.done_sent {
            self.done_sent = true;
            out.push(Outgoing::kept(ServerMsg::Done {
                success: self.exec.status == ExecStatus::Done,
                status: self.exec.status,
            }));
        }
    }
}

pub struct Session {
    config: SessionConfig,
    live: Option<Live>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Self {
        Self { config, live: None }
    }

    pub fn exec(&self) -> Option<&ExecState> {
        self.live.as_ref().map(|l| &l.exec)
    }

    pub fn is_running(&self) -> bool {
        self.live.as_ref().is_some_and(|l| l.exec.status == ExecStatus::Running)
    }

    pub fn turbo(&self) -> bool {
        self.live.as_ref().is_some_and(|l| l.turbo)
    }

    pub fn handle(&mut self, msg: ClientMsg, out: &mut Vec<Outgoing>) {
        match msg {
            ClientMsg::Start {
                task,
                variation,
                seed,
                turbo,
                paused,
            } => match ExecState::from_task(&task, &variation, seed, self.config.exec) {
                Ok(mut exec) => {
                    if paused {
                        exec.pause();
                    }
                    let mut live = Live {
                        exec,
                        turbo,
                        pending: Vec::new(),
                        events_sent: 0,
                        marks: Vec::new(),
                        done_sent: false,
                    };
                    out.push(Outgoing::kept(live.frame(0)));
                    live.flush_due(out);
                    self.live = Some(live);
                }
                Err(e) => out.push(Outgoing::kept(ServerMsg::error(ErrorCode::UnknownTask, e.to_string()))),
            },
            ClientMsg::Command {
                command_id,
                text,
                at_frame,
            } => self.command(command_id, &text, at_frame, out),
            ClientMsg::Pause | ClientMsg::Resume | ClientMsg::Stop if self.live.is_none() => {
                out.push(Outgoing::kept(ServerMsg::error(ErrorCode::NoSession, "no episode started")));
            }
            ClientMsg::Pause => {
                let live = self.live.as_mut().expect("checked");
                live.exec.pause();
                out.push(Outgoing::kept(live.frame(0)));
            }
            ClientMsg::Resume => {
                let live = self.live.as_mut().expect("checked");
                live.exec.resume();
                out.push(Outgoing::kept(live.frame(0)));
            }
            ClientMsg::Stop => {
                let live = self.live.take().expect("checked");
                if !live.done_sent {
                    out.push(Outgoing::kept(ServerMsg::Done {
                        success: false,
                        status: live.exec.status,
                    }));
                }
            }
        }
    }

    fn command(&mut self, command_id: Value, text: &str, at_frame: Option<u64>, out: &mut Vec<Outgoing>) {
        let Some(live) = self.live.as_mut() else {
            out.push(Outgoing::kept(ServerMsg::Error {
                code: ErrorCode::NoSession,
                message: "no episode started".into(),
                command_id: Some(command_id),
            }));
            return;
        };
        let ir = match parse(text) {
            Ok(ir) => ir,
            Err(e) => {
                out.push(Outgoing::kept(ServerMsg::Error {
                    code: ErrorCode::ParseError,
                    message: e.to_string(),
                    command_id: Some(command_id),
                }));
                return;
            }
        };
        out.push(Outgoing::kept(ServerMsg::Ack {
            command_id,
            parsed: ir.clone(),
        }));
        let at_frame = at_frame.unwrap_or(live.exec.step_count);
        let pos = live.pending.partition_point(|p| p.at_frame <= at_frame);
        live.pending.insert(pos, Pending { at_frame, ir });
        live.flush_due(out);
    }

    /// Advances one step if running.
    pub fn tick(&mut self, out: &mut Vec<Outgoing>) {
        let Some(live) = self.live.as_mut() else {
            return;
        };
        if live.exec.status != ExecStatus::Running {
            return;
        }
        if live.exec.step_count >= live.exec.config.step_cap {
            live.exec.fail("step cap exceeded");
        } else {
            live.exec.step().expect("running state steps");
        }
        let mut events = Vec::new();
        let n = live.drain_events(&mut events);
        let terminal = live.exec.status.is_terminal();
        out.extend(events);
        out.push(Outgoing {
            msg: live.frame(0),
            droppable: n == 0 && !terminal,
        });
        live.flush_due(out);
    }
}

/// What the connection reader hands to the session.
#[derive(Debug)]
pub enum Inbound {
    Msg(ClientMsg),
    /// Unparseable input; the session reports it and ends.
    Bad(String),
}

/// Runs a session until the client goes away or sends a bad message, then
/// closes `outbox`.
pub async fn run_session(mut rx: mpsc::Receiver<Inbound>, outbox: Arc<Outbox>, config: SessionConfig) {
    let period = Duration::from_secs_f64(1.0 / config.frame_rate_hz.max(1e-3));
    let mut clock = tokio::time::interval(period);
    clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut session = Session::new(config);
    let mut buf = Vec::new();
    loop {
        let running = session.is_running();
        let turbo = session.turbo();
        tokio::select! {
            biased;
            inbound = rx.recv() => match inbound {
                Some(Inbound::Msg(msg)) => session.handle(msg, &mut buf),
                Some(Inbound::Bad(reason)) => {
                    outbox.push(ServerMsg::error(ErrorCode::BadMessage, reason));
                    break;
                }
                None => break,
            },
            _ = clock.tick(), if running && !turbo => session.tick(&mut buf),
            _ = tokio::task::yield_now(), if running && turbo => session.tick(&mut buf),
        }
        for o in buf.drain(..) {
            if o.droppable {
                outbox.push_frame(o.msg, true);
            } else {
                outbox.push(o.msg);
            }
        }
    }
    outbox.close();
}
