//! Per-connection send queue shared by the session (producer) and the
//! socket writer (consumer).

use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::protocol::ServerMsg;

struct Queued {
    msg: ServerMsg,
    droppable: bool,
}

#[derive(Default)]
struct State {
    queue: VecDeque<Queued>,
    frames: usize,
    closed: bool,
    dropped: u64,
}

pub struct Outbox {
    state: Mutex<State>,
    notify: Notify,
    max_lag: usize,
}

impl Outbox {
    pub fn new(max_lag: usize) -> Self {
        Self {
            state: Mutex::new(State::default()),
            notify: Notify::new(),
            max_lag,
        }
    }

    pub fn push(&self, msg: ServerMsg) {
        self.push_inner(msg, false);
    }

    /// Queues a frame. Frames pushed with `droppable` may be discarded if
    /// more than `max_lag` frames are waiting.
    pub fn push_frame(&self, msg: ServerMsg, droppable: bool) {
        self.push_inner(msg, droppable);
    }

    fn push_inner(&self, msg: ServerMsg, droppable: bool) {
        let mut s = self.state.lock().expect("outbox lock");
        if s.closed {
            return;
        }
        let is_frame = matches!(msg, ServerMsg::Frame(_));
        s.queue.push_back(Queued { msg, droppable });
        if is_frame {
            s.frames += 1;
            if s.frames > self.max_lag {
                drop_oldest(&mut s);
            }
        }
        drop(s);
        self.notify.notify_one();
    }

    /// No further messages are accepted; queued ones are still delivered.
    pub fn close(&self) {
        self.state.lock().expect("outbox lock").closed = true;
        self.notify.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("outbox lock").dropped
    }

    /// Next message, or `None` once closed and drained.
    pub async fn pop(&self) -> Option<ServerMsg> {
        loop {
            {
                let mut s = self.state.lock().expect("outbox lock");
                if let Some(q) = s.queue.pop_front() {
                    if matches!(q.msg, ServerMsg::Frame(_)) {
                        s.frames -= 1;
                    }
                    return Some(q.msg);
                }
                if s.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }
}

fn drop_oldest(s: &mut State) {
    // The newest entry is kept so the gap can be recorded on it.
    let last = s.queue.len() - 1;
    let Some(i) = s.queue.iter().take(last).position(|q| q.droppable) else {
        return;
    };
    let removed = s.queue.remove(i).expect("index in range");
    let ServerMsg::Frame(f) = removed.msg else {
        unreachable!("only frames are droppable")
    };
    let carried = 1 + f.dropped_before;
    if let Some(next) = s.queue.iter_mut().skip(i).find_map(|q| match &mut q.msg {
        ServerMsg::Frame(f) => Some(f),
        _ => None,
    }) {
        next.dropped_before += carried;
    }
    s.frames -= 1;
    s.dropped += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::FrameMsg;
    use modsim_core::executor::ExecStatus;
    use modsim_core::{GripperState, Vec3};

    fn frame(index: u64) -> ServerMsg {
        ServerMsg::Frame(Box::new(FrameMsg {
            index,
            t: 0.0,
            views: vec![],
            gripper: GripperState::open_at(Vec3::new(0.0, 0.0, 0.0)),
            objects: vec![],
            status: ExecStatus::Running,
            cursor: 0,
            modulation_points: vec![],
            marks: vec![],
            dropped_before: 0,
        }))
    }

    fn index_and_gap(m: &ServerMsg) -> (u64, u64) {
        match m {
            ServerMsg::Frame(f) => (f.index, f.dropped_before),
            _ => panic!("not a frame"),
        }
    }

    #[tokio::test]
    async fn lagging_client_loses_only_droppable_frames() {
        let out = Outbox::new(3);
        for i in 0..10 {
            out.push_frame(frame(i), i != 2);
        }
        out.close();
        let mut got = vec![];
        while let Some(m) = out.pop().await {
            got.push(index_and_gap(&m));
        }
        assert_eq!(got.len(), 3);
        assert_eq!(got[0], (2, 2));
        let mut expected_next = 0;
        for &(i, gap) in &got {
            assert_eq!(i - gap, expected_next);
            expected_next = i + 1;
        }
        assert_eq!(expected_next, 10);
        assert_eq!(out.dropped(), 7);
    }

    #[tokio::test]
    async fn closed_outbox_drains_then_ends() {
        let out = Outbox::new(100);
        out.push(ServerMsg::error(crate::protocol::ErrorCode::NoSession, "x"));
        out.close();
        out.push(frame(0));
        assert!(out.pop().await.is_some());
        assert!(out.pop().await.is_none());
    }
}
