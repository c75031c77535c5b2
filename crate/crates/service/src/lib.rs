//! Live sessions over WebSocket (`/session`) or raw TCP, plus read-only
//! `/tasks` and `/dataset/{file}` resources.

pub mod outbox;
pub mod protocol;
mod server;
pub mod session;

pub use protocol::{ClientMsg, ErrorCode, FrameMsg, ServerMsg, TaskInfo, PROTOCOL_VERSION};
pub use server::{router, serve, serve_connection, Server, ServiceConfig, ServiceError};
pub use session::{Session, SessionConfig};
