//! Interactive exploration backend: WebSocket sessions that move a camera
//! through a manifold and stream rendered frames.

pub mod protocol;
pub mod server;
pub mod session;

pub use server::{router, serve, serve_blocking};
pub use session::{NavCommand, Quality, Session};

pub const DEFAULT_PORT: u16 = 8787;
