//! Networked side of sitewalk: the relay server, the site middleware that
//! drives the simulated robot, and the mission client with its HTTP gateway.
//!
//! Everything speaks the length-prefixed JSON envelope protocol in [`protocol`].

pub mod client;
pub mod gateway;
pub mod middleware;
pub mod protocol;
pub mod relay;
pub mod store;

pub use client::{ClientError, MissionPlanner, RelayClient};
pub use middleware::{Middleware, MiddlewareConfig};
pub use relay::{Relay, RelayConfig};
