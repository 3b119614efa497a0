pub mod access;
pub mod config;
pub mod http;
pub mod llm;
pub mod service;
pub mod store;

pub use http::{router, serve, SharedService};
pub use service::{Service, ServiceError};
