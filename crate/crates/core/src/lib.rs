pub mod ann;
pub mod clock;
pub mod metrics;
pub mod node;
pub mod notification;
pub mod replay;
pub mod repository;
pub mod scheduler;
pub mod stream_core;
pub mod synthetic;
pub mod types;
pub mod windowing;
