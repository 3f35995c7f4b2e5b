pub mod config;
pub mod engine;
pub mod records;
pub mod service;
