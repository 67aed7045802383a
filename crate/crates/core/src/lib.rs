pub mod alerts;
pub mod background;
pub mod cli;
pub mod dataset;
pub mod detector;
pub mod frame;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod pso;
pub mod synth;
pub mod validator;
