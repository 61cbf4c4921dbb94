//! Audio-visual token compression: chunk refinement over a cross-modal
//! correspondence field, then per-chunk video and audio compression.

pub mod container;
pub mod correspondence;
pub mod cpcr;
pub mod error;
pub mod export;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod saac;
pub mod scenario;
pub mod stream;
pub mod sweep;
pub mod tensor;
pub mod tsst;

pub use error::{Error, ErrorKind, Result};
pub use params::HyperParams;
pub use pipeline::{
    run_pipeline, run_pipeline_with, CompressionReport, PipelineOptions, PipelineRun,
};
pub use stream::{AudioStream, VideoStream};
pub use tensor::EmbeddingMatrix;
