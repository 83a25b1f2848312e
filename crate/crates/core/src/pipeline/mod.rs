//! Clip orchestration: configuration, manifests, the staged clip run, corpus
//! runs, exports and evaluation metrics.

mod config;
mod manifest;
mod metrics;
mod ply;
mod run;

pub use config::{ConfigError, ExportConfig, FilterConfig, PipelineConfig, RunConfig, TrackConfig};
pub use manifest::{find_manifests, ClipManifest, DepthInput, LabelInput, ManifestError, ViewInput};
pub use metrics::{eval_metrics, MetricsError, SceneFlowMetrics};
pub use ply::{export_pointcloud, export_trajectories, read_ply, track_color, PlyData, PlyError, PlyOptions};
pub use run::{run_clip, run_corpus, ClipFailure, ClipOutputs, ClipReport, CorpusSummary, Stage, ViewReport};
