//! Seasonal quantile-mapping bias correction of daily precipitation with
//! parametric, empirical and stitched wet-day distributions.

pub mod dist;
pub mod error;
pub mod fitting;
pub mod grid_io;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod season_stats;
pub mod ssr_qm;
pub mod stitch_bj;

pub use dist::{DistModel, EgpParams, EmpiricalModel, ExpWParams, GammaParams, ModelKind, StitchModel};
pub use error::{Error, Result};
pub use fitting::{FitConfig, FitResult};
pub use grid_io::{GridStack, ModelRecord, ModelStore};
pub use metrics::{PixelMetrics, QuantileGrid};
pub use pipeline::RunConfig;
pub use season_stats::Season;
pub use ssr_qm::{SsrConfig, TransferFunction};
pub use stitch_bj::StitchDecision;
