//! Tile-based differentiable rasterizer.
//!
//! Gaussians are projected to screen space, binned into 16×16 tiles by their
//! 3σ bounding boxes and composited front to back. A splat only contributes
//! inside its 3σ ellipse, so the image does not depend on the tile size.

mod backward;
pub mod camera;
mod forward;
pub mod project;
pub mod tiles;

pub use backward::{render_backward, RenderGrads};
pub use camera::{Camera, Intrinsics, Pose, DEFAULT_NEAR};
pub use forward::{render_forward, RenderAux, RenderOptions, RenderOutput, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};
pub use project::{project_covariance, projection_jacobian, ProjectedGaussian, EXTENT_SIGMA, LOW_PASS};
pub use tiles::{bin_tiles, TileGrid, TILE_SIZE};
