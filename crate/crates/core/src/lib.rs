//! Layered 3D Gaussian scenes from a single image and a two-layer depth map.

pub mod camera;
pub mod composer;
pub mod depth;
pub mod error;
pub mod fit;
pub mod initializer;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod synthetic;

pub use camera::{compose_projection, transform_gaussian, ComposedProjection};
pub use composer::{compose, compose_backward, ActivationSpec};
pub use depth::FrustumMask;
pub use error::{Error, Result};
pub use fit::{fit, make_ssft_pair, FitConfig, FitProblem, FitTrace, FitView, SsftPair};
pub use initializer::{init_gaussians, InitConfig};
pub use losses::{total_loss, LossParts, LossReport, LossWeights};
pub use metrics::{psnr, ssim};
pub use render::{render, render_backward, render_reference, Frame, RenderGrad, Viewport};
pub use scene::*;
