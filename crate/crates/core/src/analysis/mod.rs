//! Post-reconstruction analysis of the pixel map and reference image.

pub mod focus;
pub mod phase;
pub mod split_half;
pub mod thickness;
pub mod zernike;

pub use focus::{focus_profile, FocusVolume, ZRange};
pub use phase::{calculate_phase, remove_tilt, Phase};
pub use split_half::{split_half_recon, Histogram, SplitHalf};
pub use thickness::{calculate_sample_thickness, Thickness, ThicknessParams};
pub use zernike::{zernike_fit, Pupil, ZernikeFit};
