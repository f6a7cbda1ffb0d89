//! Camera tone-map calibration and probabilistic derendering, with
//! uncertainty-aware exposure fusion, photometric stereo and deconvolution.

pub mod bench;
pub mod calibration;
pub mod deconv;
pub mod derender;
pub mod fft;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod io;
pub mod model;
pub mod photostereo;
pub mod synthcam;

pub use error::{Error, Result};
pub use model::{CameraModel, JpegColor, RawColor, RbfTerm};
