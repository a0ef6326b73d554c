pub mod cli;
pub mod error;
pub mod io;
pub mod losses;
pub mod raster;
pub mod scene;
pub mod synthetic;
pub mod train;
pub mod velocity;
pub mod warp;

pub use error::{Error, Result};
