pub mod assoc;
pub mod dataset;
pub mod error;
pub mod flowlabel;
pub mod geom3d;
pub mod guided;
pub mod hota;
pub mod kitti;
pub mod par;
pub mod synthetic;
pub mod tracker;

pub use error::{Error, Result};
