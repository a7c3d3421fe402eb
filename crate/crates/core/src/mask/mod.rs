//! Binary masks, run-length coding, and the response-set containers.

mod response;
mod rle;
pub mod schema;

pub use response::{Masklet, ResponseSet};
pub use rle::{Bitmap, BoundingBox, RleMask};
