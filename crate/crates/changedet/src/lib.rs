//! Change detection for registered serial grayscale images.
//!
//! The pipeline compares a baseline image with a follow-up of the same
//! subject: intensities are mutually normalized, a rectangular region of
//! candidate change is extracted from directional difference profiles,
//! a per-pixel similarity map is computed over that region, and a seeded
//! region growing pass turns the map into a change mask. A companion
//! simulator fabricates follow-ups with known ground truth so the whole
//! chain can be scored.

pub mod detect;
pub mod error;
pub mod eroc;
pub mod evaluate;
pub mod features;
pub mod imgcore;
pub mod normalize;
pub mod pipeline;
pub mod simulate;
pub mod synthetic;

pub use error::{Error, Result};
pub use eroc::Roi;
pub use imgcore::{ChangeMask, DiffImage, Histogram, Image};
