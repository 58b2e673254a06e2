//! Functionality-aware conditional generation of dental crowns on depth rasters.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`]: depth/gap rasters, procedural case synthesis and the `.cfr` case format.
//! * [`gapgeom`]: gap reconstruction after crown insertion, critical regions, penetration.
//! * [`histstat`]: differentiable soft histograms and the χ² histogram loss.
//! * [`ganmodel`]: U-Net generator, patch discriminator, losses and the training loop.
//! * [`evalsuite`]: quality, penetration and contact-point metrics plus corpus summaries.

pub mod dataset;
pub mod error;
pub mod evalsuite;
pub mod ganmodel;
pub mod gapgeom;
pub mod histstat;

pub use error::{Error, Result};
