//! Chinese word representations enhanced by character-glyph features.
//!
//! The pipeline: render character bitmaps ([`glyph`]), extract glyph
//! features with a tied-weight convolutional autoencoder ([`convae`]),
//! train local-window and count-based embedding models ([`embed`],
//! [`cooc`], [`seqmodel`]) over a segmented corpus ([`corpus`]), and
//! evaluate on word-similarity and analogy tasks ([`eval`]).

pub mod convae;
pub mod cooc;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod glyph;
pub mod rng;
pub mod seqmodel;
pub mod tensorio;
pub mod textfmt;

pub use error::{Error, Result};
