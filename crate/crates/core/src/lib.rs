//! Hate speech and offensive language detection for short social-media
//! texts, with a conditional moderation pipeline that rewrites harmful text.
//!
//! Classes follow the annotated tweet corpus: `0` hate speech, `1` offensive
//! language, `2` neither.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod moderation;
pub mod textprep;
pub mod training;

pub use error::{Error, Result};
