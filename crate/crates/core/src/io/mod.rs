//! File formats: JSON documents, binary float maps and PPM images.

pub mod json;
pub mod maps;
