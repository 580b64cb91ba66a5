//! On-disk formats and run configuration.
//!
//! Text formats (detections, tracks, labels, config) are comma- or
//! `key=value`-separated lines with `#` comments. Binary formats (embeddings,
//! grids) are little-endian with a 4-byte magic and a `u16` version.

mod config;
mod formats;

pub use config::Config;
pub use formats::{
    group_by_frame, parse_detections, parse_labels, parse_tracks, read_embeddings, read_grid,
    write_detections, write_embeddings, write_grid, write_labels, write_tracks, EmbeddingTable,
    EMBEDDING_MAGIC, FORMAT_VERSION, GRID_MAGIC,
};
