//! Synthetic data, persistence formats and attention heatmaps.

pub mod checkpoint;
pub mod dataset;
pub mod font;
pub mod heatmap;
pub mod pgm;
pub mod render;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint};
pub use dataset::{gen_dataset, load_dataset, load_split, save_dataset, Dataset, DatasetSpec, Sample};
pub use heatmap::export_heatmap;
pub use render::{render_textline, Jitter};
