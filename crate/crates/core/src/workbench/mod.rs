//! Synthetic inputs and on-disk formats.

mod container;
mod edit;
mod pgm;
mod synthetic;

pub use container::{decode_tensor, encode_tensor, load_tensor, save_tensor, MAGIC, MAX_NDIM};
pub use edit::{apply_first_frame_edit, EditSpec, EditTask, Rect};
pub use pgm::{encode_pgm, export_pgm};
pub use synthetic::{gen_synthetic_video, Motif, SyntheticVideoSpec};
