//! Synthetic data, the frozen stand-in teacher, and on-disk formats.

pub mod checkpoint;
pub mod manifest;
pub mod pnm;
pub mod synth;
pub mod teacher;

pub use checkpoint::{load_checkpoint, load_teacher_features, read_tensors, save_checkpoint, write_tensors};
pub use pnm::{read_image_pnm, read_mask_pgm, write_image_ppm, write_mask_pgm};
pub use synth::{gen_shapes_dataset, split_train_val, Sample};
pub use teacher::Teacher;
