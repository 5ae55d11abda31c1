//! File formats, checkpoints and the command-line driver around `paul-core`.

pub mod checkpoint;
pub mod cli;
pub mod kpt;
pub mod latents;
