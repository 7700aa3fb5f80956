//! Writes a sequence to disk: `frame_NNNN.fmap`, `mask_NNNN_K.pgm` and
//! `ids.json`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_fmap, write_pgm};

use super::scene::Sequence;

pub fn export_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (t, (frame, masks)) in seq.frames.iter().zip(&seq.gt_masks).enumerate() {
        write_fmap(dir.join(format!("frame_{t:04}.fmap")), frame)?;
        for (k, m) in masks.iter().enumerate() {
            write_pgm(dir.join(format!("mask_{t:04}_{k}.pgm")), m)?;
        }
    }
    let ids = serde_json::to_string_pretty(&seq.gt_ids).map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(dir.join("ids.json"), ids + "\n")?;
    Ok(())
}
