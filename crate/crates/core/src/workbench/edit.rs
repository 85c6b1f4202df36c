use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::velocity::dit::first_frame;
use crate::velocity::LatentVideo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditTask {
    Insert,
    Swap,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

/// Stand-in for an off-the-shelf image editor acting on the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub task: EditTask,
    pub region: Rect,
    /// Mean level of the inserted or swapped-in pattern.
    pub patch_level: f32,
    /// Fill value for deletions.
    pub background: f32,
    pub patch_seed: u64,
}

/// Edited copy of frame 0 as `[height, width, channels]`. Values outside
/// `edit.region` are copied bit for bit.
pub fn apply_first_frame_edit(video: &LatentVideo, edit: &EditSpec) -> Result<Tensor> {
    let mut frame = first_frame(video)?;
    let &[h, w, c] = frame.shape() else {
        unreachable!("first_frame returns [H, W, C]")
    };
    let r = edit.region;
    if r.row + r.height > h || r.col + r.width > w {
        return Err(Error::config(format!(
            "edit region {r:?} exceeds the {h}x{w} frame"
        )));
    }
    let mut rng = Rng::new(edit.patch_seed);
    let data = frame.data_mut();
    for row in r.row..r.row + r.height {
        for col in r.col..r.col + r.width {
            for ch in 0..c {
                let idx = (row * w + col) * c + ch;
                data[idx] = match edit.task {
                    EditTask::Insert | EditTask::Swap => {
                        edit.patch_level + 0.2 * rng.next_gaussian() as f32
                    }
                    EditTask::Delete => edit.background,
                };
            }
        }
    }
    Ok(frame)
}
