use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::Dims;

/// Voxel adjacency used to group lesion voxels into lesions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Shared faces.
    #[serde(rename = "6")]
    Six,
    /// Shared faces or edges.
    #[default]
    #[serde(rename = "18")]
    Eighteen,
    /// Shared faces, edges or corners.
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_manhattan = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let m = dz.abs() + dy.abs() + dx.abs();
                    if m > 0 && m <= max_manhattan {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Component id (1-based, 0 = background) per voxel, and the component count.
pub fn label_components(mask: &[u8], dims: Dims, connectivity: Connectivity) -> (Vec<u32>, usize) {
    let [d, h, w] = dims;
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if mask[start] == 0 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (
                (i / (h * w)) as isize,
                ((i / w) % h) as isize,
                (i % w) as isize,
            );
            for [dz, dy, dx] in &offsets {
                let (nz, ny, nx) = (z + dz, y + dy, x + dx);
                if nz < 0
                    || ny < 0
                    || nx < 0
                    || nz >= d as isize
                    || ny >= h as isize
                    || nx >= w as isize
                {
                    continue;
                }
                let j = (nz as usize * h + ny as usize) * w + nx as usize;
                if mask[j] != 0 && labels[j] == 0 {
                    labels[j] = count;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, count as usize)
}

/// How many of `a`'s components touch at least one foreground voxel of `b`.
pub(crate) fn components_hit(labels: &[u32], count: usize, other: &[u8]) -> usize {
    let mut hit = vec![false; count + 1];
    for (l, &o) in labels.iter().zip(other) {
        if *l != 0 && o != 0 {
            hit[*l as usize] = true;
        }
    }
    hit.iter().filter(|&&h| h).count()
}
