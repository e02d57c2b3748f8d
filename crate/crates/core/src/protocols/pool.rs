//! Slice pools: normalised, zero-padded 2D training samples with their provenance.

use rand::Rng;

use crate::data::{slice_buffer, Axis, Dataset, ProtocolSplit, Volume};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest multiple of `divisor` that is ≥ `n`.
pub fn padded_extent(n: usize, divisor: usize) -> usize {
    n.div_ceil(divisor) * divisor
}

/// Zero-pad an `h × w` plane at the bottom and right to `ph × pw`.
pub fn pad_plane(plane: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; ph * pw];
    for r in 0..h {
        out[r * pw..r * pw + w].copy_from_slice(&plane[r * w..(r + 1) * w]);
    }
    out
}

/// Inverse of [`pad_plane`].
pub fn crop_plane(plane: &[f64], pw: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend_from_slice(&plane[r * pw..r * pw + w]);
    }
    out
}

/// In-plane extent of slices along `axis`.
pub fn plane_shape(dims: [usize; 3], axis: Axis) -> (usize, usize) {
    let [d, h, w] = dims;
    match axis {
        Axis::Axial => (h, w),
        Axis::Coronal => (d, w),
        Axis::Sagittal => (d, h),
    }
}

pub(crate) struct SlicePool {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Option<Vec<Vec<f64>>>,
    /// `(subject, slice index)` of each sample.
    pub origin: Vec<(String, usize)>,
}

impl SlicePool {
    fn empty(labelled: bool) -> Self {
        Self {
            height: 0,
            width: 0,
            images: Vec::new(),
            labels: labelled.then(Vec::new),
            origin: Vec::new(),
        }
    }

    fn push_volume(
        &mut self,
        volume: &Volume,
        mask: Option<&[u8]>,
        axis: Axis,
        divisor: usize,
    ) -> Result<()> {
        let (h, w) = plane_shape(volume.dims(), axis);
        let (ph, pw) = (padded_extent(h, divisor), padded_extent(w, divisor));
        if self.images.is_empty() {
            self.height = ph;
            self.width = pw;
        } else if (ph, pw) != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "subject {} slices pad to {ph}×{pw}, pool holds {}×{}",
                volume.subject_id(),
                self.height,
                self.width
            )));
        }
        let normalized = volume.normalized();
        let planes = slice_buffer(normalized.voxels(), volume.dims(), axis);
        for (k, plane) in planes.iter().enumerate() {
            self.images.push(pad_plane(plane, h, w, ph, pw));
            self.origin.push((volume.subject_id().to_owned(), k));
        }
        if let (Some(labels), Some(mask)) = (self.labels.as_mut(), mask) {
            for plane in slice_buffer(mask, volume.dims(), axis) {
                let plane: Vec<f64> = plane.iter().map(|&m| f64::from(m)).collect();
                labels.push(pad_plane(&plane, h, w, ph, pw));
            }
        }
        Ok(())
    }

    /// Every labelled subject of `dataset` (a source domain: all must be labelled).
    pub fn labelled_source(dataset: &Dataset, axis: Axis, divisor: usize) -> Result<Self> {
        let mut pool = Self::empty(true);
        for s in dataset.items() {
            let label = s.label.as_ref().ok_or_else(|| {
                Error::Contract(format!(
                    "source subject {} has no label",
                    s.volume.subject_id()
                ))
            })?;
            pool.push_volume(&s.volume, Some(label.read()), axis, divisor)?;
        }
        Ok(pool)
    }

    /// Target subjects whose labels the split allows reading.
    pub fn labelled_target(
        target: &Dataset,
        split: &ProtocolSplit,
        ids: impl IntoIterator<Item = impl AsRef<str>>,
        axis: Axis,
        divisor: usize,
    ) -> Result<Self> {
        let mut pool = Self::empty(true);
        for id in ids {
            let id = id.as_ref();
            let label = split.target_label(target, id)?;
            let subject = target.get(id).expect("label lookup found the subject");
            pool.push_volume(&subject.volume, Some(label.read()), axis, divisor)?;
        }
        Ok(pool)
    }

    /// Images only; labels are never touched.
    pub fn images_only(
        dataset: &Dataset,
        ids: impl IntoIterator<Item = impl AsRef<str>>,
        axis: Axis,
        divisor: usize,
    ) -> Result<Self> {
        let mut pool = Self::empty(false);
        for id in ids {
            let id = id.as_ref();
            let subject = dataset
                .get(id)
                .ok_or_else(|| Error::Contract(format!("subject {id} not in dataset")))?;
            pool.push_volume(&subject.volume, None, axis, divisor)?;
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.len())).collect()
    }

    fn stack(&self, planes: &[Vec<f64>], idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.height * self.width);
        for &i in idx {
            data.extend_from_slice(&planes[i]);
        }
        Tensor::new(&[idx.len(), 1, self.height, self.width], data)
    }

    pub fn images(&self, idx: &[usize]) -> Tensor {
        self.stack(&self.images, idx)
    }

    pub fn labels(&self, idx: &[usize]) -> Tensor {
        self.stack(self.labels.as_ref().expect("labelled pool"), idx)
    }

    /// Sorted, deduplicated subject ids of the given samples.
    pub fn subjects(&self, idx: &[usize]) -> Vec<String> {
        let mut ids: Vec<String> = idx.iter().map(|&i| self.origin[i].0.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}
