//! Volumes, guarded label maps, datasets and protocol splits.

mod nifti;
mod split;
mod synthetic;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use nifti::{load_dataset_dir, load_label, load_volume, mask_path, save_label, save_volume};
pub use split::{build_split, Protocol, ProtocolSplit};
pub use synthetic::{
    apply_shift, derive_seed, make_synthetic_domains, synthetic_subject, SyntheticShiftParams,
    SYNTHETIC_SPACING,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Domain label fed to the discriminator.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// Extent of a volume as `(depth, height, width)`; voxels are stored with width fastest.
pub type Dims = [usize; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    voxels: Vec<f64>,
    dims: Dims,
    /// Voxel size in mm along `(depth, height, width)`.
    spacing: [f64; 3],
    subject_id: String,
    domain: Domain,
}

impl Volume {
    pub fn new(
        voxels: Vec<f64>,
        dims: Dims,
        spacing: [f64; 3],
        subject_id: impl Into<String>,
        domain: Domain,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} voxels for dims {dims:?}",
                voxels.len()
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "subject {subject_id}: non-finite voxel"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Parameter(format!(
                "spacing {spacing:?} must be positive"
            )));
        }
        if subject_id.is_empty() {
            return Err(Error::Parameter("empty subject id".into()));
        }
        Ok(Self {
            voxels,
            dims,
            spacing,
            subject_id,
            domain,
        })
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    /// Min-max rescale to `[0, 1]`; constant volumes map to zeros.
    pub fn normalized(&self) -> Volume {
        let (lo, hi) = self
            .voxels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let voxels = if range > 0.0 {
            self.voxels.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.voxels.len()]
        };
        Volume {
            voxels,
            ..self.clone()
        }
    }
}

struct LabelInner {
    mask: Vec<u8>,
    reads: AtomicU64,
}

/// Binary lesion mask with a read counter shared by all clones.
#[derive(Clone)]
pub struct LabelMap {
    inner: Arc<LabelInner>,
    dims: Dims,
    subject_id: String,
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelMap")
            .field("subject_id", &self.subject_id)
            .field("dims", &self.dims)
            .field("reads", &self.read_count())
            .finish()
    }
}

impl PartialEq for LabelMap {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.inner.mask == other.inner.mask
    }
}

impl LabelMap {
    pub fn new(mask: Vec<u8>, dims: Dims, subject_id: impl Into<String>) -> Result<Self> {
        if mask.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} mask voxels for dims {dims:?}",
                mask.len()
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Format("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            inner: Arc::new(LabelInner {
                mask,
                reads: AtomicU64::new(0),
            }),
            dims,
            subject_id: subject_id.into(),
        })
    }

    /// Binary mask from predicate over a voxel buffer.
    pub fn from_bools(
        values: impl IntoIterator<Item = bool>,
        dims: Dims,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        Self::new(values.into_iter().map(u8::from).collect(), dims, subject_id)
    }

    /// Mask contents. Every call is counted.
    pub fn read(&self) -> &[u8] {
        self.inner.reads.fetch_add(1, Ordering::SeqCst);
        &self.inner.mask
    }

    pub fn read_count(&self) -> u64 {
        self.inner.reads.load(Ordering::SeqCst)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    /// An uncounted copy with its own fresh counter (e.g. for predictions).
    pub fn detached(&self) -> LabelMap {
        LabelMap {
            inner: Arc::new(LabelInner {
                mask: self.inner.mask.clone(),
                reads: AtomicU64::new(0),
            }),
            dims: self.dims,
            subject_id: self.subject_id.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Subject {
    pub volume: Volume,
    pub label: Option<LabelMap>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    domain: Domain,
    items: Vec<Subject>,
}

impl Dataset {
    pub fn new(domain: Domain, items: Vec<Subject>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for item in &items {
            let id = item.volume.subject_id();
            if item.volume.domain() != domain {
                return Err(Error::Contract(format!(
                    "subject {id} is not a {domain} volume"
                )));
            }
            if !seen.insert(id.to_owned()) {
                return Err(Error::Contract(format!("duplicate subject id {id}")));
            }
            if let Some(label) = &item.label {
                if label.dims() != item.volume.dims() {
                    return Err(Error::Shape(format!(
                        "subject {id}: label {:?} vs volume {:?}",
                        label.dims(),
                        item.volume.dims()
                    )));
                }
            }
        }
        Ok(Self { domain, items })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn items(&self) -> &[Subject] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.items
            .iter()
            .map(|s| s.volume.subject_id().to_owned())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Subject> {
        self.items.iter().find(|s| s.volume.subject_id() == id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[default]
    Axial,
    Coronal,
    Sagittal,
}

/// One 2D cut through a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub subject_id: String,
    pub index: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

fn slice_geometry(dims: Dims, axis: Axis) -> (usize, usize, usize) {
    let [d, h, w] = dims;
    match axis {
        Axis::Axial => (d, h, w),
        Axis::Coronal => (h, d, w),
        Axis::Sagittal => (w, d, h),
    }
}

#[inline]
fn volume_index(dims: Dims, axis: Axis, k: usize, r: usize, c: usize) -> usize {
    let [_, h, w] = dims;
    let (z, y, x) = match axis {
        Axis::Axial => (k, r, c),
        Axis::Coronal => (r, k, c),
        Axis::Sagittal => (r, c, k),
    };
    (z * h + y) * w + x
}

/// Cut a voxel buffer into 2D planes along `axis`.
pub fn slice_buffer<T: Copy>(data: &[T], dims: Dims, axis: Axis) -> Vec<Vec<T>> {
    let (n, rows, cols) = slice_geometry(dims, axis);
    (0..n)
        .map(|k| {
            let mut plane = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    plane.push(data[volume_index(dims, axis, k, r, c)]);
                }
            }
            plane
        })
        .collect()
}

/// Inverse of [`slice_buffer`].
pub fn stack_buffer<T: Copy + Default>(planes: &[Vec<T>], dims: Dims, axis: Axis) -> Vec<T> {
    let (n, rows, cols) = slice_geometry(dims, axis);
    assert_eq!(planes.len(), n, "slice count does not match dims");
    let mut out = vec![T::default(); dims.iter().product()];
    for (k, plane) in planes.iter().enumerate() {
        assert_eq!(plane.len(), rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out[volume_index(dims, axis, k, r, c)] = plane[r * cols + c];
            }
        }
    }
    out
}

pub fn extract_slices(volume: &Volume, axis: Axis) -> Vec<Slice> {
    let (_, height, width) = slice_geometry(volume.dims(), axis);
    slice_buffer(volume.voxels(), volume.dims(), axis)
        .into_iter()
        .enumerate()
        .map(|(index, data)| Slice {
            subject_id: volume.subject_id().to_owned(),
            index,
            height,
            width,
            data,
        })
        .collect()
}

/// Rebuild a volume from its slices.
pub fn restack(slices: &[Slice], template: &Volume, axis: Axis) -> Result<Volume> {
    let planes: Vec<Vec<f64>> = slices.iter().map(|s| s.data.clone()).collect();
    let (n, rows, cols) = slice_geometry(template.dims(), axis);
    if planes.len() != n || slices.iter().any(|s| (s.height, s.width) != (rows, cols)) {
        return Err(Error::Shape(
            "slices do not tile the template volume".into(),
        ));
    }
    Volume::new(
        stack_buffer(&planes, template.dims(), axis),
        template.dims(),
        template.spacing(),
        template.subject_id(),
        template.domain(),
    )
}
