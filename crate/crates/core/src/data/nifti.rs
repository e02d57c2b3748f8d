//! Single-file NIfTI-1 (`.nii`) reading and writing.
//!
//! Intensities are written as little-endian float64 so a save/load round trip
//! is bit-exact; masks are written as uint8 next to the image as `<id>_mask.nii`.
//! The header stores spacing as float32, so spacings round-trip exactly only
//! when they are representable in single precision.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt};

use super::{Dataset, Domain, LabelMap, Subject, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

const EXTENSION: &str = "nii";
const MASK_SUFFIX: &str = "_mask";

struct Header {
    /// `(x, y, z)` extents, x fastest.
    dim: [usize; 3],
    pixdim: [f64; 3],
    datatype: i16,
    vox_offset: usize,
    slope: f64,
    inter: f64,
    descrip: String,
}

fn encode_header(
    dims: [usize; 3],
    spacing: [f64; 3],
    datatype: i16,
    bitpix: i16,
    descrip: &str,
) -> Result<Vec<u8>> {
    let [d, h, w] = dims;
    let mut buf = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut buf[0..4], HEADER_SIZE as i32);
    let ext = [3, w, h, d, 1, 1, 1, 1];
    for (i, &v) in ext.iter().enumerate() {
        let v = i16::try_from(v)
            .map_err(|_| Error::Shape(format!("extent {v} exceeds NIfTI-1 limits")))?;
        LittleEndian::write_i16(&mut buf[40 + 2 * i..42 + 2 * i], v);
    }
    LittleEndian::write_i16(&mut buf[70..72], datatype);
    LittleEndian::write_i16(&mut buf[72..74], bitpix);
    let pix = [1.0, spacing[2], spacing[1], spacing[0], 0.0, 0.0, 0.0, 0.0];
    for (i, &v) in pix.iter().enumerate() {
        LittleEndian::write_f32(&mut buf[76 + 4 * i..80 + 4 * i], v as f32);
    }
    LittleEndian::write_f32(&mut buf[108..112], VOX_OFFSET as f32);
    buf[123] = 2; // millimetres
    let text = descrip.as_bytes();
    let n = text.len().min(79);
    buf[148..148 + n].copy_from_slice(&text[..n]);
    // Scanner-free affine: sform = diag(spacing).
    LittleEndian::write_i16(&mut buf[254..256], 1);
    for (row, s) in [spacing[2], spacing[1], spacing[0]].iter().enumerate() {
        let off = 280 + 16 * row + 4 * row;
        LittleEndian::write_f32(&mut buf[off..off + 4], *s as f32);
    }
    buf[344..348].copy_from_slice(b"n+1\0");
    Ok(buf)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER_SIZE {
        return Err(bad("truncated header"));
    }
    if LittleEndian::read_i32(&bytes[0..4]) != HEADER_SIZE as i32 {
        return Err(bad("not a little-endian NIfTI-1 file"));
    }
    if &bytes[344..347] != b"n+1" {
        return Err(bad("missing n+1 magic"));
    }
    let mut cur = Cursor::new(&bytes[40..56]);
    let mut raw = [0i16; 8];
    for v in raw.iter_mut() {
        *v = cur.read_i16::<LittleEndian>()?;
    }
    if !(1..=7).contains(&raw[0]) {
        return Err(bad("dim[0] out of range"));
    }
    let ndim = raw[0] as usize;
    if (4..=ndim).any(|i| raw[i] > 1) {
        return Err(bad("only 3D volumes are supported"));
    }
    let mut dim = [1usize; 3];
    for (i, d) in dim.iter_mut().enumerate().take(ndim.min(3)) {
        let v = raw[i + 1];
        if v < 1 {
            return Err(bad("non-positive extent"));
        }
        *d = v as usize;
    }
    let mut pixdim = [1.0; 3];
    for (i, p) in pixdim.iter_mut().enumerate() {
        let off = 80 + 4 * i;
        let v = f64::from(LittleEndian::read_f32(&bytes[off..off + 4])).abs();
        if i < ndim {
            *p = v;
        }
    }
    let vox_offset = LittleEndian::read_f32(&bytes[108..112]);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(bad("invalid vox_offset"));
    }
    let slope = f64::from(LittleEndian::read_f32(&bytes[112..116]));
    let inter = f64::from(LittleEndian::read_f32(&bytes[116..120]));
    let descrip = String::from_utf8_lossy(&bytes[148..228])
        .trim_end_matches('\0')
        .to_owned();
    Ok(Header {
        dim,
        pixdim,
        datatype: LittleEndian::read_i16(&bytes[70..72]),
        vox_offset: vox_offset as usize,
        slope: if slope == 0.0 || !slope.is_finite() {
            1.0
        } else {
            slope
        },
        inter: if inter.is_finite() { inter } else { 0.0 },
        descrip,
    })
}

fn read_voxels(header: &Header, bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    let n: usize = header.dim.iter().product();
    let width = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported datatype {other}",
                path.display()
            )));
        }
    };
    let body = bytes
        .get(header.vox_offset..header.vox_offset + n * width)
        .ok_or_else(|| Error::Format(format!("{}: voxel buffer truncated", path.display())))?;
    let mut cur = Cursor::new(body);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = match header.datatype {
            DT_UINT8 => f64::from(cur.read_u8()?),
            DT_INT16 => f64::from(cur.read_i16::<LittleEndian>()?),
            DT_INT32 => f64::from(cur.read_i32::<LittleEndian>()?),
            DT_FLOAT32 => f64::from(cur.read_f32::<LittleEndian>()?),
            _ => cur.read_f64::<LittleEndian>()?,
        };
        out.push(v);
    }
    if header.slope != 1.0 || header.inter != 0.0 {
        out.iter_mut()
            .for_each(|v| *v = *v * header.slope + header.inter);
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// `<dir>/<id>_mask.nii` for an image at `<dir>/<id>.nii`.
pub fn mask_path(image: &Path) -> PathBuf {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    image.with_file_name(format!("{stem}{MASK_SUFFIX}.{EXTENSION}"))
}

fn descrip_field<'a>(descrip: &'a str, key: &str) -> Option<&'a str> {
    descrip
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

/// Load an image and, when `<id>_mask.nii` sits next to it, its lesion mask.
///
/// The subject id is the file stem. The domain is read from the header
/// description written by [`save_volume`]; foreign files default to target.
pub fn load_volume(path: &Path) -> Result<(Volume, Option<LabelMap>)> {
    let bytes = read_file(path)?;
    let header = parse_header(&bytes, path)?;
    let voxels = read_voxels(&header, &bytes, path)?;
    if voxels.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!(
            "{}: non-finite voxel",
            path.display()
        )));
    }
    let [w, h, d] = header.dim;
    let dims = [d, h, w];
    let spacing = [header.pixdim[2], header.pixdim[1], header.pixdim[0]];
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Format(format!(
            "{}: non-positive spacing",
            path.display()
        )));
    }
    let subject_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("{}: no file stem", path.display())))?
        .to_owned();
    let domain = match descrip_field(&header.descrip, "domain") {
        Some("source") => Domain::Source,
        _ => Domain::Target,
    };
    let volume = Volume::new(voxels, dims, spacing, subject_id.clone(), domain)?;

    let mpath = mask_path(path);
    let label = if mpath.exists() {
        let mbytes = read_file(&mpath)?;
        let mheader = parse_header(&mbytes, &mpath)?;
        if mheader.dim != header.dim {
            return Err(Error::Format(format!(
                "{}: mask extent differs from image",
                mpath.display()
            )));
        }
        let values = read_voxels(&mheader, &mbytes, &mpath)?;
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Format(format!(
                "{}: mask is not binary",
                mpath.display()
            )));
        }
        Some(LabelMap::new(
            values.iter().map(|&v| v as u8).collect(),
            dims,
            subject_id,
        )?)
    } else {
        None
    };
    Ok((volume, label))
}

/// Load a stand-alone binary mask, e.g. a saved prediction, as `subject_id`'s label.
pub fn load_label(path: &Path, subject_id: &str) -> Result<LabelMap> {
    let bytes = read_file(path)?;
    let header = parse_header(&bytes, path)?;
    let values = read_voxels(&header, &bytes, path)?;
    if values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Format(format!(
            "{}: mask is not binary",
            path.display()
        )));
    }
    let [w, h, d] = header.dim;
    LabelMap::new(
        values.iter().map(|&v| v as u8).collect(),
        [d, h, w],
        subject_id,
    )
}

/// Write `<dir>/<id>.nii`; returns the path.
pub fn save_volume(volume: &Volume, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.{EXTENSION}", volume.subject_id()));
    let descrip = format!("ttuda domain={}", volume.domain());
    let mut buf = encode_header(volume.dims(), volume.spacing(), DT_FLOAT64, 64, &descrip)?;
    buf.reserve(volume.voxels().len() * 8);
    for &v in volume.voxels() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, buf)?;
    Ok(path)
}

/// Write a mask as `<dir>/<id>_mask.nii` (or `name` if given). Reads the label once.
pub fn save_label(
    label: &LabelMap,
    spacing: [f64; 3],
    dir: &Path,
    name: Option<&str>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let file = match name {
        Some(n) => format!("{n}.{EXTENSION}"),
        None => format!("{}{MASK_SUFFIX}.{EXTENSION}", label.subject_id()),
    };
    let path = dir.join(file);
    let mut buf = encode_header(label.dims(), spacing, DT_UINT8, 8, "ttuda mask")?;
    buf.extend_from_slice(label.read());
    fs::write(&path, buf)?;
    Ok(path)
}

/// Every `<id>.nii` in `dir` (masks excluded), sorted by subject id.
pub fn load_dataset_dir(dir: &Path, domain: Domain) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()) == Some(EXTENSION)
                && !p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.ends_with(MASK_SUFFIX))
        })
        .collect();
    paths.sort();
    let mut items = Vec::with_capacity(paths.len());
    for p in paths {
        let (volume, label) = load_volume(&p)?;
        // The directory decides the domain, whatever the header says.
        let volume = Volume::new(
            volume.voxels().to_vec(),
            volume.dims(),
            volume.spacing(),
            volume.subject_id(),
            domain,
        )?;
        items.push(Subject { volume, label });
    }
    Dataset::new(domain, items)
}
