use serde::{Deserialize, Serialize};

use super::AugmentationSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Round to the nearest source pixel; keeps binary masks binary.
    Nearest,
}

/// Inverse affine map: output pixel → input sample position.
struct InverseMap {
    inv: [[f64; 2]; 2],
    shift: [f64; 2],
    center: [f64; 2],
}

impl InverseMap {
    fn new(spec: &AugmentationSpec, h: usize, w: usize) -> Self {
        let theta = spec.rotation_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let [sx, sy] = spec.scale;
        let k = spec.shear;
        // forward = R · S · Shear, Shear = [[1, k], [0, 1]]
        let a = [[c * sx, c * sx * k - s * sy], [s * sx, s * sx * k + c * sy]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ];
        Self {
            inv,
            shift: [
                spec.translation[0] * w as f64,
                spec.translation[1] * h as f64,
            ],
            center: [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0],
        }
    }

    #[inline]
    fn source(&self, x: usize, y: usize) -> (f64, f64) {
        let u = x as f64 - self.center[0] - self.shift[0];
        let v = y as f64 - self.center[1] - self.shift[1];
        (
            self.inv[0][0] * u + self.inv[0][1] * v + self.center[0],
            self.inv[1][0] * u + self.inv[1][1] * v + self.center[1],
        )
    }
}

/// Bilinear taps `(index, weight)` of an in-bounds sample; out-of-bounds corners are dropped.
#[inline]
fn taps(sx: f64, sy: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, f64)> {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
    .into_iter()
    .filter(move |&(x, y, wt)| {
        wt != 0.0 && x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h
    })
    .map(move |(x, y, wt)| (y as usize * w + x as usize, wt))
}

/// Resample `image` (row-major `h × w`) under the spec's affine transform about
/// the image centre. Samples falling outside the image read as zero.
pub fn apply_spatial(
    spec: &AugmentationSpec,
    image: &[f64],
    h: usize,
    w: usize,
    interpolation: Interpolation,
) -> Vec<f64> {
    assert_eq!(image.len(), h * w);
    if spec.is_spatial_identity() {
        return image.to_vec();
    }
    let map = InverseMap::new(spec, h, w);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.source(x, y);
            out[y * w + x] = match interpolation {
                Interpolation::Bilinear => taps(sx, sy, h, w).map(|(i, wt)| wt * image[i]).sum(),
                Interpolation::Nearest => {
                    let (rx, ry) = (sx.round(), sy.round());
                    if rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h {
                        image[ry as usize * w + rx as usize]
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    out
}

/// Vector-Jacobian product of bilinear [`apply_spatial`] with respect to the image.
pub fn apply_spatial_vjp(
    spec: &AugmentationSpec,
    grad_out: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    assert_eq!(grad_out.len(), h * w);
    if spec.is_spatial_identity() {
        return grad_out.to_vec();
    }
    let map = InverseMap::new(spec, h, w);
    let mut grad = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = grad_out[y * w + x];
            if g == 0.0 {
                continue;
            }
            let (sx, sy) = map.source(x, y);
            for (i, wt) in taps(sx, sy, h, w) {
                grad[i] += wt * g;
            }
        }
    }
    grad
}
