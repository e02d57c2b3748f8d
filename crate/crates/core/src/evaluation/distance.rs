//! Exact Euclidean distance transform on anisotropic grids.

use crate::data::Dims;

const INF: f64 = f64::INFINITY;

/// Lower envelope of parabolas: squared distance along one line with sample spacing `s`.
fn edt_1d(f: &[f64], s: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        out.iter_mut().for_each(|o| *o = INF);
        return;
    }
    let pos = |q: usize| q as f64 * s;
    let mut k = 0usize;
    v[0] = finite[0];
    z[0] = -INF;
    z[1] = INF;
    for &q in &finite[1..] {
        // Intersection with the rightmost kept parabola; z[0] = -inf stops the pop at k = 0.
        let mut sq;
        loop {
            let p = v[k];
            sq = (f[q] + pos(q).powi(2) - f[p] - pos(p).powi(2)) / (2.0 * (pos(q) - pos(p)));
            if sq <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = sq;
        z[k + 1] = INF;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        *o = (pos(q) - pos(v[k])).powi(2) + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest `seed` voxel.
/// All-infinite when there are no seeds.
pub fn squared_distance_to(seed: &[bool], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let mut g: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { INF }).collect();
    let longest = d.max(h).max(w);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    // Pass along x, then y, then z; each pass is exact given the previous one.
    let mut pass = |g: &mut Vec<f64>,
                    n: usize,
                    s: f64,
                    index: &dyn Fn(usize, usize) -> usize,
                    lines: usize| {
        for l in 0..lines {
            for q in 0..n {
                line[q] = g[index(l, q)];
            }
            edt_1d(&line[..n], s, &mut out[..n], &mut v, &mut z);
            for q in 0..n {
                g[index(l, q)] = out[q];
            }
        }
    };
    pass(&mut g, w, spacing[2], &|l, q| l * w + q, d * h);
    pass(
        &mut g,
        h,
        spacing[1],
        &|l, q| ((l / w) * h + q) * w + l % w,
        d * w,
    );
    pass(&mut g, d, spacing[0], &|l, q| q * h * w + l, h * w);
    g
}
