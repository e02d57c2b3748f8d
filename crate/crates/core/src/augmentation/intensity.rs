use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::AugmentationSpec;

/// Monomials `(i, j)` for `xⁱ yʲ` with `i + j ≤ order`, by increasing degree.
pub fn bias_terms(order: usize) -> Vec<(usize, usize)> {
    let mut terms = Vec::new();
    for degree in 0..=order {
        for j in 0..=degree {
            terms.push((degree - j, j));
        }
    }
    terms
}

/// `exp(Σ c_k xⁱ yʲ)` over normalized coordinates `x, y ∈ [-1, 1]`.
pub fn bias_field(coeffs: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut order = 0;
    while bias_terms(order).len() < coeffs.len() {
        order += 1;
    }
    let terms = bias_terms(order);
    let norm = |i: usize, n: usize| {
        if n > 1 {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut field = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = norm(r, h);
        for c in 0..w {
            let x = norm(c, w);
            let poly: f64 = coeffs
                .iter()
                .zip(&terms)
                .map(|(&k, &(i, j))| k * x.powi(i as i32) * y.powi(j as i32))
                .sum();
            field.push(poly.exp());
        }
    }
    field
}

pub fn apply_bias(coeffs: &[f64], image: &[f64], h: usize, w: usize) -> Vec<f64> {
    if coeffs.is_empty() {
        return image.to_vec();
    }
    bias_field(coeffs, h, w)
        .iter()
        .zip(image)
        .map(|(b, v)| b * v)
        .collect()
}

fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(data);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = data[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            data[r * w + c] = column[r];
        }
    }
    if inverse {
        let k = 1.0 / (h * w) as f64;
        data.iter_mut().for_each(|z| *z *= k);
    }
}

/// `Re(IFFT2(M ⊙ FFT2(image)))` where `M` multiplies the given rows of the
/// centred spectrum by `exp(i·phase)` and leaves the rest unchanged.
pub fn apply_kspace(lines: &[usize], phase: f64, image: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(image.len(), h * w);
    let mut spec: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spec, h, w, false);
    let rot = Complex64::from_polar(1.0, phase);
    for &line in lines {
        let raw = (line % h + h - h / 2) % h;
        spec[raw * w..(raw + 1) * w]
            .iter_mut()
            .for_each(|z| *z *= rot);
    }
    fft2(&mut spec, h, w, true);
    spec.into_iter().map(|z| z.re).collect()
}

/// Bias field followed by the k-space perturbation.
pub fn apply_intensity(spec: &AugmentationSpec, image: &[f64], h: usize, w: usize) -> Vec<f64> {
    let biased = apply_bias(&spec.bias_coeffs, image, h, w);
    if spec.kspace.lines.is_empty() {
        return biased;
    }
    apply_kspace(&spec.kspace.lines, spec.kspace.phase, &biased, h, w)
}

/// Vector-Jacobian product of [`apply_intensity`]. The k-space step is a real
/// linear map whose adjoint is the same map with the conjugate phase.
pub fn apply_intensity_vjp(
    spec: &AugmentationSpec,
    grad_out: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let g = if spec.kspace.lines.is_empty() {
        grad_out.to_vec()
    } else {
        apply_kspace(&spec.kspace.lines, -spec.kspace.phase, grad_out, h, w)
    };
    apply_bias(&spec.bias_coeffs, &g, h, w)
}
