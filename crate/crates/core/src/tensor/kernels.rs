use super::{Dense, Element, Map2D, TensorError};

/// Small constant used wherever a denominator needs guarding.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Rescales a map to `[0, 1]` by its extremes. Constant maps become all zeros.
pub fn max_min_normalize<T: Element>(map: &Map2D<T>) -> Map2D<T> {
    let (lo, hi) = map.min_max();
    let span = hi.as_f64() - lo.as_f64();
    if span <= 0.0 {
        return Map2D::zeros(map.height(), map.width());
    }
    let lo = lo.as_f64();
    map.map_elements(|v| T::from_f64((v.as_f64() - lo) / span))
}

/// Divides a map by its total mass plus `epsilon`.
pub fn area_normalize<T: Element>(map: &Map2D<T>, epsilon: f64) -> Map2D<T> {
    let denom = map.sum() + epsilon;
    map.map_elements(|v| T::from_f64(v.as_f64() / denom))
}

/// `slope_pos * max(x, 0) + slope_neg * min(x, 0)` applied elementwise.
pub fn piecewise_linear<T: Element, D: Dense<T>>(x: &D, slope_pos: T, slope_neg: T) -> D {
    let zero = T::zero();
    x.map_elements(|v| slope_pos * v.max(zero) + slope_neg * v.min(zero))
}

/// Square isotropic Gaussian `A * exp(-r^2 / (2|v| + eps))` centred on the
/// middle pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernelSpec {
    pub size: usize,
    pub amplitude: f64,
    pub variance: f64,
    pub epsilon: f64,
}

impl GaussianKernelSpec {
    pub fn new(size: usize, amplitude: f64, variance: f64) -> Self {
        Self {
            size,
            amplitude,
            variance,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.size % 2 == 0 {
            return Err(TensorError::EvenKernel {
                height: self.size,
                width: self.size,
            });
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(TensorError::InvalidKernel("epsilon must be positive"));
        }
        if !self.amplitude.is_finite() || !self.variance.is_finite() {
            return Err(TensorError::InvalidKernel("amplitude and variance must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> f64 {
        (self.size as f64 - 1.0) / 2.0
    }

    /// `2|v| + eps`, the exponent's denominator.
    #[inline]
    pub fn denominator(&self) -> f64 {
        2.0 * self.variance.abs() + self.epsilon
    }

    /// Unit-amplitude 1-D factor `exp(-(x - xc)^2 / (2|v| + eps))`. The 2-D
    /// kernel is `amplitude * outer(profile, profile)`.
    pub fn profile(&self) -> Vec<f64> {
        let c = self.center();
        let d = self.denominator();
        (0..self.size)
            .map(|x| {
                let dx = x as f64 - c;
                (-dx * dx / d).exp()
            })
            .collect()
    }

    /// Derivative of [`profile`](Self::profile) with respect to the
    /// denominator: `profile(x) * (x - xc)^2 / d^2`.
    pub fn profile_denominator_derivative(&self) -> Vec<f64> {
        let c = self.center();
        let d = self.denominator();
        self.profile()
            .iter()
            .enumerate()
            .map(|(x, &p)| {
                let dx = x as f64 - c;
                p * dx * dx / (d * d)
            })
            .collect()
    }
}

/// Evaluates the kernel on a `size x size` grid.
pub fn gaussian_kernel<T: Element>(spec: &GaussianKernelSpec) -> Result<Map2D<T>, TensorError> {
    spec.validate()?;
    let c = spec.center();
    let d = spec.denominator();
    Ok(Map2D::from_fn(spec.size, spec.size, |y, x| {
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        T::from_f64(spec.amplitude * (-(dx * dx + dy * dy) / d).exp())
    }))
}

/// Same-size 2-D correlation with zero padding.
///
/// For the symmetric kernels used throughout the crate this coincides with
/// convolution.
pub fn convolve_same<T: Element>(
    map: &Map2D<T>,
    kernel: &Map2D<T>,
) -> Result<Map2D<T>, TensorError> {
    let (kh, kw) = kernel.shape();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::EvenKernel {
            height: kh,
            width: kw,
        });
    }
    let (h, w) = map.shape();
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let src = map.values();
    let k = kernel.values();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        // kernel rows p with 0 <= i + p - ch < h
        let p_lo = (ch - i).max(0);
        let p_hi = (h as isize - i + ch).min(kh as isize);
        for j in 0..w as isize {
            let q_lo = (cw - j).max(0);
            let q_hi = (w as isize - j + cw).min(kw as isize);
            let mut acc = 0.0f64;
            for p in p_lo..p_hi {
                let r = (i + p - ch) as usize;
                let krow = p as usize * kw;
                let srow = r * w;
                for q in q_lo..q_hi {
                    let c = (j + q - cw) as usize;
                    acc += k[krow + q as usize].as_f64() * src[srow + c].as_f64();
                }
            }
            out.push(T::from_f64(acc));
        }
    }
    Map2D::new(h, w, out)
}

fn correlate_1d(src: &[f64], dst: &mut [f64], n: usize, stride: usize, kernel: &[f64]) {
    let half = (kernel.len() / 2) as isize;
    for i in 0..n as isize {
        let lo = (half - i).max(0);
        let hi = (n as isize - i + half).min(kernel.len() as isize);
        let mut acc = 0.0;
        for p in lo..hi {
            acc += kernel[p as usize] * src[(i + p - half) as usize * stride];
        }
        dst[i as usize * stride] = acc;
    }
}

/// Zero-padded same-size correlation with the rank-one kernel
/// `scale * outer(col_kernel, row_kernel)`.
///
/// `col_kernel` runs along rows (vertical), `row_kernel` along columns.
pub fn convolve_separable<T: Element>(
    map: &Map2D<T>,
    col_kernel: &[f64],
    row_kernel: &[f64],
    scale: f64,
) -> Result<Map2D<T>, TensorError> {
    if col_kernel.len() % 2 == 0 || row_kernel.len() % 2 == 0 {
        return Err(TensorError::EvenKernel {
            height: col_kernel.len(),
            width: row_kernel.len(),
        });
    }
    let (h, w) = map.shape();
    let src: Vec<f64> = map.values().iter().map(|v| v.as_f64()).collect();
    let mut horiz = vec![0.0; h * w];
    for r in 0..h {
        correlate_1d(&src[r * w..], &mut horiz[r * w..], w, 1, row_kernel);
    }
    let mut vert = vec![0.0; h * w];
    for c in 0..w {
        correlate_1d(&horiz[c..], &mut vert[c..], h, w, col_kernel);
    }
    Map2D::new(h, w, vert.into_iter().map(|v| T::from_f64(v * scale)).collect())
}

/// Source taps `(lo, hi, frac)` for corner-aligned linear resampling.
fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 {
                (n_in as f64 - 1.0) / 2.0
            } else {
                (i * (n_in - 1)) as f64 / (n_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize with corner-aligned sampling. Same-size resizing returns
/// an exact copy.
pub fn resize_bilinear<T: Element>(map: &Map2D<T>, out_h: usize, out_w: usize) -> Map2D<T> {
    assert!(out_h >= 1 && out_w >= 1, "output size must be at least 1x1");
    if map.shape() == (out_h, out_w) {
        return map.clone();
    }
    let (h, w) = map.shape();
    let rows = linear_taps(h, out_h);
    let cols = linear_taps(w, out_w);
    let v = map.values();
    let at = |r: usize, c: usize| v[r * w + c].as_f64();
    Map2D::from_fn(out_h, out_w, |i, j| {
        let (r0, r1, fy) = rows[i];
        let (c0, c1, fx) = cols[j];
        let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
        let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
        T::from_f64(top * (1.0 - fy) + bottom * fy)
    })
}

/// Adjoint of [`resize_bilinear`]: scatters a map living at the resized
/// resolution back onto the `in_h x in_w` source grid with the same weights.
pub fn resize_bilinear_transpose<T: Element>(
    grad: &Map2D<T>,
    in_h: usize,
    in_w: usize,
) -> Map2D<T> {
    if grad.shape() == (in_h, in_w) {
        return grad.clone();
    }
    let (out_h, out_w) = grad.shape();
    let rows = linear_taps(in_h, out_h);
    let cols = linear_taps(in_w, out_w);
    let mut acc = vec![0.0f64; in_h * in_w];
    for (i, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
            let g = grad.get(i, j).as_f64();
            acc[r0 * in_w + c0] += g * (1.0 - fy) * (1.0 - fx);
            acc[r0 * in_w + c1] += g * (1.0 - fy) * fx;
            acc[r1 * in_w + c0] += g * fy * (1.0 - fx);
            acc[r1 * in_w + c1] += g * fy * fx;
        }
    }
    Map2D::new(in_h, in_w, acc.into_iter().map(T::from_f64).collect())
        .expect("finite scatter")
}
