//! Small numerical kernels shared across the crate: composite quadrature
//! weights on uniform grids, Gauss-Legendre panels, and monotone
//! interpolation.

/// Composite quadrature weights for `m` uniform intervals of width `h`
/// (that is, `m + 1` nodes).
///
/// Even `m` uses Simpson's rule throughout. Odd `m >= 3` uses Simpson on
/// the first `m - 3` intervals and the 3/8 rule on the last three, so the
/// rule stays fourth order for every `m >= 2`. `m == 1` falls back to the
/// trapezoid.
pub fn composite_weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    match m {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let simpson_end = if m % 2 == 0 { m } else { m - 3 };
            let mut i = 0;
            while i < simpson_end {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
                i += 2;
            }
            if simpson_end < m {
                let s = simpson_end;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    w
}

/// Trapezoid weights for `m` uniform intervals of width `h`.
pub fn trapezoid_weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; m + 1];
    w[0] = 0.5 * h;
    w[m] = 0.5 * h;
    if m == 0 {
        w[0] = 0.0;
    }
    w
}

/// Composite Simpson integral of `f` over `[a, b]` with `m` intervals
/// (rounded up to the next even count).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    let m = (m.max(2) + 1) & !1;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

// 10-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_21,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_87,
    0.269_266_719_309_996_35,
    0.219_086_362_515_982_04,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_14,
];

/// Composite 10-point Gauss-Legendre integral of `f` over `[a, b]` split
/// into `panels` equal panels.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + width * (p as f64 + 0.5);
        let mut acc = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            acc += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += acc * half;
    }
    total
}

/// Linear interpolation on a uniform grid starting at zero with spacing `h`.
/// Arguments past the last node clamp to the end value.
pub fn lerp_uniform(values: &[f64], h: f64, x: f64) -> f64 {
    let n = values.len();
    if n == 1 || x <= 0.0 {
        return values[0];
    }
    let s = x / h;
    let i = s.floor() as usize;
    if i >= n - 1 {
        return values[n - 1];
    }
    let frac = s - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
///
/// Preserves monotonicity of the data, which matters when the interpolant
/// is used to invert a strictly increasing map.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// `xs` must be strictly increasing and the same length as `ys` (>= 2).
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() == ys.len() && xs.len() >= 2);
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secants[i - 1], secants[i]);
            slopes[i] = if a * b <= 0.0 {
                0.0
            } else {
                // weighted harmonic mean
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                (w1 + w2) / (w1 / a + w2 / b)
            };
        }
        Self { xs, ys, slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).expect("finite abscissa"))
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_weights_integrate_cubics_exactly() {
        for m in 2..12 {
            let h = 0.7 / m as f64;
            let w = composite_weights(m, h);
            let s: f64 = w
                .iter()
                .enumerate()
                .map(|(i, wi)| {
                    let x = i as f64 * h;
                    wi * (1.0 + x - 2.0 * x * x + 3.0 * x * x * x)
                })
                .sum();
            let b: f64 = 0.7;
            let exact = b + b * b / 2.0 - 2.0 * b.powi(3) / 3.0 + 3.0 * b.powi(4) / 4.0;
            assert!((s - exact).abs() < 1e-14, "m={m}: {s} vs {exact}");
        }
    }

    #[test]
    fn gauss_legendre_matches_closed_form() {
        let v = gauss_legendre(|x| x.cos(), 0.0, 3.0, 4);
        assert!((v - 3f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn monotone_cubic_stays_monotone() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64).powi(2) * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sqrt() + 0.1 * x).collect();
        let p = MonotoneCubic::new(xs.clone(), ys);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..2000 {
            let x = xs[19] * k as f64 / 1999.0;
            let y = p.eval(x);
            assert!(y >= prev - 1e-15);
            prev = y;
        }
    }
}
