//! Forward/backward primitives for the transformer: linear maps, layer norm,
//! softmax, activations. All backward passes are hand-derived and verified
//! against central finite differences in `gradcheck`.

use super::params::Scalar;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

/// y = x·W + b with W of shape [in, out].
pub fn linear<F: Scalar>(x: &Array2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Backward of `linear`: returns (dx, dw, db).
pub fn linear_backward<F: Scalar>(
    x: &Array2<F>,
    w: ArrayView2<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm without affine parameters (scale and shift come from
/// the timestep modulation instead). Returns (xhat, rstd).
pub fn layernorm<F: Scalar>(x: &Array2<F>) -> (Array2<F>, Array1<F>) {
    let d = F::fromf(x.ncols() as f64);
    let eps = F::fromf(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / d;
        let rs = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * rs);
        *r = rs;
    }
    (xhat, rstd)
}

/// Backward of `layernorm` given the cached normalized output and rstd.
pub fn layernorm_backward<F: Scalar>(
    dy: &Array2<F>,
    xhat: &Array2<F>,
    rstd: &Array1<F>,
) -> Array2<F> {
    let d = F::fromf(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dyr = dy.row(i);
        let xr = xhat.row(i);
        let mean_dy = dyr.sum() / d;
        let mean_dyx = dyr
            .iter()
            .zip(xr.iter())
            .map(|(&a, &b)| a * b)
            .fold(F::zero(), |a, b| a + b)
            / d;
        let rs = rstd[i];
        Zip::from(dx.row_mut(i)).and(&dyr).and(&xr).for_each(|o, &dyv, &xv| {
            *o = rs * (dyv - mean_dy - xv * mean_dyx);
        });
    }
    dx
}

/// Row-wise softmax in place.
pub fn softmax_rows<F: Scalar>(x: &mut Array2<F>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Backward of softmax given its output `a`: da_in = (dy - sum(dy*a)) * a.
pub fn softmax_backward<F: Scalar>(dy: &Array2<F>, a: &Array2<F>) -> Array2<F> {
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dot = dy
            .row(i)
            .iter()
            .zip(a.row(i).iter())
            .map(|(&g, &p)| g * p)
            .fold(F::zero(), |x, y| x + y);
        Zip::from(dx.row_mut(i)).and(dy.row(i)).and(a.row(i)).for_each(|o, &g, &p| {
            *o = (g - dot) * p;
        });
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::fromf(GELU_C);
    let a = F::fromf(GELU_A);
    let half = F::fromf(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

pub fn gelu_derivative<F: Scalar>(x: F) -> F {
    let c = F::fromf(GELU_C);
    let a = F::fromf(GELU_A);
    let half = F::fromf(0.5);
    let three = F::fromf(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * c * (F::one() + three * a * x * x)
}

pub fn silu<F: Scalar>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

pub fn silu_derivative<F: Scalar>(x: F) -> F {
    let sig = F::one() / (F::one() + (-x).exp());
    sig * (F::one() + x * (F::one() - sig))
}

/// Sinusoidal features of a scalar coordinate: dim/2 sin-cos pairs with
/// geometrically spaced frequencies from 1 down to 1/10000.
pub fn sinusoid_into<F: Scalar>(out: &mut [F], coord: f64) {
    let pairs = out.len() / 2;
    for j in 0..pairs {
        let denom = if pairs > 1 { (pairs - 1) as f64 } else { 1.0 };
        let freq = (10_000f64).powf(-(j as f64) / denom);
        let arg = coord * freq;
        out[2 * j] = F::fromf(arg.sin());
        out[2 * j + 1] = F::fromf(arg.cos());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_matches_manual() {
        let x = array![[1.0f64, 2.0], [0.5, -1.0]];
        let w = array![[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]];
        let b = array![0.1, 0.2, 0.3];
        let y = linear(&x, w.view(), b.view());
        assert!((y[[0, 2]] - (1.0 * 2.0 + 2.0 * (-1.0) + 0.3)).abs() < 1e-12);
        assert!((y[[1, 1]] - (-1.0 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn layernorm_rows_have_zero_mean_unit_var() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [-1.0, 0.0, 5.0, 2.0]];
        let (xhat, _) = layernorm(&x);
        for row in xhat.rows() {
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shifts it slightly
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0f64, 2.0, 3.0], [0.0, 0.0, 0.0]];
        softmax_rows(&mut x);
        for row in x.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((x[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    /// Central-difference checks of the scalar activations and the composite
    /// layer backward passes.
    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            let dg = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((dg - gelu_derivative(x)).abs() < 1e-8, "gelu'({x})");
            let ds = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((ds - silu_derivative(x)).abs() < 1e-8, "silu'({x})");
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let dy = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let (xhat, rstd) = layernorm(&x);
        let dx = layernorm_backward(&dy, &xhat, &rstd);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let (yp, _) = layernorm(&xp);
                let (ym, _) = layernorm(&xm);
                let fd: f64 = (&yp - &ym)
                    .iter()
                    .zip(dy.iter())
                    .map(|(d, g)| d / (2.0 * h) * g)
                    .sum();
                assert!(
                    (fd - dx[[i, j]]).abs() < 1e-6,
                    "ln backward at ({i},{j}): fd {fd} vs {got}",
                    got = dx[[i, j]]
                );
            }
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((2, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let dy = Array2::from_shape_fn((2, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let mut a = x.clone();
        softmax_rows(&mut a);
        let dx = softmax_backward(&dy, &a);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                softmax_rows(&mut xp);
                softmax_rows(&mut xm);
                let fd: f64 = (&xp - &xm)
                    .iter()
                    .zip(dy.iter())
                    .map(|(d, g)| d / (2.0 * h) * g)
                    .sum();
                assert!((fd - dx[[i, j]]).abs() < 1e-6);
            }
        }
    }
}
