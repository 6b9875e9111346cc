//! Row-major dense kernels shared by attention and the backbone.

/// `y[s] = W · x[s] (+ b)` for `rows` inputs; `W` is `out × inp`.
pub fn linear(x: &[f64], rows: usize, inp: usize, w: &[f64], out: usize, b: Option<&[f64]>) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * inp);
    debug_assert_eq!(w.len(), out * inp);
    let mut y = vec![0.0; rows * out];
    for s in 0..rows {
        let xs = &x[s * inp..(s + 1) * inp];
        let ys = &mut y[s * out..(s + 1) * out];
        for (o, yo) in ys.iter_mut().enumerate() {
            *yo = dot(&w[o * inp..(o + 1) * inp], xs) + b.map_or(0.0, |b| b[o]);
        }
    }
    y
}

/// Backward of [`linear`]: accumulates `dW`, `db`, returns `dx`.
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    inp: usize,
    w: &[f64],
    out: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inp];
    for s in 0..rows {
        let xs = &x[s * inp..(s + 1) * inp];
        let dys = &dy[s * out..(s + 1) * out];
        let dxs = &mut dx[s * inp..(s + 1) * inp];
        for (o, &g) in dys.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, &w[o * inp..(o + 1) * inp], dxs);
            axpy(g, xs, &mut dw[o * inp..(o + 1) * inp]);
        }
    }
    if let Some(db) = db {
        for s in 0..rows {
            for (d, g) in db.iter_mut().zip(&dy[s * out..(s + 1) * out]) {
                *d += g;
            }
        }
    }
    dx
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
