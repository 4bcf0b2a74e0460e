//! Dense kernels on row-major buffers, generic over `f32`/`f64`.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// `C = alpha * A B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Every addressed element must lie inside the buffers behind the
    /// pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct View<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> View<'a, S> {
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        View { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Columns `c0..c0 + width` of a row-major `rows x ld` buffer.
    pub fn cols(data: &'a [S], rows: usize, ld: usize, c0: usize, width: usize) -> Self {
        View {
            data: &data[c0..],
            rows,
            cols: width,
            rs: ld,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

pub struct ViewMut<'a, S> {
    pub data: &'a mut [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> ViewMut<'a, S> {
    pub fn new(data: &'a mut [S], rows: usize, cols: usize) -> Self {
        ViewMut { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn cols(data: &'a mut [S], rows: usize, ld: usize, c0: usize, width: usize) -> Self {
        ViewMut {
            data: &mut data[c0..],
            rows,
            cols: width,
            rs: ld,
            cs: 1,
        }
    }
}

/// `C = A B + beta C`.
pub fn mm<S: Scalar>(a: View<S>, b: View<S>, beta: S, c: ViewMut<S>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len());
    let c_span = if c.rows == 0 || c.cols == 0 { 0 } else { (c.rows - 1) * c.rs + (c.cols - 1) * c.cs + 1 };
    assert!(c_span <= c.data.len());
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: the three span checks above bound every addressed element.
    unsafe {
        S::gemm(
            a.rows,
            a.cols,
            b.cols,
            S::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// `x (n x din) W (din x dout) + b`.
pub fn linear<S: Scalar>(x: &[S], n: usize, w: &[S], b: &[S], din: usize, dout: usize) -> Vec<S> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    mm(View::new(x, n, din), View::new(w, din, dout), S::one(), ViewMut::new(&mut y, n, dout));
    y
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and returns `dy W^T`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<S: Scalar>(
    x: &[S],
    dy: &[S],
    n: usize,
    w: &[S],
    din: usize,
    dout: usize,
    dw: &mut [S],
    db: &mut [S],
) -> Vec<S> {
    mm(View::new(x, n, din).t(), View::new(dy, n, dout), S::one(), ViewMut::new(dw, din, dout));
    for row in dy.chunks_exact(dout) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut dx = vec![S::zero(); n * din];
    mm(View::new(dy, n, dout), View::new(w, din, dout).t(), S::zero(), ViewMut::new(&mut dx, n, din));
    dx
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache<S> {
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
}

pub fn layer_norm<S: Scalar>(x: &[S], d: usize, g: &[S], b: &[S]) -> (Vec<S>, LnCache<S>) {
    let n = x.len() / d;
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = Vec::with_capacity(n);
    let inv_d = S::of(1.0 / d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().fold(S::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let r = S::one() / (var + S::of(LN_EPS)).sqrt();
        rstd.push(r);
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward<S: Scalar>(
    dy: &[S],
    d: usize,
    g: &[S],
    cache: &LnCache<S>,
    dg: &mut [S],
    db: &mut [S],
) -> Vec<S> {
    let n = dy.len() / d;
    let mut dx = vec![S::zero(); dy.len()];
    let inv_d = S::of(1.0 / d as f64);
    for i in 0..n {
        let (mut sum, mut sum_h) = (S::zero(), S::zero());
        for j in 0..d {
            let k = i * d + j;
            let h = cache.xhat[k];
            dg[j] += dy[k] * h;
            db[j] += dy[k];
            let dh = dy[k] * g[j];
            sum += dh;
            sum_h += dh * h;
        }
        let (mean, mean_h) = (sum * inv_d, sum_h * inv_d);
        for j in 0..d {
            let k = i * d + j;
            dx[k] = cache.rstd[i] * (dy[k] * g[j] - mean - cache.xhat[k] * mean_h);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

pub fn gelu<S: Scalar>(x: S) -> S {
    let u = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    S::of(0.5) * x * (S::one() + u.tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let u = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = S::of(GELU_C) * (S::one() + S::of(3.0 * GELU_A) * x * x);
    S::of(0.5) * (S::one() + t) + S::of(0.5) * x * (S::one() - t * t) * du
}

/// In-place row softmax. `-inf` entries get probability zero.
pub fn softmax_rows<S: Scalar>(x: &mut [S], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().fold(S::neg_infinity(), |a, &v| a.max(v));
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// `log(sum(exp(row)))`, stable.
pub fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().fold(S::neg_infinity(), |a, &v| a.max(v));
    max + row.iter().fold(S::zero(), |a, &v| a + (v - max).exp()).ln()
}

pub fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
