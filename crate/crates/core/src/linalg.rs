//! Dense row-major matrix products on top of `matrixmultiply`.

/// Row-major operand with an explicit leading dimension.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f64],
    pub ld: usize,
    pub trans: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], ld: usize, trans: bool) -> Self {
        Mat { data, ld, trans }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    /// Smallest slice length that covers an `rows x cols` view of `op(self)`.
    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        let (r, c) = if self.trans { (cols, rows) } else { (rows, cols) };
        (r - 1) * self.ld + c
    }
}

/// `C = alpha * op(A) op(B) + beta * C` with `op(A)` of size `m x k`,
/// `op(B)` of size `k x n` and `C` of size `m x n` with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_ld(m: usize, k: usize, n: usize, alpha: f64, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    assert!(
        a.data.len() >= a.extent(m, k) && b.data.len() >= b.extent(k, n) && c.len() >= (m.max(1) - 1) * ldc + n,
        "gemm operand too short"
    );
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the assertion above guarantees every strided access is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `C = alpha * op(A) op(B) + beta * C`, all operands contiguous.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let lda = if ta { m } else { k };
    let ldb = if tb { k } else { n };
    gemm_ld(m, k, n, alpha, Mat::new(a, lda, ta), Mat::new(b, ldb, tb), beta, c, n);
}

/// `C = op(A) op(B)`
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    gemm_acc(m, k, n, 1.0, a, ta, b, tb, 0.0, c);
}
