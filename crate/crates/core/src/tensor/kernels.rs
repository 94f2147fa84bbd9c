/// Row-major view of a matrix operand, optionally transposed.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    /// Offset of element (0, 0).
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// A dense `rows × cols` matrix, read as-is or transposed.
    pub fn dense(data: &'a [f64], cols: usize, transposed: bool) -> Self {
        if transposed {
            MatRef { data, offset: 0, row_stride: 1, col_stride: cols }
        } else {
            MatRef { data, offset: 0, row_stride: cols, col_stride: 1 }
        }
    }
}

/// `C[m×n] = beta·C + A[m×k]·B[k×n]` on strided operands.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
    c_offset: usize,
    c_row_stride: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let max_a = a.offset + (m.saturating_sub(1)) * a.row_stride + (k.saturating_sub(1)) * a.col_stride;
    let max_b = b.offset + (k.saturating_sub(1)) * b.row_stride + (n.saturating_sub(1)) * b.col_stride;
    let max_c = c_offset + (m - 1) * c_row_stride + (n - 1);
    assert!(k == 0 || (max_a < a.data.len() && max_b < b.data.len()), "gemm operand out of bounds");
    assert!(max_c < c.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for v in &mut c[c_offset + i * c_row_stride..c_offset + i * c_row_stride + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched is bounds-checked by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            c_row_stride as isize,
            1,
        );
    }
}

/// Dense `C = beta·C + op(A)·op(B)` where `op` optionally transposes.
///
/// `a` is stored as `m×k` (or `k×m` when `ta`), `b` as `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a = MatRef::dense(a, if ta { m } else { k }, ta);
    let b = MatRef::dense(b, if tb { k } else { n }, tb);
    gemm_strided(m, k, n, a, b, beta, c, 0, n);
}
