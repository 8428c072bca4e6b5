//! Dense row-major matrix kernels used by the graph ops.

/// `C = op(A) · op(B)` where `op` optionally transposes. `a` is stored as
/// `a_rows × a_cols` row-major before transposition, likewise `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    a_t: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (m, k) = if a_t { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (k2, n) = if b_t { (b_cols, b_rows) } else { (b_rows, b_cols) };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // element strides of op(A) and op(B)
    let (rsa, csa) = if a_t { (1, a_cols) } else { (a_cols, 1) };
    let (rsb, csb) = if b_t { (1, b_cols) } else { (b_cols, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides and dimensions above describe exactly the
    // allocations of `a`, `b` and `c`, whose lengths are checked by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C = A · B` where every output entry is the sum of its nonzero products
/// taken in ascending value order. The result does not depend on the order
/// of the contraction index, so permuting graph nodes permutes outputs
/// bit-for-bit.
pub(crate) fn gemm_order_invariant(
    a: &[f64],
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    c: &mut [f64],
) {
    let mut terms: Vec<f64> = Vec::with_capacity(k);
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            terms.clear();
            for (p, &av) in row.iter().enumerate() {
                let bv = b[p * n + j];
                if bv != 0.0 && av != 0.0 {
                    terms.push(av * bv);
                }
            }
            terms.sort_by(|x, y| x.total_cmp(y));
            c[i * n + j] = terms.iter().fold(0.0, |acc, t| acc + t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_under_all_transpositions() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(&a, m, k, &b, n);
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (aa, ar, ac, atf) in [(&a, m, k, false), (&at, k, m, true)] {
            for (bb, br, bc, btf) in [(&b, k, n, false), (&bt, n, k, true)] {
                let mut c = vec![0.0; m * n];
                gemm(aa, ar, ac, atf, bb, br, bc, btf, &mut c, false);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn order_invariant_product_ignores_permutation() {
        let a = [1e16, 1.0, -1e16, 3.0];
        let b = [1.0, 1.0, 1.0, 1.0];
        let mut c1 = [0.0];
        gemm_order_invariant(&a, 1, 4, &b, 1, &mut c1);
        let a2 = [1.0, -1e16, 3.0, 1e16];
        let mut c2 = [0.0];
        gemm_order_invariant(&a2, 1, 4, &b, 1, &mut c2);
        assert_eq!(c1[0].to_bits(), c2[0].to_bits());
    }
}
