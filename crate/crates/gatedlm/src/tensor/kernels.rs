//! Raw row-major f32 array kernels shared by the tape ops, the chunkwise scan
//! path, and host-side scoring. Reductions accumulate in f64.

/// out[m,n] = a[m,k] * b[k,n]. `out` must be zeroed by the caller.
pub fn matmul(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
}

/// out[m,k] += a[m,n] * b[k,n]^T  (i.e. out = a . b^T), accumulating.
pub fn matmul_nt_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0f32;
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            orow[kk] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]  (i.e. out = a^T . b), accumulating.
pub fn matmul_tn_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Max-subtracted softmax over each row of `x` ([rows, cols]), f64 interior.
pub fn softmax_rows(x: &[f32], out: &mut [f32], rows: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * cols);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        let m = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (o, &v) in or.iter_mut().zip(xr.iter()) {
            let e = f64::from(v - m).exp();
            *o = e as f32;
            sum += e;
        }
        let inv = 1.0 / sum;
        for o in or.iter_mut() {
            *o = (f64::from(*o) * inv) as f32;
        }
    }
}

/// Log-softmax over each row via max subtraction and a log-sum-exp in f64.
pub fn log_softmax_rows(x: &[f32], out: &mut [f32], rows: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * cols);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        let m = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for &v in xr.iter() {
            sum += f64::from(v - m).exp();
        }
        let lse = sum.ln();
        for (o, &v) in or.iter_mut().zip(xr.iter()) {
            *o = (f64::from(v - m) - lse) as f32;
        }
    }
}

/// Sum of all elements, accumulated in f64.
pub fn sum_f64(x: &[f32]) -> f64 {
    x.iter().map(|&v| f64::from(v)).sum()
}

/// Euclidean norm accumulated in f64.
pub fn l2_norm(x: &[f32]) -> f64 {
    x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let mut out = vec![0.0; 4];
        matmul(&eye, &b, &mut out, 2, 2, 2);
        assert_eq!(out, b);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let a = vec![1.0, 2.0];
        let b = vec![3.0, 4.0];
        let mut out = vec![0.0; 1];
        matmul(&a, &b, &mut out, 1, 2, 1);
        assert_eq!(out, vec![11.0]);
    }

    #[test]
    fn softmax_no_overflow() {
        let x = vec![1000.0, 1000.0];
        let mut out = vec![0.0; 2];
        softmax_rows(&x, &mut out, 1, 2);
        assert_eq!(out, vec![0.5, 0.5]);
    }
}
