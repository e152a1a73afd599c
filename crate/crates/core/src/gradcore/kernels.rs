// Row-major matrix kernels. Loop orders keep the innermost access contiguous.

use super::Real;

/// c[n×m] = a[n×k] · b[k×m]
pub(crate) fn matmul(a: &[Real], b: &[Real], n: usize, k: usize, m: usize) -> Vec<Real> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * m..(i + 1) * m];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// c[n×k] = a[n×m] · b[k×m]ᵀ
pub(crate) fn matmul_nt(a: &[Real], b: &[Real], n: usize, m: usize, k: usize) -> Vec<Real> {
    let mut c = vec![0.0; n * k];
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for j in 0..k {
            let b_row = &b[j * m..(j + 1) * m];
            c[i * k + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// c[k×m] = a[n×k]ᵀ · b[n×m]
pub(crate) fn matmul_tn(a: &[Real], b: &[Real], n: usize, k: usize, m: usize) -> Vec<Real> {
    let mut c = vec![0.0; k * m];
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * m..(i + 1) * m];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * m..(p + 1) * m];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}
