//! Dense helpers over row-major `f64` buffers.

/// Inner product, summed left to right.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `A · Bᵀ` for row-major `A` (`ra × k`) and `B` (`rb × k`); result is `ra × rb`.
pub fn mul_transpose(a: &[f64], ra: usize, b: &[f64], rb: usize, k: usize) -> Vec<f64> {
    assert_eq!(a.len(), ra * k);
    assert_eq!(b.len(), rb * k);
    let mut c = vec![0.0; ra * rb];
    if ra == 0 || rb == 0 {
        return c;
    }
    // SAFETY: slice lengths are checked above against the strides passed in.
    unsafe {
        matrixmultiply::dgemm(
            ra,
            k,
            rb,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            rb as isize,
            1,
        );
    }
    c
}

/// `A · B` for row-major `A` (`ra × k`) and `B` (`k × cb`).
pub fn mul(a: &[f64], ra: usize, b: &[f64], k: usize, cb: usize) -> Vec<f64> {
    assert_eq!(a.len(), ra * k);
    assert_eq!(b.len(), k * cb);
    let mut c = vec![0.0; ra * cb];
    if ra == 0 || cb == 0 {
        return c;
    }
    // SAFETY: slice lengths are checked above against the strides passed in.
    unsafe {
        matrixmultiply::dgemm(
            ra,
            k,
            cb,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            cb as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            cb as isize,
            1,
        );
    }
    c
}
