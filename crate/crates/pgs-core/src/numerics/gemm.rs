//! Safe wrappers around `matrixmultiply::dgemm` for the three matrix products
//! the MLP needs. All buffers are row-major `f64` slices.

/// out(b, o) += x(b, i) * w(o, i)^T  — the forward product against a
/// weight matrix stored row-major as (out_dim, in_dim).
pub fn matmul_x_wt(x: &[f64], batch: usize, w: &[f64], out_dim: usize, in_dim: usize, out: &mut [f64]) {
    assert_eq!(x.len(), batch * in_dim, "x shape");
    assert_eq!(w.len(), out_dim * in_dim, "w shape");
    assert_eq!(out.len(), batch * out_dim, "out shape");
    if batch == 0 || out_dim == 0 || in_dim == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            batch,
            in_dim,
            out_dim,
            1.0,
            x.as_ptr(),
            in_dim as isize,
            1,
            // w^T: element (k, n) = w[n * in_dim + k]
            w.as_ptr(),
            1,
            in_dim as isize,
            1.0,
            out.as_mut_ptr(),
            out_dim as isize,
            1,
        );
    }
}

/// out(b, i) = dz(b, o) * w(o, i) — backward product to the layer input.
pub fn matmul_dz_w(dz: &[f64], batch: usize, w: &[f64], out_dim: usize, in_dim: usize, out: &mut [f64]) {
    assert_eq!(dz.len(), batch * out_dim, "dz shape");
    assert_eq!(w.len(), out_dim * in_dim, "w shape");
    assert_eq!(out.len(), batch * in_dim, "out shape");
    if batch == 0 || out_dim == 0 || in_dim == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            batch,
            out_dim,
            in_dim,
            1.0,
            dz.as_ptr(),
            out_dim as isize,
            1,
            w.as_ptr(),
            in_dim as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
}

/// dw(o, i) += dz(b, o)^T * x(b, i) — backward product to the weights.
pub fn matmul_dzt_x(dz: &[f64], batch: usize, out_dim: usize, x: &[f64], in_dim: usize, dw: &mut [f64]) {
    assert_eq!(dz.len(), batch * out_dim, "dz shape");
    assert_eq!(x.len(), batch * in_dim, "x shape");
    assert_eq!(dw.len(), out_dim * in_dim, "dw shape");
    if batch == 0 || out_dim == 0 || in_dim == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            out_dim,
            batch,
            in_dim,
            1.0,
            // dz^T: element (o, b) = dz[b * out_dim + o]
            dz.as_ptr(),
            1,
            out_dim as isize,
            x.as_ptr(),
            in_dim as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
}
