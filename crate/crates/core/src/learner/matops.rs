//! Flat-buffer linear algebra for the trainer. Fixed accumulation order
//! everywhere: training results are part of the determinism contract.

/// Dot product with four independent accumulators (fixed summation order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// out[s, o] = dot(x[s, :], w[o, :]) + bias[o] for a batch of `b` rows.
pub(crate) fn linear_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    b: usize,
    din: usize,
    dout: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), b * din);
    debug_assert_eq!(w.len(), dout * din);
    debug_assert_eq!(out.len(), b * dout);
    for s in 0..b {
        let row = &x[s * din..(s + 1) * din];
        let out_row = &mut out[s * dout..(s + 1) * dout];
        for o in 0..dout {
            out_row[o] = dot(row, &w[o * din..(o + 1) * din]) + bias[o];
        }
    }
}

/// dw[o, j] = sum_s delta[s, o] * act[s, j]; db[o] = sum_s delta[s, o].
/// Overwrites dw and db.
pub(crate) fn grad_params(
    delta: &[f64],
    act: &[f64],
    b: usize,
    dout: usize,
    din: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    dw.fill(0.0);
    db.fill(0.0);
    for s in 0..b {
        let act_row = &act[s * din..(s + 1) * din];
        for o in 0..dout {
            let d = delta[s * dout + o];
            if d == 0.0 {
                continue;
            }
            db[o] += d;
            let dw_row = &mut dw[o * din..(o + 1) * din];
            for j in 0..din {
                dw_row[j] += d * act_row[j];
            }
        }
    }
}

/// dx[s, j] = sum_o delta[s, o] * w[o, j]. Overwrites dx.
pub(crate) fn grad_inputs(
    delta: &[f64],
    w: &[f64],
    b: usize,
    dout: usize,
    din: usize,
    dx: &mut [f64],
) {
    dx.fill(0.0);
    for s in 0..b {
        let dx_row = &mut dx[s * din..(s + 1) * din];
        for o in 0..dout {
            let d = delta[s * dout + o];
            if d == 0.0 {
                continue;
            }
            let w_row = &w[o * din..(o + 1) * din];
            for j in 0..din {
                dx_row[j] += d * w_row[j];
            }
        }
    }
}
