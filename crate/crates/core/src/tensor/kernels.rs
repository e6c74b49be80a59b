//! Raw numeric kernels behind the graph ops.
//!
//! All loops are serial and iterate in a fixed order, so results are
//! bit-identical across runs. Inner loops run over the last (contiguous)
//! dimension to vectorize.

/// C[m,n] += A[m,k] * B[k,n], all row-major contiguous.
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

/// Transpose a row-major (rows, cols) matrix into (cols, rows).
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// 3x3, stride-1, same-padding convolution.
/// x: (n, h, w, ci), weight: (3, 3, ci, co) -> out (n, h, w, co).
pub fn conv2d_3x3(x: &[f64], w: &[f64], n: usize, h: usize, wd: usize, ci: usize, co: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * h * wd * co];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..wd {
                let o_base = ((b * h + y) * wd + xx) * co;
                let acc = &mut out[o_base..o_base + co];
                for dy in 0..3usize {
                    let iy = y as isize + dy as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..3usize {
                        let ix = xx as isize + dx as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let i_base = ((b * h + iy as usize) * wd + ix as usize) * ci;
                        let w_base = (dy * 3 + dx) * ci * co;
                        for c_in in 0..ci {
                            let xv = x[i_base + c_in];
                            if xv == 0.0 {
                                continue;
                            }
                            let w_row = &w[w_base + c_in * co..w_base + (c_in + 1) * co];
                            for (a, &wv) in acc.iter_mut().zip(w_row) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d_3x3` w.r.t. input and weight.
pub fn conv2d_3x3_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    n: usize,
    h: usize,
    wd: usize,
    ci: usize,
    co: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * h * wd * ci];
    let mut dw = vec![0.0; 9 * ci * co];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..wd {
                let go = &grad_out[((b * h + y) * wd + xx) * co..((b * h + y) * wd + xx) * co + co];
                for dy in 0..3usize {
                    let iy = y as isize + dy as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx_k in 0..3usize {
                        let ix = xx as isize + dx_k as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let i_base = ((b * h + iy as usize) * wd + ix as usize) * ci;
                        let w_base = (dy * 3 + dx_k) * ci * co;
                        for c_in in 0..ci {
                            let xv = x[i_base + c_in];
                            let w_row = &w[w_base + c_in * co..w_base + (c_in + 1) * co];
                            let dw_row = &mut dw[w_base + c_in * co..w_base + (c_in + 1) * co];
                            let mut acc = 0.0;
                            for c_out in 0..co {
                                let g = go[c_out];
                                acc += w_row[c_out] * g;
                                dw_row[c_out] += xv * g;
                            }
                            dx[i_base + c_in] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Iterate a tensor as lanes along `axis`: calls `f(lane_start, stride, len)`
/// once per lane, where elements sit at `lane_start + i * stride`.
pub fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner, len);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_loop() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // center tap = 1 on the single channel
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let y = conv2d_3x3(&x, &w, 1, 4, 4, 1, 1);
        assert_eq!(x, y);
    }

    #[test]
    fn lane_iteration_covers_every_element_once() {
        let shape = [2usize, 3, 4];
        for axis in 0..3 {
            let mut seen = vec![0usize; 24];
            for_each_lane(&shape, axis, |start, stride, len| {
                for i in 0..len {
                    seen[start + i * stride] += 1;
                }
            });
            assert!(seen.iter().all(|&c| c == 1), "axis {}", axis);
        }
    }
}
