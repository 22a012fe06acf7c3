//! Dense and 1-D convolution kernels on flat row-major buffers.
//!
//! Convolutions go through an im2col buffer and `matrixmultiply::dgemm`.

/// Geometry of a 1-D convolution over a `cin × t_in` input with
/// `cout × cin × k` kernels and explicit zero padding on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub t_in: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    /// Output has the same length as the input; requires odd `k`.
    pub fn same(cin: usize, cout: usize, k: usize, t_in: usize) -> Self {
        ConvGeom {
            cin,
            cout,
            k,
            t_in,
            pad_left: (k - 1) / 2,
            pad_right: (k - 1) / 2,
        }
    }

    /// Causal convolution over `history ++ current`: output covers only the
    /// `t_in - history` current positions, each seeing at most `k - 1` past
    /// values (zero beyond the start of the series).
    pub fn causal_with_history(cin: usize, cout: usize, k: usize, t_in: usize, history: usize) -> Self {
        debug_assert!(history < k);
        ConvGeom {
            cin,
            cout,
            k,
            t_in,
            pad_left: k - 1 - history,
            pad_right: 0,
        }
    }

    pub fn t_out(&self) -> usize {
        self.t_in + self.pad_left + self.pad_right + 1 - self.k
    }

    pub fn macs(&self) -> u64 {
        (self.cout * self.cin * self.k * self.t_out()) as u64
    }

    fn rows(&self) -> usize {
        self.cin * self.k
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let t_out = self.t_out();
        let mut col = vec![0.0; self.rows() * t_out];
        for c in 0..self.cin {
            let xc = &x[c * self.t_in..(c + 1) * self.t_in];
            for j in 0..self.k {
                let row = &mut col[(c * self.k + j) * t_out..(c * self.k + j + 1) * t_out];
                // input index = t + j - pad_left
                for (t, r) in row.iter_mut().enumerate() {
                    let idx = t + j;
                    if idx >= self.pad_left && idx - self.pad_left < self.t_in {
                        *r = xc[idx - self.pad_left];
                    }
                }
            }
        }
        col
    }
}

/// `out[o, t] = b[o] + Σ_{c,j} w[o, c, j] · x[c, t + j − pad_left]`.
pub fn conv1d(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    assert_eq!(x.len(), g.cin * g.t_in);
    assert_eq!(w.len(), g.cout * g.rows());
    assert_eq!(b.len(), g.cout);
    let t_out = g.t_out();
    let col = g.im2col(x);
    let mut out = vec![0.0; g.cout * t_out];
    for (o, row) in out.chunks_mut(t_out).enumerate() {
        row.iter_mut().for_each(|v| *v = b[o]);
    }
    let kk = g.rows();
    unsafe {
        matrixmultiply::dgemm(
            g.cout,
            kk,
            t_out,
            1.0,
            w.as_ptr(),
            kk as isize,
            1,
            col.as_ptr(),
            t_out as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            t_out as isize,
            1,
        );
    }
    out
}

/// Accumulates gradients of a [`conv1d`] call given the upstream gradient `dy`.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &ConvGeom,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let t_out = g.t_out();
    let kk = g.rows();
    if let Some(db) = db {
        for (o, row) in dy.chunks(t_out).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        let col = g.im2col(x);
        unsafe {
            matrixmultiply::dgemm(
                g.cout,
                t_out,
                kk,
                1.0,
                dy.as_ptr(),
                t_out as isize,
                1,
                col.as_ptr(),
                1,
                t_out as isize,
                1.0,
                dw.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; kk * t_out];
        unsafe {
            matrixmultiply::dgemm(
                kk,
                g.cout,
                t_out,
                1.0,
                w.as_ptr(),
                1,
                kk as isize,
                dy.as_ptr(),
                t_out as isize,
                1,
                0.0,
                dcol.as_mut_ptr(),
                t_out as isize,
                1,
            );
        }
        for c in 0..g.cin {
            for j in 0..g.k {
                let row = &dcol[(c * g.k + j) * t_out..(c * g.k + j + 1) * t_out];
                for (t, &d) in row.iter().enumerate() {
                    let idx = t + j;
                    if idx >= g.pad_left && idx - g.pad_left < g.t_in {
                        dx[c * g.t_in + idx - g.pad_left] += d;
                    }
                }
            }
        }
    }
}

/// `y = W x + b` with `W` stored `rows × cols`.
pub fn dense(x: &[f64], w: &[f64], b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(x.len(), cols);
    assert_eq!(w.len(), rows * cols);
    w.chunks_exact(cols)
        .zip(b)
        .map(|(row, &bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let t_out = g.t_out();
        let mut out = vec![0.0; g.cout * t_out];
        for o in 0..g.cout {
            for t in 0..t_out {
                let mut acc = b[o];
                for c in 0..g.cin {
                    for j in 0..g.k {
                        let idx = t as isize + j as isize - g.pad_left as isize;
                        if idx >= 0 && (idx as usize) < g.t_in {
                            acc += w[(o * g.cin + c) * g.k + j] * x[c * g.t_in + idx as usize];
                        }
                    }
                }
                out[o * t_out + t] = acc;
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let g = ConvGeom::same(1, 1, 3, 5);
        let x = [1.0, -2.0, 3.0, 0.5, 7.0];
        assert_eq!(conv1d(&x, &[0.0, 1.0, 0.0], &[0.0], &g), x.to_vec());
    }

    #[test]
    fn box_kernel_zero_padded() {
        let g = ConvGeom::same(1, 1, 3, 3);
        assert_eq!(conv1d(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], &[0.0], &g), vec![3.0, 6.0, 5.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut s = 1u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for &(cin, cout, k, t, hist) in &[(2, 3, 3, 7, 1), (3, 2, 5, 4, 4), (1, 4, 9, 12, 0)] {
            for g in [
                ConvGeom::same(cin, cout, k, t),
                ConvGeom::causal_with_history(cin, cout, k, t, hist.min(t - 1).min(k - 1)),
            ] {
                let x: Vec<f64> = (0..cin * t).map(|_| next()).collect();
                let w: Vec<f64> = (0..cout * cin * k).map(|_| next()).collect();
                let b: Vec<f64> = (0..cout).map(|_| next()).collect();
                let fast = conv1d(&x, &w, &b, &g);
                let slow = naive_conv(&x, &w, &b, &g);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn causal_geometry_lengths() {
        let g = ConvGeom::causal_with_history(2, 8, 9, 3 + 5, 3);
        assert_eq!(g.t_out(), 5);
        let g = ConvGeom::causal_with_history(2, 8, 9, 5, 0);
        assert_eq!(g.t_out(), 5);
    }

    #[test]
    fn dense_hand_arithmetic() {
        assert_eq!(dense(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2), vec![1.0, 2.0]);
        assert_eq!(dense(&[2.0, 3.0], &[1.0, 1.0], &[0.5], 1, 2), vec![5.5]);
    }
}
