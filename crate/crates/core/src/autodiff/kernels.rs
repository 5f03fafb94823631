//! Dense kernels shared by the forward and backward passes.

use super::scalar::Scalar;

/// Layout of a channels-last 2-D convolution with odd kernel and "same"
/// zero padding at stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    pub fn positions(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// `c[m,n] = a[m,k] · b[k,n]`, all row-major.
pub fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, (k as isize, 1), b, (n as isize, 1), T::zero(), &mut c, (n as isize, 1));
    c
}

/// `a[m,k] · b[n,k]^T`.
pub fn matmul_bt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, (k as isize, 1), b, (1, k as isize), T::zero(), &mut c, (n as isize, 1));
    c
}

/// `a[k,m]^T · b[k,n]`.
pub fn matmul_at<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, (1, m as isize), b, (n as isize, 1), T::zero(), &mut c, (n as isize, 1));
    c
}

pub fn column_sums<T: Scalar>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

pub fn im2col<T: Scalar>(geo: &ConvGeometry, x: &[T]) -> Vec<T> {
    let ConvGeometry {
        batch,
        height,
        width,
        in_channels: c,
        kernel_h,
        kernel_w,
        ..
    } = *geo;
    let (ph, pw) = (kernel_h / 2, kernel_w / 2);
    let patch = geo.patch_len();
    let mut cols = vec![T::zero(); geo.positions() * patch];
    for b in 0..batch {
        for y in 0..height {
            for xx in 0..width {
                let row = ((b * height + y) * width + xx) * patch;
                for ky in 0..kernel_h {
                    let iy = y as isize + ky as isize - ph as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    for kx in 0..kernel_w {
                        let ix = xx as isize + kx as isize - pw as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        let src = ((b * height + iy as usize) * width + ix as usize) * c;
                        let dst = row + (ky * kernel_w + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im<T: Scalar>(geo: &ConvGeometry, cols: &[T]) -> Vec<T> {
    let ConvGeometry {
        batch,
        height,
        width,
        in_channels: c,
        kernel_h,
        kernel_w,
        ..
    } = *geo;
    let (ph, pw) = (kernel_h / 2, kernel_w / 2);
    let patch = geo.patch_len();
    let mut x = vec![T::zero(); batch * height * width * c];
    for b in 0..batch {
        for y in 0..height {
            for xx in 0..width {
                let row = ((b * height + y) * width + xx) * patch;
                for ky in 0..kernel_h {
                    let iy = y as isize + ky as isize - ph as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    for kx in 0..kernel_w {
                        let ix = xx as isize + kx as isize - pw as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        let dst = ((b * height + iy as usize) * width + ix as usize) * c;
                        let src = row + (ky * kernel_w + kx) * c;
                        for ch in 0..c {
                            x[dst + ch] += cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    x
}

/// 2×2 stride-2 max pooling over `[B,H,W,C]`. Returns the pooled values and
/// the flat source index of each maximum (first maximum wins on ties).
pub fn maxpool2<T: Scalar>(shape: [usize; 4], x: &[T]) -> (Vec<T>, Vec<usize>) {
    let [batch, height, width, c] = shape;
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(batch * oh * ow * c);
    let mut idx = Vec::with_capacity(out.capacity());
    for b in 0..batch {
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((b * height + 2 * y + dy) * width + 2 * xx + dx) * c + ch;
                            if best == usize::MAX || x[i] > best_v {
                                best = i;
                                best_v = x[i];
                            }
                        }
                    }
                    out.push(best_v);
                    idx.push(best);
                }
            }
        }
    }
    (out, idx)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Activated gates and `tanh(c')` kept for the LSTM backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub gates: Vec<T>,
    pub tanh_c: Vec<T>,
}

/// One LSTM step. Gate order along the `4H` axis is input, forget, cell,
/// output. Returns `[h' | c']` as `[B, 2H]`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_forward<T: Scalar>(
    batch: usize,
    input: usize,
    hidden: usize,
    x: &[T],
    h: &[T],
    c: &[T],
    w_ih: &[T],
    w_hh: &[T],
    bias: &[T],
) -> (Vec<T>, LstmCache<T>) {
    let g4 = 4 * hidden;
    let mut gates = matmul(batch, input, g4, x, w_ih);
    T::gemm(batch, hidden, g4, T::one(), h, (hidden as isize, 1), w_hh, (g4 as isize, 1), T::one(), &mut gates, (g4 as isize, 1));
    let mut out = vec![T::zero(); batch * 2 * hidden];
    let mut tanh_c = vec![T::zero(); batch * hidden];
    for b in 0..batch {
        let row = &mut gates[b * g4..(b + 1) * g4];
        for (r, &bv) in row.iter_mut().zip(bias) {
            *r += bv;
        }
        for j in 0..hidden {
            let i_g = sigmoid(row[j]);
            let f_g = sigmoid(row[hidden + j]);
            let c_g = row[2 * hidden + j].tanh();
            let o_g = sigmoid(row[3 * hidden + j]);
            row[j] = i_g;
            row[hidden + j] = f_g;
            row[2 * hidden + j] = c_g;
            row[3 * hidden + j] = o_g;
            let c_new = f_g * c[b * hidden + j] + i_g * c_g;
            let tc = c_new.tanh();
            tanh_c[b * hidden + j] = tc;
            out[b * 2 * hidden + j] = o_g * tc;
            out[b * 2 * hidden + hidden + j] = c_new;
        }
    }
    (out, LstmCache { gates, tanh_c })
}

/// Gradient of the gate pre-activations `[B, 4H]` given `d[h'|c']`.
pub fn lstm_gate_grads<T: Scalar>(
    batch: usize,
    hidden: usize,
    c: &[T],
    cache: &LstmCache<T>,
    grad_out: &[T],
    grad_c: &mut [T],
) -> Vec<T> {
    let g4 = 4 * hidden;
    let mut dg = vec![T::zero(); batch * g4];
    for b in 0..batch {
        for j in 0..hidden {
            let gate = &cache.gates[b * g4..(b + 1) * g4];
            let (i_g, f_g, c_g, o_g) = (gate[j], gate[hidden + j], gate[2 * hidden + j], gate[3 * hidden + j]);
            let tc = cache.tanh_c[b * hidden + j];
            let dh = grad_out[b * 2 * hidden + j];
            let dc_new = grad_out[b * 2 * hidden + hidden + j] + dh * o_g * (T::one() - tc * tc);
            let d_o = dh * tc;
            let d_i = dc_new * c_g;
            let d_cg = dc_new * i_g;
            let d_f = dc_new * c[b * hidden + j];
            grad_c[b * hidden + j] = dc_new * f_g;
            let row = &mut dg[b * g4..(b + 1) * g4];
            row[j] = d_i * i_g * (T::one() - i_g);
            row[hidden + j] = d_f * f_g * (T::one() - f_g);
            row[2 * hidden + j] = d_cg * (T::one() - c_g * c_g);
            row[3 * hidden + j] = d_o * o_g * (T::one() - o_g);
        }
    }
    dg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y
        let geo = ConvGeometry {
            batch: 2,
            height: 4,
            width: 3,
            in_channels: 2,
            kernel_h: 3,
            kernel_w: 3,
            out_channels: 1,
        };
        let x: Vec<f64> = (0..2 * 4 * 3 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..geo.positions() * geo.patch_len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&geo, &x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&geo, &y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_maximum() {
        let x = [1.0f32, 4.0, 2.0, 3.0];
        let (out, idx) = maxpool2([1, 2, 2, 1], &x);
        assert_eq!(out, vec![4.0]);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1e4f64), 0.0);
        assert_eq!(sigmoid(1e4f64), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
