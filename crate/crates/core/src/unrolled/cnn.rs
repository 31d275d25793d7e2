//! Two-layer residual CNN acting on the (re, im) channels of an image:
//! `u ↦ u + conv2(relu(conv1(u)))`, 3x3 kernels with zero "same" padding.

use num_complex::Complex64;

use crate::datamodel::ComplexImage;

pub const KSIZE: usize = 3;
const TAPS: usize = KSIZE * KSIZE;

/// Flat parameter vector with the layout
/// `w1[hidden][2][3][3] | b1[hidden] | w2[2][hidden][3][3] | b2[2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub hidden: usize,
    pub data: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(hidden: usize) -> Self {
        Self { hidden, data: vec![0.0; Self::len_for(hidden)] }
    }

    pub fn len_for(hidden: usize) -> usize {
        hidden * 2 * TAPS + hidden + 2 * hidden * TAPS + 2
    }

    pub fn w1(&self) -> &[f64] {
        &self.data[..self.hidden * 2 * TAPS]
    }

    pub fn b1(&self) -> &[f64] {
        let s = self.hidden * 2 * TAPS;
        &self.data[s..s + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let s = self.hidden * 2 * TAPS + self.hidden;
        &self.data[s..s + 2 * self.hidden * TAPS]
    }

    pub fn b2(&self) -> &[f64] {
        let s = self.hidden * 2 * TAPS + self.hidden + 2 * self.hidden * TAPS;
        &self.data[s..s + 2]
    }

    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let h = self.hidden;
        let (w1, rest) = self.data.split_at_mut(h * 2 * TAPS);
        let (b1, rest) = rest.split_at_mut(h);
        let (w2, b2) = rest.split_at_mut(2 * h * TAPS);
        (w1, b1, w2, b2)
    }

    /// Frobenius norms of the two kernels.
    pub fn kernel_norms(&self) -> (f64, f64) {
        let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        (n(self.w1()), n(self.w2()))
    }
}

/// Intermediate activations kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct CnnTape {
    input: Vec<f64>,
    pre: Vec<f64>,
}

fn to_channels(u: &ComplexImage) -> Vec<f64> {
    let n = u.len();
    let mut out = vec![0.0; 2 * n];
    for (i, v) in u.data().iter().enumerate() {
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}

fn from_channels(ny: usize, nx: usize, ch: &[f64]) -> ComplexImage {
    let n = ny * nx;
    ComplexImage::from_fn(ny, nx, |y, x| Complex64::new(ch[y * nx + x], ch[n + y * nx + x]))
}

/// `out[co] = b[co] + Σ_ci w[co][ci] ⋆ in[ci]` (cross-correlation).
fn conv_forward(input: &[f64], cin: usize, w: &[f64], b: &[f64], cout: usize, ny: usize, nx: usize) -> Vec<f64> {
    let n = ny * nx;
    let mut out = vec![0.0; cout * n];
    for co in 0..cout {
        let o = &mut out[co * n..(co + 1) * n];
        o.fill(b[co]);
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            let k = &w[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS];
            for (t, &kv) in k.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                let (dy, dx) = (t / KSIZE, t % KSIZE);
                for y in 0..ny {
                    let sy = y + dy;
                    if sy < 1 || sy > ny {
                        continue;
                    }
                    let srow = &src[(sy - 1) * nx..sy * nx];
                    let orow = &mut o[y * nx..(y + 1) * nx];
                    let (x0, x1) = (if dx == 0 { 1 } else { 0 }, if dx == 2 { nx - 1 } else { nx });
                    for x in x0..x1 {
                        orow[x] += kv * srow[x + dx - 1];
                    }
                }
            }
        }
    }
    out
}

/// Reverse of [`conv_forward`]: accumulates weight/bias gradients and
/// returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    ny: usize,
    nx: usize,
    out_bar: &[f64],
    w_bar: &mut [f64],
    b_bar: &mut [f64],
) -> Vec<f64> {
    let n = ny * nx;
    let mut in_bar = vec![0.0; cin * n];
    for co in 0..cout {
        let ob = &out_bar[co * n..(co + 1) * n];
        b_bar[co] += ob.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            let ib = &mut in_bar[ci * n..(ci + 1) * n];
            let base = (co * cin + ci) * TAPS;
            for t in 0..TAPS {
                let kv = w[base + t];
                let (dy, dx) = (t / KSIZE, t % KSIZE);
                let mut acc = 0.0;
                for y in 0..ny {
                    let sy = y + dy;
                    if sy < 1 || sy > ny {
                        continue;
                    }
                    let (x0, x1) = (if dx == 0 { 1 } else { 0 }, if dx == 2 { nx - 1 } else { nx });
                    let srow = (sy - 1) * nx;
                    for x in x0..x1 {
                        let g = ob[y * nx + x];
                        acc += g * src[srow + x + dx - 1];
                        ib[srow + x + dx - 1] += kv * g;
                    }
                }
                w_bar[base + t] += acc;
            }
        }
    }
    in_bar
}

pub fn regularizer_forward(u: &ComplexImage, p: &ConvParams) -> ComplexImage {
    regularizer_forward_taped(u, p).0
}

pub fn regularizer_forward_taped(u: &ComplexImage, p: &ConvParams) -> (ComplexImage, CnnTape) {
    let (ny, nx) = u.shape();
    let input = to_channels(u);
    let pre = conv_forward(&input, 2, p.w1(), p.b1(), p.hidden, ny, nx);
    let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let mut out = conv_forward(&act, p.hidden, p.w2(), p.b2(), 2, ny, nx);
    for (o, i) in out.iter_mut().zip(&input) {
        *o += i;
    }
    (from_channels(ny, nx, &out), CnnTape { input, pre })
}

/// Given `∂L/∂out`, adds parameter gradients into `grad` and returns `∂L/∂u`.
pub fn regularizer_backward(tape: &CnnTape, p: &ConvParams, out_bar: &ComplexImage, grad: &mut ConvParams) -> ComplexImage {
    let (ny, nx) = out_bar.shape();
    let ob = to_channels(out_bar);
    let act: Vec<f64> = tape.pre.iter().map(|&v| v.max(0.0)).collect();
    let (gw1, gb1, gw2, gb2) = grad.split_mut();
    let mut act_bar = conv_backward(&act, p.hidden, p.w2(), 2, ny, nx, &ob, gw2, gb2);
    for (a, &z) in act_bar.iter_mut().zip(&tape.pre) {
        if z <= 0.0 {
            *a = 0.0;
        }
    }
    let in_bar = conv_backward(&tape.input, 2, p.w1(), p.hidden, ny, nx, &act_bar, gw1, gb1);
    let total: Vec<f64> = in_bar.iter().zip(&ob).map(|(a, b)| a + b).collect();
    from_channels(ny, nx, &total)
}
