#![allow(dead_code)]

use regen_snn::network::KernelStack;
use regen_snn::rng::RngStream;
use regen_snn::tensor::{Grid2D, Kernel2D, Shape3};

/// Plain triple-loop valid correlation.
pub fn loop_valid(x: &Grid2D, k: &Kernel2D) -> Grid2D {
    let (m, n) = x.dims();
    let (p, q) = k.dims();
    let mut out = Grid2D::zeros(m - p + 1, n - q + 1);
    for i in 0..=m - p {
        for j in 0..=n - q {
            let mut acc = 0.0;
            for a in 0..p {
                for b in 0..q {
                    acc += x.get(i + a, j + b) * k.get(a, b);
                }
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Full correlation by explicit bounds checks, no padding buffer.
pub fn loop_full(x: &Grid2D, k: &Kernel2D) -> Grid2D {
    let (m, n) = x.dims();
    let (p, q) = k.dims();
    let mut out = Grid2D::zeros(m + p - 1, n + q - 1);
    for i in 0..m + p - 1 {
        for j in 0..n + q - 1 {
            let mut acc = 0.0;
            for a in 0..p {
                for b in 0..q {
                    let (r, c) = (
                        i as isize + a as isize - (p as isize - 1),
                        j as isize + b as isize - (q as isize - 1),
                    );
                    if r >= 0 && c >= 0 && (r as usize) < m && (c as usize) < n {
                        acc += x.get(r as usize, c as usize) * k.get(a, b);
                    }
                }
            }
            out.set(i, j, acc);
        }
    }
    out
}

pub fn loop_pool(x: &Grid2D, s: usize) -> Grid2D {
    let (m, n) = x.dims();
    let mut out = Grid2D::zeros(m / s, n / s);
    for i in 0..m / s {
        for j in 0..n / s {
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    acc += x.get(i * s + a, j * s + b);
                }
            }
            out.set(i, j, acc / (s * s) as f64);
        }
    }
    out
}

pub fn random_grid(rng: &mut RngStream, rows: usize, cols: usize) -> Grid2D {
    Grid2D::from_fn(rows, cols, |_, _| rng.symmetric(1.0))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// One synapse of the unrolled auto-encoder.
struct Synapse {
    pre: usize,
    post: usize,
    weight: usize,
}

/// Learning-step state for the dense oracle: one step's spikes and
/// observed potentials.
pub struct StepState {
    pub x: Vec<bool>,
    pub h: Vec<f64>,
    pub s: Vec<bool>,
    pub y: Vec<f64>,
}

/// Per-synapse application of the delta rule to a tied-weight conv
/// auto-encoder, written without any convolution: every encoder and decoder
/// synapse is listed explicitly with the index of the shared weight it uses.
pub fn dense_gradient(in_shape: Shape3, stack: &KernelStack, st: &StepState, v_th: f64, v_res: f64) -> Vec<f64> {
    let [o, im, kh, kw] = stack.dims();
    let (hr, hc) = (in_shape.rows - kh + 1, in_shape.cols - kw + 1);
    let hid = |k: usize, i: usize, j: usize| (k * hr + i) * hc + j;
    let inp = |l: usize, r: usize, c: usize| (l * in_shape.rows + r) * in_shape.cols + c;
    let widx = |k: usize, l: usize, a: usize, b: usize| ((k * im + l) * kh + a) * kw + b;
    let mut enc = Vec::new();
    let mut dec = Vec::new();
    for k in 0..o {
        for l in 0..im {
            for i in 0..hr {
                for j in 0..hc {
                    for a in 0..kh {
                        for b in 0..kw {
                            let w = widx(k, l, a, b);
                            enc.push(Synapse {
                                pre: inp(l, i + a, j + b),
                                post: hid(k, i, j),
                                weight: w,
                            });
                            dec.push(Synapse {
                                pre: hid(k, i, j),
                                post: inp(l, i + a, j + b),
                                weight: w,
                            });
                        }
                    }
                }
            }
        }
    }
    let relu = |v: f64| v.max(0.0);
    let w = stack.as_slice();
    let dy: Vec<f64> = (0..in_shape.len())
        .map(|p| {
            let want = if st.x[p] { v_th } else { v_res };
            (want - st.y[p]) * relu(st.y[p])
        })
        .collect();
    let mut back = vec![0.0; st.h.len()];
    for syn in &dec {
        back[syn.pre] += dy[syn.post] * w[syn.weight];
    }
    let dh: Vec<f64> = back.iter().zip(&st.h).map(|(b, &h)| b * relu(h)).collect();
    let mut g = vec![0.0; w.len()];
    for syn in &enc {
        if st.x[syn.pre] {
            g[syn.weight] += dh[syn.post];
        }
    }
    for syn in &dec {
        if st.s[syn.pre] {
            g[syn.weight] += dy[syn.post];
        }
    }
    g
}

/// Random small learning instance: geometry, weights and one step's state.
pub fn random_instance(rng: &mut RngStream) -> (Shape3, KernelStack, StepState) {
    let maps = 1 + rng.below(2);
    let rows = 3 + rng.below(8);
    let cols = 3 + rng.below(8);
    let kh = 1 + rng.below(4.min(rows));
    let kw = 1 + rng.below(4.min(cols));
    let out = 1 + rng.below(3);
    let shape = Shape3::new(maps, rows, cols);
    let mut stack = KernelStack::zeros(out, maps, kh, kw);
    stack.init_uniform(2.0, rng);
    let hid = out * (rows - kh + 1) * (cols - kw + 1);
    let st = StepState {
        x: (0..shape.len()).map(|_| rng.bernoulli(0.3)).collect(),
        h: (0..hid).map(|_| rng.symmetric(1.5)).collect(),
        s: (0..hid).map(|_| rng.bernoulli(0.3)).collect(),
        y: (0..shape.len()).map(|_| rng.symmetric(1.5)).collect(),
    };
    (shape, stack, st)
}
