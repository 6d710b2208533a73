//! Dense 2-D grids, valid/full convolution, kernel flipping and average pooling.
//!
//! Indexing convention: both convolution modes are cross-correlations,
//!
//! ```text
//! valid(x, k)[i, j] = Σ_{a,b} x[i + a, j + b] · k[a, b]
//! full(x, k)        = valid(pad(x, kh - 1, kw - 1), k)
//! ```
//!
//! No kernel flip is hidden in either mode. The decode path of a tied
//! auto-encoder applies [`flip2d`] explicitly, and the adjoint identity
//!
//! ```text
//! <valid(x, k), g> = <x, full(g, flip2d(k))>
//! ```
//!
//! is what every gradient in [`crate::regen`] relies on.
//!
//! Accumulation is row-major over `(a, b)` so results are bit-reproducible.

use crate::error::{Error, Result};

/// Geometry of a stack of equally sized maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape3 {
    pub maps: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape3 {
    pub const fn new(maps: usize, rows: usize, cols: usize) -> Self {
        Shape3 { maps, rows, cols }
    }

    pub const fn plane(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn len(&self) -> usize {
        self.maps * self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, map: usize, row: usize, col: usize) -> usize {
        (map * self.rows + row) * self.cols + col
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}x{}", self.maps, self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Convolution weights share the grid representation.
pub type Kernel2D = Grid2D<f64>;

impl<T: Copy + Default> Grid2D<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "grid dimensions must be positive");
        Grid2D {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }
}

impl<T> Grid2D<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("grid {rows}x{cols} has a zero dimension")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Grid2D { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows >= 1 && cols >= 1, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid2D { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

impl<T: Copy> Grid2D<T> {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }
}

impl Grid2D<f64> {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Grid2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Zero padding of `pr` rows and `pc` columns on every side.
    pub fn pad(&self, pr: usize, pc: usize) -> Self {
        let mut out = Grid2D::zeros(self.rows + 2 * pr, self.cols + 2 * pc);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r + pr, c + pc, self.get(r, c));
            }
        }
        out
    }
}

impl From<&Grid2D<bool>> for Grid2D<f64> {
    fn from(g: &Grid2D<bool>) -> Self {
        Grid2D {
            rows: g.rows,
            cols: g.cols,
            data: g.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Valid cross-correlation: output is `(rows - kh + 1) x (cols - kw + 1)`.
pub fn conv2d_valid(input: &Grid2D, kernel: &Kernel2D) -> Result<Grid2D> {
    let (m_r, m_c) = input.dims();
    let (kh, kw) = kernel.dims();
    if kh > m_r || kw > m_c {
        return Err(Error::shape(format!("kernel {kh}x{kw} larger than input {m_r}x{m_c}")));
    }
    let (o_r, o_c) = (m_r - kh + 1, m_c - kw + 1);
    let mut out = Grid2D::zeros(o_r, o_c);
    let x = input.as_slice();
    let k = kernel.as_slice();
    for i in 0..o_r {
        for j in 0..o_c {
            let mut acc = 0.0;
            for a in 0..kh {
                let row = &x[(i + a) * m_c + j..(i + a) * m_c + j + kw];
                let krow = &k[a * kw..(a + 1) * kw];
                for b in 0..kw {
                    acc += row[b] * krow[b];
                }
            }
            out.data[i * o_c + j] = acc;
        }
    }
    Ok(out)
}

/// Full cross-correlation: output is `(rows + kh - 1) x (cols + kw - 1)`.
pub fn conv2d_full(input: &Grid2D, kernel: &Kernel2D) -> Grid2D {
    let (kh, kw) = kernel.dims();
    let padded = input.pad(kh - 1, kw - 1);
    conv2d_valid(&padded, kernel).expect("padded input always admits the kernel")
}

/// Reverse a kernel along both axes.
pub fn flip2d<T: Copy>(kernel: &Grid2D<T>) -> Grid2D<T> {
    let (kh, kw) = kernel.dims();
    Grid2D::from_fn(kh, kw, |a, b| kernel.get(kh - 1 - a, kw - 1 - b))
}

/// Non-overlapping `s x s` mean pooling.
pub fn avg_pool(grid: &Grid2D, s: usize) -> Result<Grid2D> {
    let (r, c) = grid.dims();
    if s == 0 || r % s != 0 || c % s != 0 {
        return Err(Error::shape(format!("pool window {s} does not divide grid {r}x{c}")));
    }
    let inv = 1.0 / (s * s) as f64;
    let mut out = Grid2D::zeros(r / s, c / s);
    for i in 0..r / s {
        for j in 0..c / s {
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    acc += grid.get(i * s + a, j * s + b);
                }
            }
            out.set(i, j, acc * inv);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn random_grid(rng: &mut RngStream, r: usize, c: usize) -> Grid2D {
        Grid2D::from_fn(r, c, |_, _| rng.symmetric(1.0))
    }

    fn naive_valid(x: &Grid2D, k: &Grid2D) -> Vec<f64> {
        let (mr, mc) = x.dims();
        let (kh, kw) = k.dims();
        let mut out = vec![];
        for i in 0..=mr - kh {
            for j in 0..=mc - kw {
                let mut s = 0.0;
                for a in 0..kh {
                    for b in 0..kw {
                        s += x.get(i + a, j + b) * k.get(a, b);
                    }
                }
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn valid_shape_mnist() {
        let x = Grid2D::zeros(28, 28);
        let k = Grid2D::zeros(5, 5);
        assert_eq!(conv2d_valid(&x, &k).unwrap().dims(), (24, 24));
    }

    #[test]
    fn valid_rejects_large_kernel() {
        let x = Grid2D::zeros(4, 4);
        let k = Grid2D::zeros(5, 5);
        assert!(matches!(conv2d_valid(&x, &k), Err(Error::Shape(_))));
    }

    #[test]
    fn delta_kernel_over_uniform_input() {
        let x = Grid2D::from_fn(6, 6, |_, _| 0.7);
        let mut k = Grid2D::zeros(3, 3);
        k.set(2, 1, 1.0);
        let y = conv2d_valid(&x, &k).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn valid_matches_loop_oracle() {
        let mut rng = RngStream::new(11);
        for _ in 0..50 {
            let m = 5 + rng.below(8);
            let n = 1 + rng.below(5);
            let x = random_grid(&mut rng, m, m);
            let k = random_grid(&mut rng, n, n);
            let y = conv2d_valid(&x, &k).unwrap();
            for (a, b) in y.as_slice().iter().zip(naive_valid(&x, &k)) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn full_shape_and_scalar_kernel() {
        let x = Grid2D::zeros(24, 24);
        let k = Grid2D::zeros(5, 5);
        assert_eq!(conv2d_full(&x, &k).dims(), (28, 28));

        let mut rng = RngStream::new(2);
        let x = random_grid(&mut rng, 4, 4);
        let k = Grid2D::from_vec(1, 1, vec![2.5]).unwrap();
        let y = conv2d_full(&x, &k);
        assert_eq!(y, x.map(|v| v * 2.5));
    }

    #[test]
    fn flip_examples() {
        let k = Grid2D::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flip2d(&k).as_slice(), &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(flip2d(&flip2d(&k)), k);
        let sym = Grid2D::from_vec(3, 3, vec![1.0, 2.0, 1.0, 2.0, 5.0, 2.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(flip2d(&sym), sym);
    }

    #[test]
    fn pooling_examples() {
        let g = Grid2D::from_vec(2, 2, vec![0.4, 0.8, 1.2, 1.6]).unwrap();
        let p = avg_pool(&g, 2).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(avg_pool(&g, 1).unwrap(), g);
        let g = Grid2D::zeros(24, 24);
        assert_eq!(avg_pool(&g, 2).unwrap().dims(), (12, 12));
        assert!(avg_pool(&Grid2D::zeros(5, 4), 2).is_err());
    }

    #[test]
    fn pool_of_uniform_window_is_exact() {
        let g = Grid2D::from_fn(4, 4, |_, _| 0.1);
        let p = avg_pool(&g, 2).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn valid_then_full_restores_shape() {
        let x = Grid2D::zeros(10, 10);
        let k = Grid2D::zeros(4, 4);
        let h = conv2d_valid(&x, &k).unwrap();
        assert_eq!(conv2d_full(&h, &k).dims(), (10, 10));
    }

    proptest! {
        #[test]
        fn adjoint_identity(seed in any::<u64>(), m in 3usize..10, n in 1usize..4) {
            prop_assume!(n <= m);
            let mut rng = RngStream::new(seed);
            let x = random_grid(&mut rng, m, m);
            let k = random_grid(&mut rng, n, n);
            let g = random_grid(&mut rng, m - n + 1, m - n + 1);
            let lhs = conv2d_valid(&x, &k).unwrap().dot(&g);
            let rhs = x.dot(&conv2d_full(&g, &flip2d(&k)));
            prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0));
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = RngStream::new(seed);
            let x = random_grid(&mut rng, 7, 7);
            let y = random_grid(&mut rng, 7, 7);
            let k = random_grid(&mut rng, 3, 3);
            let mix = Grid2D::from_fn(7, 7, |r, c| a * x.get(r, c) + b * y.get(r, c));
            let lhs = conv2d_valid(&mix, &k).unwrap();
            let cx = conv2d_valid(&x, &k).unwrap();
            let cy = conv2d_valid(&y, &k).unwrap();
            for i in 0..lhs.as_slice().len() {
                let rhs = a * cx.as_slice()[i] + b * cy.as_slice()[i];
                prop_assert!((lhs.as_slice()[i] - rhs).abs() <= 1e-6);
            }
            let lhs = conv2d_full(&mix, &k);
            let fx = conv2d_full(&x, &k);
            let fy = conv2d_full(&y, &k);
            for i in 0..lhs.as_slice().len() {
                let rhs = a * fx.as_slice()[i] + b * fy.as_slice()[i];
                prop_assert!((lhs.as_slice()[i] - rhs).abs() <= 1e-6);
            }
        }
    }
}
