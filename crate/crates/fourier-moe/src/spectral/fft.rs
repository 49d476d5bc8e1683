//! 2-D DFT/IDFT over dense complex matrices.
//!
//! Convention: the forward transform is unnormalized,
//! `F(u,v) = Σ_{q,y} S(q,y)·exp(−j2π(uq/M + vy/N))`, and the inverse carries
//! the full `1/(MN)` factor. Two paths are provided: a fast separable path
//! (radix-2 per axis, naive 1-D fallback for non-power-of-two lengths) and a
//! naive quadruple-loop path that serves as the independent oracle.
//! Summation order inside each transform is fixed, so results are
//! bit-identical no matter how callers thread.

use crate::matrix::ComplexMatrix;
use crate::parallel;
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Below this entry count the per-axis passes stay on one thread; the
/// per-row transforms are independent either way, so the cutoff only
/// affects speed, never values.
const PAR_THRESHOLD: usize = 64 * 64;

fn bit_reverse_permute(data: &mut [Complex64]) {
    let n = data.len();
    let log_n = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - log_n)) & (n - 1);
        if j > i {
            data.swap(i, j);
        }
    }
}

/// Iterative radix-2 Cooley-Tukey. `sign = -1` forward, `+1` inverse.
/// No normalization is applied here.
fn fft_radix2(data: &mut [Complex64], sign: f64) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    bit_reverse_permute(data);
    let mut m = 2;
    while m <= n {
        let half = m / 2;
        let step = sign * TAU / m as f64;
        for k in 0..half {
            let w = Complex64::from_polar(1.0, step * k as f64);
            let mut j = 0;
            while j < n {
                let a = data[j + k];
                let b = data[j + k + half] * w;
                data[j + k] = a + b;
                data[j + k + half] = a - b;
                j += m;
            }
        }
        m *= 2;
    }
}

/// Naive O(n²) 1-D transform for lengths that are not powers of two.
/// Twiddles are taken from an exact table of the n-th roots of unity.
fn dft_naive_1d(data: &mut [Complex64], sign: f64) {
    let n = data.len();
    let roots: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, sign * TAU * m as f64 / n as f64))
        .collect();
    let input = data.to_vec();
    for (k, out) in data.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (idx, x) in input.iter().enumerate() {
            acc += x * roots[(k * idx) % n];
        }
        *out = acc;
    }
}

fn transform_1d(data: &mut [Complex64], sign: f64) {
    if data.len().is_power_of_two() {
        fft_radix2(data, sign);
    } else {
        dft_naive_1d(data, sign);
    }
}

/// Applies the 1-D transform along every row, then every column.
fn transform_2d(input: &ComplexMatrix, sign: f64) -> ComplexMatrix {
    let (rows, cols) = input.dims();
    let parallel_ok = rows * cols >= PAR_THRESHOLD;

    // Row pass.
    let row_out: Vec<Vec<Complex64>> = if parallel_ok {
        parallel::map_indexed(rows, |r| {
            let mut buf: Vec<Complex64> = (0..cols).map(|c| input.get(r, c)).collect();
            transform_1d(&mut buf, sign);
            buf
        })
    } else {
        (0..rows)
            .map(|r| {
                let mut buf: Vec<Complex64> = (0..cols).map(|c| input.get(r, c)).collect();
                transform_1d(&mut buf, sign);
                buf
            })
            .collect()
    };

    // Column pass.
    let col_out: Vec<Vec<Complex64>> = if parallel_ok {
        parallel::map_indexed(cols, |c| {
            let mut buf: Vec<Complex64> = (0..rows).map(|r| row_out[r][c]).collect();
            transform_1d(&mut buf, sign);
            buf
        })
    } else {
        (0..cols)
            .map(|c| {
                let mut buf: Vec<Complex64> = (0..rows).map(|r| row_out[r][c]).collect();
                transform_1d(&mut buf, sign);
                buf
            })
            .collect()
    };

    let mut out = ComplexMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out.set(r, c, col_out[c][r]);
        }
    }
    out
}

/// Forward 2-D DFT (unnormalized): `F(u,v) = Σ S(q,y)·exp(−j2π(uq/M + vy/N))`.
pub fn dft2(spatial: &ComplexMatrix) -> ComplexMatrix {
    transform_2d(spatial, -1.0)
}

/// Inverse 2-D DFT: `S(q,y) = (1/(MN))·Σ F(u,v)·exp(j2π(uq/M + vy/N))`.
pub fn idft2(spectrum: &ComplexMatrix) -> ComplexMatrix {
    let (rows, cols) = spectrum.dims();
    let mut out = transform_2d(spectrum, 1.0);
    let scale = 1.0 / (rows * cols) as f64;
    for z in out.data_mut() {
        *z *= scale;
    }
    out
}

/// Quadruple-loop inverse transform, summing in row-major index order.
/// This is the oracle the fast path is checked against.
pub fn idft2_naive(spectrum: &ComplexMatrix) -> ComplexMatrix {
    let (rows, cols) = spectrum.dims();
    let scale = 1.0 / (rows * cols) as f64;
    let mut out = ComplexMatrix::zeros(rows, cols);
    for q in 0..rows {
        for y in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..rows {
                for v in 0..cols {
                    let theta = TAU
                        * ((u * q) as f64 / rows as f64 + (v * y) as f64 / cols as f64);
                    acc += spectrum.get(u, v) * Complex64::from_polar(1.0, theta);
                }
            }
            out.set(q, y, acc * scale);
        }
    }
    out
}

/// Quadruple-loop forward transform, the oracle counterpart of [`dft2`].
pub fn dft2_naive(spatial: &ComplexMatrix) -> ComplexMatrix {
    let (rows, cols) = spatial.dims();
    let mut out = ComplexMatrix::zeros(rows, cols);
    for u in 0..rows {
        for v in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for q in 0..rows {
                for y in 0..cols {
                    let theta = -TAU
                        * ((u * q) as f64 / rows as f64 + (v * y) as f64 / cols as f64);
                    acc += spatial.get(q, y) * Complex64::from_polar(1.0, theta);
                }
            }
            out.set(u, v, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_spectrum(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexMatrix::from_vec(rows, cols, data)
    }

    #[test]
    fn dc_only_spectrum_gives_constant_matrix() {
        let mut f = ComplexMatrix::zeros(3, 5);
        f.set(0, 0, Complex64::new(15.0, 0.0));
        let s = idft2(&f);
        for z in s.data() {
            assert!((z.re - 1.0).abs() < 1e-12);
            assert!(z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_gives_half_cosine_row() {
        // dims (1,4): F(0,1)=1, F(0,3)=1 -> (1/2)cos(pi*y/2) = [0.5, 0, -0.5, 0]
        let mut f = ComplexMatrix::zeros(1, 4);
        f.set(0, 1, Complex64::new(1.0, 0.0));
        f.set(0, 3, Complex64::new(1.0, 0.0));
        let s = idft2(&f);
        let expected = [0.5, 0.0, -0.5, 0.0];
        for (y, e) in expected.iter().enumerate() {
            assert!((s.get(0, y).re - e).abs() < 1e-12);
            assert!(s.get(0, y).im.abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_forward_concentrates_at_dc() {
        let s = ComplexMatrix::from_vec(3, 3, vec![Complex64::new(1.0, 0.0); 9]);
        let f = dft2(&s);
        assert!((f.get(0, 0).re - 9.0).abs() < 1e-12);
        for u in 0..3 {
            for v in 0..3 {
                if (u, v) != (0, 0) {
                    assert!(f.get(u, v).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_forward_is_flat() {
        let mut s = ComplexMatrix::zeros(4, 4);
        s.set(0, 0, Complex64::new(1.0, 0.0));
        let f = dft2(&s);
        for z in f.data() {
            assert!((z.re - 1.0).abs() < 1e-12);
            assert!(z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fast_path_matches_naive_on_random_input() {
        for (rows, cols, seed) in [(8, 8, 1), (6, 10, 2), (7, 7, 3), (16, 5, 4)] {
            let f = random_spectrum(rows, cols, seed);
            let fast = idft2(&f);
            let naive = idft2_naive(&f);
            for (a, b) in fast.data().iter().zip(naive.data().iter()) {
                assert!((a - b).norm() < 1e-10, "mismatch at dims {rows}x{cols}");
            }
        }
    }

    #[test]
    fn round_trip_recovers_input() {
        let s = random_spectrum(8, 8, 7);
        let back = idft2(&dft2(&s));
        for (a, b) in back.data().iter().zip(s.data().iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn transforms_are_linear() {
        let f = random_spectrum(6, 7, 11);
        let g = random_spectrum(6, 7, 12);
        let (a, b) = (0.7, -1.3);
        let combo = ComplexMatrix::from_vec(
            6,
            7,
            f.data()
                .iter()
                .zip(g.data().iter())
                .map(|(x, y)| a * x + b * y)
                .collect(),
        );
        let lhs = idft2(&combo);
        let fa = idft2(&f);
        let gb = idft2(&g);
        for i in 0..lhs.data().len() {
            let rhs = a * fa.data()[i] + b * gb.data()[i];
            assert!((lhs.data()[i] - rhs).norm() < 1e-10);
        }
    }
}
