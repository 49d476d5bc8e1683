//! Hermitian-symmetry machinery on top of the 2-D transforms: canonical
//! half-spectrum storage, dense embedding, symmetry tests, truncation-error
//! and radially binned power-spectral-density computations.
//!
//! A real spatial matrix corresponds exactly to a spectrum with
//! `F(u,v) = conj(F(⟨−u⟩_M, ⟨−v⟩_N))`. The [`HalfSpectrum`] type makes that
//! constraint structural: conjugate pairs store one complex coefficient at
//! the canonical (lexicographically smaller) index, and self-conjugate bins
//! (DC and Nyquist-type bins, where the reflection maps the bin to itself)
//! store a single real scalar, so an imaginary part there cannot even be
//! represented.

pub mod fft;

pub use fft::{dft2, dft2_naive, idft2, idft2_naive};

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, FrequencyIndex, RealMatrix};
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Reflects `(u, v)` to `(⟨−u⟩_M, ⟨−v⟩_N)`; applying it twice is the identity.
pub fn reflect_index(idx: FrequencyIndex, dims: (usize, usize)) -> Result<FrequencyIndex> {
    let (rows, cols) = dims;
    if !idx.in_range(rows, cols) {
        return Err(Error::IndexOutOfRange {
            u: idx.u,
            v: idx.v,
            rows,
            cols,
        });
    }
    Ok(reflect_unchecked(idx, dims))
}

#[inline]
pub(crate) fn reflect_unchecked(idx: FrequencyIndex, dims: (usize, usize)) -> FrequencyIndex {
    let (rows, cols) = dims;
    FrequencyIndex::new((rows - idx.u) % rows, (cols - idx.v) % cols)
}

/// True when `(u, v)` is its own reflection (DC and Nyquist-type bins).
pub fn is_self_conjugate(idx: FrequencyIndex, dims: (usize, usize)) -> bool {
    reflect_unchecked(idx, dims) == idx
}

/// True when `(u, v)` is the canonical member of a proper conjugate pair,
/// i.e. not self-conjugate and lexicographically smaller than its reflection.
pub fn is_canonical_pair_index(idx: FrequencyIndex, dims: (usize, usize)) -> bool {
    let r = reflect_unchecked(idx, dims);
    r != idx && idx < r
}

/// Sparse conjugate-symmetric spectrum: pairs hold a complex coefficient at
/// their canonical index, self-conjugate bins hold a real scalar. Both lists
/// stay sorted by index so parameter order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    rows: usize,
    cols: usize,
    pairs: Vec<(FrequencyIndex, Complex64)>,
    self_conjugate: Vec<(FrequencyIndex, f64)>,
}

impl HalfSpectrum {
    pub fn new(dims: (usize, usize)) -> Self {
        assert!(dims.0 >= 1 && dims.1 >= 1);
        Self {
            rows: dims.0,
            cols: dims.1,
            pairs: Vec::new(),
            self_conjugate: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Inserts a conjugate-pair coefficient at its canonical index.
    pub fn insert_pair(&mut self, idx: FrequencyIndex, coeff: Complex64) -> Result<()> {
        if !idx.in_range(self.rows, self.cols) {
            return Err(Error::IndexOutOfRange {
                u: idx.u,
                v: idx.v,
                rows: self.rows,
                cols: self.cols,
            });
        }
        if !is_canonical_pair_index(idx, self.dims()) {
            return Err(Error::Parameter(format!(
                "({}, {}) is not a canonical pair index",
                idx.u, idx.v
            )));
        }
        match self.pairs.binary_search_by_key(&idx, |(i, _)| *i) {
            Ok(_) => Err(Error::Parameter(format!(
                "duplicate pair index ({}, {})",
                idx.u, idx.v
            ))),
            Err(pos) => {
                self.pairs.insert(pos, (idx, coeff));
                Ok(())
            }
        }
    }

    /// Inserts a self-conjugate coefficient; the value is purely real by type.
    pub fn insert_self_conjugate(&mut self, idx: FrequencyIndex, value: f64) -> Result<()> {
        if !idx.in_range(self.rows, self.cols) {
            return Err(Error::IndexOutOfRange {
                u: idx.u,
                v: idx.v,
                rows: self.rows,
                cols: self.cols,
            });
        }
        if !is_self_conjugate(idx, self.dims()) {
            return Err(Error::Parameter(format!(
                "({}, {}) is not self-conjugate",
                idx.u, idx.v
            )));
        }
        match self.self_conjugate.binary_search_by_key(&idx, |(i, _)| *i) {
            Ok(_) => Err(Error::Parameter(format!(
                "duplicate self-conjugate index ({}, {})",
                idx.u, idx.v
            ))),
            Err(pos) => {
                self.self_conjugate.insert(pos, (idx, value));
                Ok(())
            }
        }
    }

    pub fn pairs(&self) -> &[(FrequencyIndex, Complex64)] {
        &self.pairs
    }

    pub fn self_conjugate(&self) -> &[(FrequencyIndex, f64)] {
        &self.self_conjugate
    }

    pub fn pairs_mut(&mut self) -> &mut [(FrequencyIndex, Complex64)] {
        &mut self.pairs
    }

    pub fn self_conjugate_mut(&mut self) -> &mut [(FrequencyIndex, f64)] {
        &mut self.self_conjugate
    }

    /// Number of bins in the full symmetric support: each pair covers two
    /// bins, each self-conjugate bin one.
    pub fn support_len(&self) -> usize {
        2 * self.pairs.len() + self.self_conjugate.len()
    }

    /// All bins of the full symmetric support (canonical, reflected, and
    /// self-conjugate indices), sorted.
    pub fn support(&self) -> Vec<FrequencyIndex> {
        let mut out = Vec::with_capacity(self.support_len());
        for (idx, _) in &self.pairs {
            out.push(*idx);
            out.push(reflect_unchecked(*idx, self.dims()));
        }
        for (idx, _) in &self.self_conjugate {
            out.push(*idx);
        }
        out.sort();
        out
    }

    /// Trainable scalar count: two per pair, one per self-conjugate bin.
    /// This always equals [`Self::support_len`].
    pub fn scalar_len(&self) -> usize {
        2 * self.pairs.len() + self.self_conjugate.len()
    }
}

/// Expands a half-spectrum into the dense matrix with
/// `F(u,v) = c`, `F(reflect(u,v)) = conj(c)` for each pair and the stored
/// real value at each self-conjugate bin. The result satisfies
/// [`is_hermitian`] with tolerance zero.
pub fn hermitian_embed(h: &HalfSpectrum) -> ComplexMatrix {
    let (rows, cols) = h.dims();
    let mut out = ComplexMatrix::zeros(rows, cols);
    for (idx, c) in h.pairs() {
        let r = reflect_unchecked(*idx, h.dims());
        out.set(idx.u, idx.v, *c);
        out.set(r.u, r.v, c.conj());
    }
    for (idx, value) in h.self_conjugate() {
        out.set(idx.u, idx.v, Complex64::new(*value, 0.0));
    }
    out
}

/// True iff `max_(u,v) |F(u,v) − conj(F(reflect(u,v)))| ≤ tol`.
pub fn is_hermitian(f: &ComplexMatrix, tol: f64) -> bool {
    hermitian_defect(f) <= tol
}

/// `max_(u,v) |F(u,v) − conj(F(reflect(u,v)))|`.
pub fn hermitian_defect(f: &ComplexMatrix) -> f64 {
    let dims = f.dims();
    let mut worst: f64 = 0.0;
    for u in 0..dims.0 {
        for v in 0..dims.1 {
            let r = reflect_unchecked(FrequencyIndex::new(u, v), dims);
            let d = (f.get(u, v) - f.get(r.u, r.v).conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// Imaginary energy discarded by `Re(idft2(F))`, computed in the spectral
/// domain: `(1/(4MN))·Σ |F(u,v) − conj(F(reflect(u,v)))|²`. Under the
/// `1/(MN)` inverse convention this equals `Σ_(q,y) Im(idft2(F))²` exactly.
pub fn truncation_error(f: &ComplexMatrix) -> f64 {
    let dims = f.dims();
    let mut sum = 0.0;
    for u in 0..dims.0 {
        for v in 0..dims.1 {
            let r = reflect_unchecked(FrequencyIndex::new(u, v), dims);
            sum += (f.get(u, v) - f.get(r.u, r.v).conj()).norm_sqr();
        }
    }
    sum / (4.0 * (dims.0 * dims.1) as f64)
}

/// The 2-D Fourier basis kernel `B(q,y) = exp(j2π(uq/M + vy/N))`, equal to
/// the outer product of the two 1-D exponential vectors and hence rank 1.
pub fn basis_kernel(idx: FrequencyIndex, dims: (usize, usize)) -> Result<ComplexMatrix> {
    let (rows, cols) = dims;
    if !idx.in_range(rows, cols) {
        return Err(Error::IndexOutOfRange {
            u: idx.u,
            v: idx.v,
            rows,
            cols,
        });
    }
    let row_phase: Vec<Complex64> = (0..rows)
        .map(|q| Complex64::from_polar(1.0, TAU * (idx.u * q) as f64 / rows as f64))
        .collect();
    let col_phase: Vec<Complex64> = (0..cols)
        .map(|y| Complex64::from_polar(1.0, TAU * (idx.v * y) as f64 / cols as f64))
        .collect();
    let mut out = ComplexMatrix::zeros(rows, cols);
    for q in 0..rows {
        for y in 0..cols {
            out.set(q, y, row_phase[q] * col_phase[y]);
        }
    }
    Ok(out)
}

/// Centered (aliased) radial frequency distance `√(min(u,M−u)² + min(v,N−v)²)`.
pub fn centered_radius(idx: FrequencyIndex, dims: (usize, usize)) -> f64 {
    let cu = idx.u.min(dims.0 - idx.u) as f64;
    let cv = idx.v.min(dims.1 - idx.v) as f64;
    (cu * cu + cv * cv).sqrt()
}

/// Radially binned power spectral density of a real matrix: `|dft2(W)|²`,
/// with each bin holding the mean power of the frequencies whose normalized
/// centered radius falls in it. Bin boundaries are uniform in `[0, 1]`.
pub fn radial_psd(w: &RealMatrix, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Parameter("radial_psd needs bins >= 1".into()));
    }
    let spectrum = dft2(&w.to_complex());
    radial_bin_power(&spectrum, bins)
}

/// Radial binning of `|F|²` for an already-computed spectrum.
pub fn radial_bin_power(spectrum: &ComplexMatrix, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Parameter("radial binning needs bins >= 1".into()));
    }
    let dims = spectrum.dims();
    let half_u = (dims.0 / 2) as f64;
    let half_v = (dims.1 / 2) as f64;
    let d_max = (half_u * half_u + half_v * half_v).sqrt();
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for u in 0..dims.0 {
        for v in 0..dims.1 {
            let d = centered_radius(FrequencyIndex::new(u, v), dims);
            let t = if d_max > 0.0 { d / d_max } else { 0.0 };
            let bin = ((t * bins as f64) as usize).min(bins - 1);
            sums[bin] += spectrum.get(u, v).norm_sqr();
            counts[bin] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(counts.iter())
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn reflect_examples() {
        assert_eq!(
            reflect_index(FrequencyIndex::new(0, 0), (4, 4)).unwrap(),
            FrequencyIndex::new(0, 0)
        );
        assert_eq!(
            reflect_index(FrequencyIndex::new(1, 3), (4, 4)).unwrap(),
            FrequencyIndex::new(3, 1)
        );
        // Nyquist row of a (2,4) matrix is self-conjugate.
        assert_eq!(
            reflect_index(FrequencyIndex::new(1, 0), (2, 4)).unwrap(),
            FrequencyIndex::new(1, 0)
        );
    }

    #[test]
    fn reflect_rejects_out_of_range() {
        assert!(reflect_index(FrequencyIndex::new(4, 0), (4, 4)).is_err());
    }

    #[test]
    fn reflect_is_involution() {
        let dims = (5, 8);
        for u in 0..5 {
            for v in 0..8 {
                let idx = FrequencyIndex::new(u, v);
                let twice =
                    reflect_unchecked(reflect_unchecked(idx, dims), dims);
                assert_eq!(twice, idx);
            }
        }
    }

    #[test]
    fn embed_empty_is_zero() {
        let h = HalfSpectrum::new((4, 4));
        let f = hermitian_embed(&h);
        assert!(f.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn embed_self_conjugate_dc() {
        let mut h = HalfSpectrum::new((2, 4));
        h.insert_self_conjugate(FrequencyIndex::new(0, 0), 8.0).unwrap();
        let f = hermitian_embed(&h);
        assert_eq!(f.get(0, 0), Complex64::new(8.0, 0.0));
        assert_eq!(f.data().iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn embed_pair_places_conjugate_at_reflection() {
        let mut h = HalfSpectrum::new((1, 4));
        h.insert_pair(FrequencyIndex::new(0, 1), Complex64::new(1.0, 0.0))
            .unwrap();
        let f = hermitian_embed(&h);
        assert_eq!(f.get(0, 1), Complex64::new(1.0, 0.0));
        assert_eq!(f.get(0, 3), Complex64::new(1.0, 0.0));
        assert_eq!(f.get(0, 0), Complex64::new(0.0, 0.0));
        assert_eq!(f.get(0, 2), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn embed_output_is_exactly_hermitian() {
        let mut h = HalfSpectrum::new((4, 6));
        h.insert_pair(FrequencyIndex::new(0, 1), Complex64::new(0.3, -1.2))
            .unwrap();
        h.insert_pair(FrequencyIndex::new(1, 4), Complex64::new(-2.0, 0.7))
            .unwrap();
        h.insert_self_conjugate(FrequencyIndex::new(2, 3), 1.5).unwrap();
        assert!(is_hermitian(&hermitian_embed(&h), 0.0));
    }

    #[test]
    fn zero_matrix_is_hermitian_at_tol_zero() {
        assert!(is_hermitian(&ComplexMatrix::zeros(3, 3), 0.0));
    }

    #[test]
    fn broken_conjugate_detected() {
        // F(0,1)=j and F(0,3)=j: the conjugate would require -j.
        let mut f = ComplexMatrix::zeros(1, 4);
        f.set(0, 1, Complex64::new(0.0, 1.0));
        f.set(0, 3, Complex64::new(0.0, 1.0));
        assert!(!is_hermitian(&f, 1e-12));
    }

    #[test]
    fn insert_rejects_non_canonical_and_duplicates() {
        let mut h = HalfSpectrum::new((4, 4));
        // (3,1) reflects to (1,3) which is smaller, so (3,1) is not canonical.
        assert!(h
            .insert_pair(FrequencyIndex::new(3, 1), Complex64::new(1.0, 0.0))
            .is_err());
        // (0,0) is self-conjugate, not a pair.
        assert!(h
            .insert_pair(FrequencyIndex::new(0, 0), Complex64::new(1.0, 0.0))
            .is_err());
        h.insert_pair(FrequencyIndex::new(1, 3), Complex64::new(1.0, 0.0))
            .unwrap();
        assert!(h
            .insert_pair(FrequencyIndex::new(1, 3), Complex64::new(2.0, 0.0))
            .is_err());
        // (1,3) is a pair index, not self-conjugate.
        assert!(h.insert_self_conjugate(FrequencyIndex::new(1, 3), 1.0).is_err());
    }

    #[test]
    fn truncation_error_zero_for_hermitian() {
        let mut h = HalfSpectrum::new((4, 4));
        h.insert_pair(FrequencyIndex::new(0, 1), Complex64::new(2.0, -0.5))
            .unwrap();
        assert_eq!(truncation_error(&hermitian_embed(&h)), 0.0);
    }

    #[test]
    fn truncation_error_hand_value() {
        // dims (1,2), F = (0, j): brute-force IDFT gives S = (j/2, -j/2),
        // imaginary energy 1/4 + 1/4 = 1/2.
        let mut f = ComplexMatrix::zeros(1, 2);
        f.set(0, 1, Complex64::new(0.0, 1.0));
        assert!((truncation_error(&f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn truncation_error_matches_spatial_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..20 {
            let rows = rng.gen_range(1..=8);
            let cols = rng.gen_range(1..=8);
            let data = (0..rows * cols)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let f = ComplexMatrix::from_vec(rows, cols, data);
            let spatial = idft2_naive(&f).imag_energy();
            let spectral = truncation_error(&f);
            let denom = spatial.abs().max(1e-12);
            assert!(
                ((spectral - spatial) / denom).abs() < 1e-9,
                "spectral {spectral} vs spatial {spatial}"
            );
        }
    }

    #[test]
    fn basis_kernel_examples() {
        let ones = basis_kernel(FrequencyIndex::new(0, 0), (3, 3)).unwrap();
        assert!(ones.data().iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        let alt = basis_kernel(FrequencyIndex::new(1, 0), (2, 2)).unwrap();
        for y in 0..2 {
            assert!((alt.get(0, y) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            assert!((alt.get(1, y) - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        }

        assert!(basis_kernel(FrequencyIndex::new(3, 0), (3, 3)).is_err());
    }

    #[test]
    fn basis_kernel_is_outer_product() {
        let dims = (6, 5);
        let idx = FrequencyIndex::new(2, 3);
        let b = basis_kernel(idx, dims).unwrap();
        for q in 0..dims.0 {
            for y in 0..dims.1 {
                let fu = Complex64::from_polar(1.0, TAU * (idx.u * q) as f64 / dims.0 as f64);
                let gv = Complex64::from_polar(1.0, TAU * (idx.v * y) as f64 / dims.1 as f64);
                assert!((b.get(q, y) - fu * gv).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn radial_psd_constant_matrix_concentrates_in_bin_zero() {
        let w = RealMatrix::from_vec(8, 8, vec![3.0; 64]);
        let psd = radial_psd(&w, 4).unwrap();
        assert!(psd[0] > 0.0);
        for b in &psd[1..] {
            assert_eq!(*b, 0.0);
        }
    }

    #[test]
    fn radial_psd_single_tone_lands_in_expected_bin() {
        // cos wave at (u,v) = (0,4) on a 16x16 grid: centered radius 4,
        // d_max = sqrt(128) ~ 11.31, normalized ~0.3536 -> bin 2 of 8.
        let rows = 16;
        let cols = 16;
        let mut data = vec![0.0; rows * cols];
        for q in 0..rows {
            for y in 0..cols {
                data[q * cols + y] = (TAU * 4.0 * y as f64 / cols as f64).cos();
            }
        }
        let w = RealMatrix::from_vec(rows, cols, data);
        let psd = radial_psd(&w, 8).unwrap();
        let peak = psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 2);
    }

    #[test]
    fn parseval_holds_under_this_convention() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for dims in [(4usize, 4usize), (8, 8), (16, 16), (64, 64), (12, 7)] {
            let data = (0..dims.0 * dims.1)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let f = ComplexMatrix::from_vec(dims.0, dims.1, data);
            let spatial = idft2(&f).energy();
            let spectral = f.energy() / (dims.0 * dims.1) as f64;
            assert!(((spatial - spectral) / spectral).abs() < 1e-9);
        }
    }
}
