//! Contrast adapter parameterizations: spectra without conjugate pairing
//! (truncated real part) and spatial low-rank factors. These plug into the
//! same sites, router, and training loop as the symmetric spectral experts.

use crate::error::{Error, Result};
use crate::experts::{IndexBias, InitPolicy};
use crate::matrix::{ComplexMatrix, FrequencyIndex, RealMatrix};
use crate::spectral::{idft2, truncation_error};
use num_complex::Complex64;
use crate::rng_util::standard_normal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Coefficients placed on individual bins with no conjugate pairing; the
/// forward pass keeps only the real part of the inverse transform and the
/// discarded imaginary energy is tracked per reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsymmetricExpert {
    rows: usize,
    cols: usize,
    bins: Vec<(FrequencyIndex, Complex64)>,
}

impl UnsymmetricExpert {
    pub fn new(dims: (usize, usize), mut bins: Vec<(FrequencyIndex, Complex64)>) -> Result<Self> {
        bins.sort_by_key(|(i, _)| *i);
        for w in bins.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parameter(format!(
                    "duplicate bin ({}, {})",
                    w[0].0.u, w[0].0.v
                )));
            }
        }
        for (idx, _) in &bins {
            if !idx.in_range(dims.0, dims.1) {
                return Err(Error::IndexOutOfRange {
                    u: idx.u,
                    v: idx.v,
                    rows: dims.0,
                    cols: dims.1,
                });
            }
        }
        Ok(Self {
            rows: dims.0,
            cols: dims.1,
            bins,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bins(&self) -> &[(FrequencyIndex, Complex64)] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [(FrequencyIndex, Complex64)] {
        &mut self.bins
    }

    pub fn param_len(&self) -> usize {
        2 * self.bins.len()
    }

    pub fn embed(&self) -> ComplexMatrix {
        let mut f = ComplexMatrix::zeros(self.rows, self.cols);
        for (idx, c) in &self.bins {
            f.set(idx.u, idx.v, *c);
        }
        f
    }

    /// `ΔW = Re(idft2(F))` plus the truncation error discarded by `Re`.
    pub fn reconstruct_with_truncation(&self) -> (RealMatrix, f64) {
        let f = self.embed();
        let spatial = idft2(&f);
        (spatial.real_part(), truncation_error(&f))
    }

    pub fn pack_params(&self, out: &mut Vec<f64>) {
        for (_, c) in &self.bins {
            out.push(c.re);
            out.push(c.im);
        }
    }

    pub fn unpack_params(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for (_, c) in self.bins.iter_mut() {
            c.re = src[k];
            c.im = src[k + 1];
            k += 2;
        }
        k
    }

    /// With `ΔW(q,y) = (1/MN)(a·cosθ − b·sinθ)` per bin, gradients read off
    /// the forward spectrum of the spatial gradient exactly as in the paired
    /// case but without the factor 2.
    pub fn grad_params(&self, g_hat: &ComplexMatrix, out: &mut Vec<f64>) {
        let inv_mn = 1.0 / (self.rows * self.cols) as f64;
        for (idx, _) in &self.bins {
            let gh = g_hat.get(idx.u, idx.v);
            out.push(inv_mn * gh.re);
            out.push(inv_mn * gh.im);
        }
    }
}

/// Samples `count` distinct non-DC bins (no canonical restriction) with the
/// given bias and initializes their coefficients.
pub fn init_unsymmetric_expert(
    dims: (usize, usize),
    count: usize,
    bias: IndexBias,
    init: InitPolicy,
    seed: u64,
) -> Result<UnsymmetricExpert> {
    let available = dims.0 * dims.1 - 1;
    if count == 0 {
        return Err(Error::Parameter("need at least one bin".into()));
    }
    if count > available {
        return Err(Error::Capacity(format!(
            "{count} bins requested, {available} non-DC bins available"
        )));
    }
    let mut candidates: Vec<(FrequencyIndex, f64)> = Vec::new();
    for u in 0..dims.0 {
        for v in 0..dims.1 {
            let idx = FrequencyIndex::new(u, v);
            if idx == FrequencyIndex::new(0, 0) {
                continue;
            }
            let w = match bias {
                IndexBias::Band(band) => crate::experts::band_probability(idx, dims, &band)?,
                IndexBias::Uniform => 1.0,
            };
            candidates.push((idx, w));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = candidates.iter().map(|(_, w)| w).sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = candidates.len() - 1;
            for (i, (_, w)) in candidates.iter().enumerate() {
                acc += w;
                if r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..candidates.len())
        };
        picked.push(candidates.swap_remove(pick).0);
    }

    let gauss = |rng: &mut ChaCha12Rng, sigma: f64| sigma * standard_normal(rng);
    picked.sort();
    let bins = picked
        .into_iter()
        .map(|idx| {
            let c = match init {
                InitPolicy::Zero => Complex64::new(0.0, 0.0),
                InitPolicy::Gaussian { sigma } => {
                    Complex64::new(gauss(&mut rng, sigma), gauss(&mut rng, sigma))
                }
            };
            (idx, c)
        })
        .collect();
    UnsymmetricExpert::new(dims, bins)
}

/// Spatial low-rank factorization `ΔW = B·A`, with `B` zero-initialized so
/// the adapter is exactly the identity at step 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankExpert {
    b: RealMatrix, // (M, r)
    a: RealMatrix, // (r, N)
}

impl LowRankExpert {
    pub fn init(dims: (usize, usize), rank: usize, seed: u64) -> Result<Self> {
        let (rows, cols) = dims;
        if rank < 1 || rank > rows.min(cols) {
            return Err(Error::Parameter(format!(
                "rank must satisfy 1 <= r <= min(M, N), got {rank}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sigma = 1.0 / (cols as f64).sqrt();
        let mut gauss = || sigma * standard_normal(&mut rng);
        let a = RealMatrix::from_vec(rank, cols, (0..rank * cols).map(|_| gauss()).collect());
        Ok(Self {
            b: RealMatrix::zeros(rows, rank),
            a,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn param_len(&self) -> usize {
        self.b.rows() * self.b.cols() + self.a.rows() * self.a.cols()
    }

    pub fn reconstruct(&self) -> RealMatrix {
        let (rows, cols) = self.dims();
        let r = self.rank();
        let mut out = RealMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for t in 0..r {
                    acc += self.b.get(i, t) * self.a.get(t, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn pack_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.b.data());
        out.extend_from_slice(self.a.data());
    }

    pub fn unpack_params(&mut self, src: &[f64]) -> usize {
        let nb = self.b.data().len();
        let na = self.a.data().len();
        self.b.data_mut().copy_from_slice(&src[..nb]);
        self.a.data_mut().copy_from_slice(&src[nb..nb + na]);
        nb + na
    }

    /// `∂L/∂B = G·Aᵀ`, `∂L/∂A = Bᵀ·G`.
    pub fn grad_params(&self, g: &RealMatrix, out: &mut Vec<f64>) {
        let (rows, cols) = self.dims();
        let r = self.rank();
        for i in 0..rows {
            for t in 0..r {
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += g.get(i, j) * self.a.get(t, j);
                }
                out.push(acc);
            }
        }
        for t in 0..r {
            for j in 0..cols {
                let mut acc = 0.0;
                for i in 0..rows {
                    acc += self.b.get(i, t) * g.get(i, j);
                }
                out.push(acc);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::reflect_index;

    #[test]
    fn manually_paired_bins_have_zero_truncation() {
        let dims = (4, 4);
        let idx = FrequencyIndex::new(1, 2);
        let refl = reflect_index(idx, dims).unwrap();
        let c = Complex64::new(0.7, -0.4);
        let e = UnsymmetricExpert::new(dims, vec![(idx, c), (refl, c.conj())]).unwrap();
        let (_, trunc) = e.reconstruct_with_truncation();
        assert!(trunc < 1e-30);
    }

    #[test]
    fn unpaired_bin_has_positive_truncation() {
        let e = UnsymmetricExpert::new(
            (4, 4),
            vec![(FrequencyIndex::new(1, 2), Complex64::new(1.0, 0.0))],
        )
        .unwrap();
        let (_, trunc) = e.reconstruct_with_truncation();
        assert!(trunc > 0.0);
    }

    #[test]
    fn truncation_matches_spatial_energy() {
        let e = init_unsymmetric_expert(
            (8, 8),
            10,
            IndexBias::Uniform,
            InitPolicy::Gaussian { sigma: 1.0 },
            3,
        )
        .unwrap();
        let f = e.embed();
        let spatial = crate::spectral::idft2_naive(&f).imag_energy();
        let (_, trunc) = e.reconstruct_with_truncation();
        assert!(((trunc - spatial) / spatial.max(1e-12)).abs() < 1e-9);
    }

    #[test]
    fn unsymmetric_sampling_is_deterministic_and_sized() {
        let a =
            init_unsymmetric_expert((8, 8), 12, IndexBias::Uniform, InitPolicy::Zero, 5).unwrap();
        let b =
            init_unsymmetric_expert((8, 8), 12, IndexBias::Uniform, InitPolicy::Zero, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bins().len(), 12);
        assert!(a.bins().iter().all(|(i, _)| *i != FrequencyIndex::new(0, 0)));
    }

    #[test]
    fn lowrank_zero_b_reconstructs_to_zero() {
        let e = LowRankExpert::init((6, 5), 2, 1).unwrap();
        assert_eq!(e.reconstruct(), RealMatrix::zeros(6, 5));
    }

    #[test]
    fn lowrank_rank_bound_holds() {
        let mut e = LowRankExpert::init((6, 5), 2, 1).unwrap();
        let n = e.param_len();
        let vals: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        e.unpack_params(&vals);
        let rank = crate::rank::numerical_rank(&e.reconstruct(), 1e-10).unwrap();
        assert!(rank <= 2);
    }

    #[test]
    fn lowrank_rejects_bad_rank() {
        assert!(LowRankExpert::init((4, 4), 0, 0).is_err());
        assert!(LowRankExpert::init((4, 4), 5, 0).is_err());
    }
}
