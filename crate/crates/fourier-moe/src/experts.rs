//! Band-limited spectral experts.
//!
//! Each expert owns a static set of active frequency bins Ω sampled from an
//! annular band via a Gaussian bandpass profile, plus trainable complex
//! coefficients stored as a [`HalfSpectrum`]. Only coefficient values train;
//! the support never changes. Reconstruction maps the coefficients to a real
//! spatial update through the inverse transform.

use crate::error::{Error, Result};
use crate::matrix::{FrequencyIndex, RealMatrix};
use crate::spectral::{
    basis_kernel, hermitian_embed, idft2, is_canonical_pair_index, is_self_conjugate,
    HalfSpectrum,
};
use num_complex::Complex64;
use crate::rng_util::standard_normal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Gaussian bandpass parameters: normalized center frequency and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandParams {
    center: f64,
    width: f64,
}

impl BandParams {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&center) || !center.is_finite() {
            return Err(Error::Parameter(format!(
                "band center must lie in [0, 1], got {center}"
            )));
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Parameter(format!(
                "bandwidth must be positive, got {width}"
            )));
        }
        Ok(Self { center, width })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

/// Default expert center placement: `(i + 1/2) / z`, tiling `(0, 1]`.
pub fn default_centers(z: usize) -> Vec<f64> {
    (0..z).map(|i| (i as f64 + 0.5) / z as f64).collect()
}

/// Normalized centered radial distance of a frequency bin.
///
/// Per-axis aliased frequencies `min(u, M−u)` are normalized by `⌊M/2⌋`
/// (taken as 0 when the axis is degenerate), then
/// `D = √(û² + v̂²) / √2` so that the largest representable frequency has
/// `D = 1` regardless of the matrix shape.
pub fn normalized_radius(idx: FrequencyIndex, dims: (usize, usize)) -> f64 {
    let (rows, cols) = dims;
    let half_u = rows / 2;
    let half_v = cols / 2;
    let cu = idx.u.min(rows - idx.u) as f64;
    let cv = idx.v.min(cols - idx.v) as f64;
    let nu = if half_u > 0 { cu / half_u as f64 } else { 0.0 };
    let nv = if half_v > 0 { cv / half_v as f64 } else { 0.0 };
    (nu * nu + nv * nv).sqrt() / std::f64::consts::SQRT_2
}

/// Gaussian bandpass assignment probability
/// `exp(−((D² − D_c²)/(D·W))²)`, with `P = 0` at the DC singularity `D = 0`.
pub fn band_probability(
    idx: FrequencyIndex,
    dims: (usize, usize),
    band: &BandParams,
) -> Result<f64> {
    if !idx.in_range(dims.0, dims.1) {
        return Err(Error::IndexOutOfRange {
            u: idx.u,
            v: idx.v,
            rows: dims.0,
            cols: dims.1,
        });
    }
    let d = normalized_radius(idx, dims);
    if d == 0.0 {
        return Ok(0.0);
    }
    let z = (d * d - band.center * band.center) / (d * band.width);
    Ok((-(z * z)).exp())
}

/// How active indices are drawn: the Gaussian band profile, or uniformly
/// over non-DC bins (the "w/o frequency bias" ablation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexBias {
    Band(BandParams),
    Uniform,
}

impl IndexBias {
    fn weight(&self, idx: FrequencyIndex, dims: (usize, usize)) -> Result<f64> {
        match self {
            IndexBias::Band(band) => band_probability(idx, dims, band),
            IndexBias::Uniform => Ok(1.0),
        }
    }
}

/// Sampled support: canonical pair representatives plus self-conjugate bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSupport {
    pub pairs: Vec<FrequencyIndex>,
    pub self_conjugate: Vec<FrequencyIndex>,
}

impl SampledSupport {
    /// Total symmetric support size (pairs count double).
    pub fn len(&self) -> usize {
        2 * self.pairs.len() + self.self_conjugate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.self_conjugate.is_empty()
    }
}

#[derive(Clone, Copy)]
enum Candidate {
    Pair(FrequencyIndex),
    SelfConjugate(FrequencyIndex),
}

impl Candidate {
    fn cost(&self) -> usize {
        match self {
            Candidate::Pair(_) => 2,
            Candidate::SelfConjugate(_) => 1,
        }
    }
}

/// Samples canonical representatives without replacement, with probability
/// proportional to the band profile, until the symmetric support reaches
/// exactly `n` bins. Deterministic for a fixed seed; DC is never included.
pub fn sample_band_indices(
    dims: (usize, usize),
    n: usize,
    bias: IndexBias,
    seed: u64,
) -> Result<SampledSupport> {
    if n < 2 {
        return Err(Error::Parameter(format!("n must be >= 2, got {n}")));
    }
    if n % 2 != 0 {
        return Err(Error::Parameter(format!("n must be even, got {n}")));
    }
    let available = dims.0 * dims.1 - 1;
    if n > available {
        return Err(Error::Capacity(format!(
            "n = {n} exceeds the {available} non-DC bins of a {}x{} spectrum",
            dims.0, dims.1
        )));
    }

    let mut candidates: Vec<(Candidate, f64)> = Vec::new();
    for u in 0..dims.0 {
        for v in 0..dims.1 {
            let idx = FrequencyIndex::new(u, v);
            if idx == FrequencyIndex::new(0, 0) {
                continue;
            }
            if is_self_conjugate(idx, dims) {
                candidates.push((Candidate::SelfConjugate(idx), bias.weight(idx, dims)?));
            } else if is_canonical_pair_index(idx, dims) {
                candidates.push((Candidate::Pair(idx), bias.weight(idx, dims)?));
            }
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut selfs = Vec::new();
    let mut drawn_self_stack: Vec<usize> = Vec::new(); // positions into `selfs`
    let mut remaining = n;

    while remaining > 0 {
        // With one bin of budget left only a self-conjugate draw fits.
        let need_self = remaining == 1;
        let eligible: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| !need_self || matches!(c, Candidate::SelfConjugate(_)))
            .filter(|(_, (c, _))| c.cost() <= remaining)
            .map(|(i, _)| i)
            .collect();

        if eligible.is_empty() {
            if need_self {
                // An odd number of self-conjugate bins was drawn and no more
                // remain; give the last one back and fill with pairs instead.
                let pos = drawn_self_stack.pop().ok_or_else(|| {
                    Error::Capacity("cannot reach the requested support size".into())
                })?;
                selfs.remove(pos);
                remaining += 1;
                continue;
            }
            return Err(Error::Capacity(
                "candidate bins exhausted before reaching the requested support size".into(),
            ));
        }

        let total: f64 = eligible.iter().map(|&i| candidates[i].1).sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = *eligible.last().unwrap();
            for &i in &eligible {
                acc += candidates[i].1;
                if r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining weights underflowed to zero: fall back to a
            // uniform draw so exhaustive budgets always terminate.
            eligible[rng.gen_range(0..eligible.len())]
        };

        let (cand, _) = candidates.swap_remove(pick);
        match cand {
            Candidate::Pair(idx) => {
                pairs.push(idx);
                remaining -= 2;
            }
            Candidate::SelfConjugate(idx) => {
                selfs.push(idx);
                drawn_self_stack.push(selfs.len() - 1);
                remaining -= 1;
            }
        }
    }

    pairs.sort();
    selfs.sort();
    Ok(SampledSupport {
        pairs,
        self_conjugate: selfs,
    })
}

/// Which coefficient components are trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffMode {
    /// Full complex coefficients (the standard parameterization).
    Complex,
    /// Imaginary parts structurally clamped to zero.
    RealOnly,
    /// Real parts clamped to zero; self-conjugate bins are frozen entirely.
    ImagOnly,
}

/// Coefficient initialization.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum InitPolicy {
    /// All coefficients zero: the adapted model equals the base model at step 0.
    #[default]
    Zero,
    /// Each trainable component drawn i.i.d. normal(0, sigma²).
    Gaussian { sigma: f64 },
}

/// A band-limited spectral expert: static support Ω plus trainable
/// coefficients and the band it was sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralExpert {
    coeffs: HalfSpectrum,
    bias: IndexBias,
    mode: CoeffMode,
}

impl SpectralExpert {
    pub fn dims(&self) -> (usize, usize) {
        self.coeffs.dims()
    }

    pub fn coeffs(&self) -> &HalfSpectrum {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut HalfSpectrum {
        &mut self.coeffs
    }

    pub fn bias(&self) -> IndexBias {
        self.bias
    }

    pub fn mode(&self) -> CoeffMode {
        self.mode
    }

    /// Full symmetric support size |Ω|.
    pub fn support_len(&self) -> usize {
        self.coeffs.support_len()
    }

    /// Full symmetric support, sorted.
    pub fn support(&self) -> Vec<FrequencyIndex> {
        self.coeffs.support()
    }

    /// Number of trainable scalars under the expert's coefficient mode.
    pub fn param_len(&self) -> usize {
        let p = self.coeffs.pairs().len();
        let s = self.coeffs.self_conjugate().len();
        match self.mode {
            CoeffMode::Complex => 2 * p + s,
            CoeffMode::RealOnly => p + s,
            CoeffMode::ImagOnly => p,
        }
    }

    /// Appends the trainable scalars in canonical order: pairs (sorted by
    /// index, re then im where trainable), then self-conjugate values.
    pub fn pack_params(&self, out: &mut Vec<f64>) {
        for (_, c) in self.coeffs.pairs() {
            match self.mode {
                CoeffMode::Complex => {
                    out.push(c.re);
                    out.push(c.im);
                }
                CoeffMode::RealOnly => out.push(c.re),
                CoeffMode::ImagOnly => out.push(c.im),
            }
        }
        if self.mode != CoeffMode::ImagOnly {
            for (_, v) in self.coeffs.self_conjugate() {
                out.push(*v);
            }
        }
    }

    /// Reads back trainable scalars in the [`Self::pack_params`] order.
    /// Clamped components are left untouched (they stay zero).
    pub fn unpack_params(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        let mode = self.mode;
        for (_, c) in self.coeffs.pairs_mut() {
            match mode {
                CoeffMode::Complex => {
                    c.re = src[k];
                    c.im = src[k + 1];
                    k += 2;
                }
                CoeffMode::RealOnly => {
                    c.re = src[k];
                    k += 1;
                }
                CoeffMode::ImagOnly => {
                    c.im = src[k];
                    k += 1;
                }
            }
        }
        if mode != CoeffMode::ImagOnly {
            for (_, v) in self.coeffs.self_conjugate_mut() {
                *v = src[k];
                k += 1;
            }
        }
        k
    }

    /// Gradients of a loss w.r.t. the trainable scalars, given the spectrum
    /// `Ĝ = dft2(G)` of the spatial gradient `G = ∂L/∂ΔW`.
    ///
    /// For a conjugate pair at `(u,v)` the chain rule through
    /// `ΔW = (2/MN)(a·cosθ − b·sinθ)` gives
    /// `∂L/∂a = (2/MN)·Re Ĝ(u,v)` and `∂L/∂b = (2/MN)·Im Ĝ(u,v)`;
    /// self-conjugate bins carry a single factor `1/MN`.
    pub fn grad_params(&self, g_hat: &crate::matrix::ComplexMatrix, out: &mut Vec<f64>) {
        let (rows, cols) = self.dims();
        let inv_mn = 1.0 / (rows * cols) as f64;
        for (idx, _) in self.coeffs.pairs() {
            let gh = g_hat.get(idx.u, idx.v);
            match self.mode {
                CoeffMode::Complex => {
                    out.push(2.0 * inv_mn * gh.re);
                    out.push(2.0 * inv_mn * gh.im);
                }
                CoeffMode::RealOnly => out.push(2.0 * inv_mn * gh.re),
                CoeffMode::ImagOnly => out.push(2.0 * inv_mn * gh.im),
            }
        }
        if self.mode != CoeffMode::ImagOnly {
            for (idx, _) in self.coeffs.self_conjugate() {
                let gh = g_hat.get(idx.u, idx.v);
                out.push(inv_mn * gh.re);
            }
        }
    }

    /// Dense reconstruction `ΔW = idft2(hermitian_embed(coeffs))`; the
    /// imaginary part vanishes by symmetry and is discarded.
    pub fn reconstruct(&self) -> RealMatrix {
        let spatial = idft2(&hermitian_embed(&self.coeffs));
        debug_assert!(spatial.max_abs_imag() <= 1e-10);
        spatial.real_part()
    }

    /// Sparse synthesis path: direct sum over Ω of coefficient × basis
    /// kernel, O(|Ω|·MN). Agrees with [`Self::reconstruct`] to within 1e−9
    /// elementwise; kept as the independent route for verification.
    pub fn reconstruct_sparse(&self) -> RealMatrix {
        let (rows, cols) = self.dims();
        let inv_mn = 1.0 / (rows * cols) as f64;
        let mut out = RealMatrix::zeros(rows, cols);
        for (idx, c) in self.coeffs.pairs() {
            let kernel = basis_kernel(*idx, self.dims()).expect("support index in range");
            for q in 0..rows {
                for y in 0..cols {
                    let b = kernel.get(q, y);
                    // c·B + conj(c·B) = 2(a·cosθ − b·sinθ)
                    out.add_at(q, y, 2.0 * inv_mn * (c.re * b.re - c.im * b.im));
                }
            }
        }
        for (idx, v) in self.coeffs.self_conjugate() {
            let kernel = basis_kernel(*idx, self.dims()).expect("support index in range");
            for q in 0..rows {
                for y in 0..cols {
                    out.add_at(q, y, inv_mn * v * kernel.get(q, y).re);
                }
            }
        }
        out
    }
}

/// Samples Ω and initializes coefficients per the given policy.
pub fn init_expert(
    dims: (usize, usize),
    n: usize,
    bias: IndexBias,
    init: InitPolicy,
    mode: CoeffMode,
    seed: u64,
) -> Result<SpectralExpert> {
    let support = sample_band_indices(dims, n, bias, seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut coeffs = HalfSpectrum::new(dims);

    let draw = |rng: &mut ChaCha12Rng, sigma: f64| sigma * standard_normal(rng);

    for idx in &support.pairs {
        let c = match (init, mode) {
            (InitPolicy::Zero, _) => Complex64::new(0.0, 0.0),
            (InitPolicy::Gaussian { sigma }, CoeffMode::Complex) => {
                Complex64::new(draw(&mut rng, sigma), draw(&mut rng, sigma))
            }
            (InitPolicy::Gaussian { sigma }, CoeffMode::RealOnly) => {
                Complex64::new(draw(&mut rng, sigma), 0.0)
            }
            (InitPolicy::Gaussian { sigma }, CoeffMode::ImagOnly) => {
                Complex64::new(0.0, draw(&mut rng, sigma))
            }
        };
        coeffs.insert_pair(*idx, c)?;
    }
    for idx in &support.self_conjugate {
        let v = match (init, mode) {
            (InitPolicy::Gaussian { sigma }, CoeffMode::Complex | CoeffMode::RealOnly) => {
                draw(&mut rng, sigma)
            }
            _ => 0.0,
        };
        coeffs.insert_self_conjugate(*idx, v)?;
    }

    Ok(SpectralExpert { coeffs, bias, mode })
}

/// Builds an expert around an explicit support with zeroed coefficients.
pub fn expert_from_support(
    dims: (usize, usize),
    support: &SampledSupport,
    mode: CoeffMode,
) -> Result<SpectralExpert> {
    let mut coeffs = HalfSpectrum::new(dims);
    for idx in &support.pairs {
        coeffs.insert_pair(*idx, Complex64::new(0.0, 0.0))?;
    }
    for idx in &support.self_conjugate {
        coeffs.insert_self_conjugate(*idx, 0.0)?;
    }
    Ok(SpectralExpert {
        coeffs,
        bias: IndexBias::Uniform,
        mode,
    })
}

/// Overlap `|Ω_a ∩ Ω_b| / min(|Ω_a|, |Ω_b|)` over full symmetric supports.
pub fn spectral_overlap(a: &SpectralExpert, b: &SpectralExpert) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "experts have dims {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let sa = a.support();
    let sb = b.support();
    let smaller = sa.len().min(sb.len());
    if smaller == 0 {
        return Ok(0.0);
    }
    let set: std::collections::BTreeSet<_> = sa.iter().collect();
    let inter = sb.iter().filter(|idx| set.contains(idx)).count();
    Ok(inter as f64 / smaller as f64)
}

/// An ensemble of experts sharing dimensions.
#[derive(Debug, Clone)]
pub struct ExpertEnsemble {
    experts: Vec<SpectralExpert>,
}

impl ExpertEnsemble {
    pub fn new(experts: Vec<SpectralExpert>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Parameter("ensemble needs at least one expert".into()));
        }
        let dims = experts[0].dims();
        if experts.iter().any(|e| e.dims() != dims) {
            return Err(Error::Dimension("experts must share dims".into()));
        }
        Ok(Self { experts })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.experts[0].dims()
    }

    pub fn experts(&self) -> &[SpectralExpert] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [SpectralExpert] {
        &mut self.experts
    }

    /// Mean pairwise spectral overlap across the ensemble.
    pub fn mean_pairwise_overlap(&self) -> Result<f64> {
        let z = self.experts.len();
        if z < 2 {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..z {
            for j in (i + 1)..z {
                sum += spectral_overlap(&self.experts[i], &self.experts[j])?;
                count += 1;
            }
        }
        Ok(sum / count as f64)
    }
}
