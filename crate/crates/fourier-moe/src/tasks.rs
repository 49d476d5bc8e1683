//! Desk-scale synthetic benchmarks.
//!
//! Three task kinds drive the harness: direct target-matrix fitting,
//! a band-separated multi-task classification benchmark whose per-task
//! Bayes-style discriminators are synthesized from band-limited spectral
//! coefficients, and a single-task toy classifier.

use crate::error::{Error, Result};
use crate::experts::{init_expert, BandParams, CoeffMode, IndexBias, InitPolicy};
use crate::matrix::RealMatrix;
use crate::rng_util::{derive_seed, standard_normal};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TargetFit,
    BandMultitask,
    ToyClassify,
}

/// What target matrix the target-fit task synthesizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Random,
    /// Circularly odd: `T(q,y) = −T(⟨−q⟩, ⟨−y⟩)`, zero DC.
    Odd,
    /// Circularly even: `T(q,y) = T(⟨−q⟩, ⟨−y⟩)`.
    Even,
}

fn default_tasks() -> usize {
    1
}
fn default_classes() -> usize {
    4
}
fn default_noise() -> f64 {
    0.1
}
fn default_samples() -> usize {
    40
}
fn default_gen_bandwidth() -> f64 {
    0.12
}
fn default_carrier_scale() -> f64 {
    2.0
}
fn default_min_margin() -> f64 {
    0.4
}

/// Pure description of a dataset; generators are deterministic functions of
/// this value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// (rows, cols) of the adapted layer; inputs have length `cols`.
    #[serde(default)]
    pub dims: Option<(usize, usize)>,
    #[serde(default = "default_tasks")]
    pub tasks: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    #[serde(default)]
    pub target_kind: TargetKind,
    /// Bandwidth used when synthesizing band-limited task maps.
    #[serde(default = "default_gen_bandwidth")]
    pub gen_bandwidth: f64,
    /// Active bins in each generated task map (default `max(2·classes, 8)`).
    #[serde(default)]
    pub gen_bins: Option<usize>,
    /// Norm of the per-task carrier direction added to every token.
    #[serde(default = "default_carrier_scale")]
    pub carrier_scale: f64,
    /// Minimum top-2 score gap a clean token must have; draws below the
    /// margin are rejected so labels stay stable under the added noise.
    #[serde(default = "default_min_margin")]
    pub min_margin: f64,
}

impl TaskSpec {
    pub fn resolved_dims(&self) -> Result<(usize, usize)> {
        self.dims
            .ok_or_else(|| Error::Config("task spec is missing dims".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

/// A generated dataset with an 80/20 train/test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub classes: usize,
    /// Target matrix for the target-fit task.
    pub target: Option<RealMatrix>,
    /// Row-normalized generating discriminators, one per task
    /// (band-multitask and toy-classify only).
    pub reference: Vec<RealMatrix>,
}

/// Spatial reflection `(q,y) → (⟨−q⟩_M, ⟨−y⟩_N)` applied to a matrix.
pub fn circular_reflect(m: &RealMatrix) -> RealMatrix {
    let (rows, cols) = m.dims();
    let mut out = RealMatrix::zeros(rows, cols);
    for q in 0..rows {
        for y in 0..cols {
            out.set(q, y, m.get((rows - q) % rows, (cols - y) % cols));
        }
    }
    out
}

/// Projection onto the circularly even subspace `(R + R∘reflect)/2`.
pub fn even_projection(m: &RealMatrix) -> RealMatrix {
    let refl = circular_reflect(m);
    let data = m
        .data()
        .iter()
        .zip(refl.data().iter())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    RealMatrix::from_vec(m.rows(), m.cols(), data)
}

/// Projection onto the circularly odd subspace `(R − R∘reflect)/2`.
pub fn odd_projection(m: &RealMatrix) -> RealMatrix {
    let refl = circular_reflect(m);
    let data = m
        .data()
        .iter()
        .zip(refl.data().iter())
        .map(|(a, b)| 0.5 * (a - b))
        .collect();
    RealMatrix::from_vec(m.rows(), m.cols(), data)
}

fn random_matrix(dims: (usize, usize), rng: &mut ChaCha12Rng) -> RealMatrix {
    let data = (0..dims.0 * dims.1).map(|_| standard_normal(rng)).collect();
    RealMatrix::from_vec(dims.0, dims.1, data)
}

/// Random matrix projected onto the circularly odd subspace; `T(0,0) = 0`
/// and every self-reflecting spatial position vanishes.
pub fn gen_odd_target(dims: (usize, usize), seed: u64) -> RealMatrix {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0xA11));
    odd_projection(&random_matrix(dims, &mut rng))
}

/// Even counterpart of [`gen_odd_target`].
pub fn gen_even_target(dims: (usize, usize), seed: u64) -> RealMatrix {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0xE0E));
    even_projection(&random_matrix(dims, &mut rng))
}

/// Band-limited task map: an expert sampled in the task's band with
/// unit-variance coefficients, reconstructed in full so its spectrum stays
/// exactly on the sampled annulus, then scaled so the class-readout rows
/// have unit mean norm.
fn band_task_map(
    dims: (usize, usize),
    band: BandParams,
    gen_bins: usize,
    readout: &[usize],
    seed: u64,
) -> Result<RealMatrix> {
    for attempt in 0..16u64 {
        let expert = init_expert(
            dims,
            gen_bins,
            IndexBias::Band(band),
            InitPolicy::Gaussian { sigma: 1.0 },
            CoeffMode::Complex,
            derive_seed(seed, 0xD15C + attempt),
        )?;
        let mut full = expert.reconstruct();
        let mut norms = Vec::with_capacity(readout.len());
        for &r in readout {
            norms.push(full.row(r).iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().cloned().fold(0.0f64, f64::max);
        // Readout rows with badly uneven norms would skew the raw-score
        // argmax toward a single class; retry with the next derived seed.
        if lo > 1e-9 && hi / lo <= 2.0 {
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            full.scale(1.0 / mean);
            return Ok(full);
        }
    }
    Err(Error::Config(
        "could not synthesize a well-conditioned band task map".into(),
    ))
}

/// Class-score readout: rows of the task map spaced `M/classes` apart.
/// Scores are read raw — the Bayes rule is then the task map itself, whose
/// spectrum stays exactly on the sampled annulus, and a single shared
/// row-picking head decodes every task.
fn readout_rows(rows: usize, classes: usize) -> Vec<usize> {
    let spacing = (rows / classes).max(1);
    (0..classes).map(|c| (c * spacing) % rows).collect()
}

fn readout_matrix(task_map: &RealMatrix, readout: &[usize]) -> RealMatrix {
    let cols = task_map.cols();
    let mut data = Vec::with_capacity(readout.len() * cols);
    for &r in readout {
        data.extend_from_slice(task_map.row(r));
    }
    RealMatrix::from_vec(readout.len(), cols, data)
}

fn split_80_20(all: Vec<Sample>, per_group: usize) -> (Vec<Sample>, Vec<Sample>) {
    // `all` is grouped: consecutive runs of `per_group` samples share a
    // task; split each run 80/20 for stratification.
    let train_per = ((per_group as f64) * 0.8).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in all.into_iter().enumerate() {
        if i % per_group < train_per {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    (train, test)
}

/// `tasks` classification problems sharing class slots. Task `t` owns a
/// band-`t` task map `D_t`; a token is a Gaussian vector plus a fixed
/// per-task carrier direction (so a linear router can tell tasks apart),
/// its label the argmax over the normalized readout rows of `D_t`. The
/// Bayes-optimal map for task `t` is `D_t` itself, whose spectrum lives
/// exactly on the band-`t` annulus.
pub fn gen_band_multitask(spec: &TaskSpec) -> Result<Dataset> {
    let dims = spec.resolved_dims()?;
    let t_count = spec.tasks;
    if t_count == 0 || t_count > 8 {
        return Err(Error::Config(format!(
            "band_multitask supports 1..=8 tasks, got {t_count}"
        )));
    }
    if spec.classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if spec.classes > dims.0 {
        return Err(Error::Config(format!(
            "classes = {} exceeds layer output dim {}",
            spec.classes, dims.0
        )));
    }
    if spec.samples_per_class == 0 {
        return Err(Error::Config("samples_per_class must be >= 1".into()));
    }

    let readout = readout_rows(dims.0, spec.classes);
    let gen_bins = spec
        .gen_bins
        .unwrap_or((2 * spec.classes).max(8))
        .min((dims.0 * dims.1 - 1) & !1);

    let mut task_maps = Vec::with_capacity(t_count);
    let mut readouts = Vec::with_capacity(t_count);
    let mut carriers: Vec<Vec<f64>> = Vec::with_capacity(t_count);
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(t_count);
    let mut carrier_rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 0xCA55));
    for t in 0..t_count {
        let center = (t as f64 + 0.5) / t_count as f64;
        let band = BandParams::new(center, spec.gen_bandwidth)?;
        let map = band_task_map(dims, band, gen_bins, &readout, derive_seed(spec.seed, t as u64))?;
        readouts.push(readout_matrix(&map, &readout));
        task_maps.push(map);
        // Orthogonalized carrier directions (Gram-Schmidt over the unit
        // vectors) keep tasks linearly separable for the router regardless
        // of the draw.
        let mut raw: Vec<f64> = (0..dims.1).map(|_| standard_normal(&mut carrier_rng)).collect();
        for prev in &units {
            let dot: f64 = raw.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (r, p) in raw.iter_mut().zip(prev.iter()) {
                *r -= dot * p;
            }
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let unit: Vec<f64> = raw.iter().map(|x| x / norm).collect();
        carriers.push(unit.iter().map(|x| spec.carrier_scale * x).collect());
        units.push(unit);
    }

    let per_task = spec.classes * spec.samples_per_class;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 0xBA7C8));
    let mut all = Vec::new();
    for t in 0..t_count {
        for _ in 0..per_task {
            // Rejection-sample clean tokens whose top-2 readout gap clears
            // the margin, so the added noise rarely flips the label.
            let mut label = 0usize;
            let mut clean = Vec::new();
            for _attempt in 0..1000 {
                clean = carriers[t]
                    .iter()
                    .map(|c| c + standard_normal(&mut rng))
                    .collect();
                let scores = readouts[t].matvec(&clean)?;
                let mut order: Vec<usize> = (0..scores.len()).collect();
                order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
                label = order[0];
                if scores[order[0]] - scores[order[1]] >= spec.min_margin {
                    break;
                }
            }
            let x: Vec<f64> = clean
                .iter()
                .map(|v| v + spec.noise * standard_normal(&mut rng))
                .collect();
            all.push(Sample {
                x,
                label,
                task_id: t,
            });
        }
    }
    let (train, test) = split_80_20(all, per_task);
    Ok(Dataset {
        train,
        test,
        classes: spec.classes,
        target: None,
        reference: readouts,
    })
}

/// Single-task toy classifier over random unit directions spanning the full
/// spectrum (no band structure).
pub fn gen_toy_classify(spec: &TaskSpec) -> Result<Dataset> {
    let dims = spec.resolved_dims()?;
    if spec.classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let cols = dims.1;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 0x70F));
    let mut data = Vec::with_capacity(spec.classes * cols);
    for _ in 0..spec.classes {
        let dir: Vec<f64> = (0..cols).map(|_| standard_normal(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(dir.iter().map(|x| x / norm));
    }
    let disc = RealMatrix::from_vec(spec.classes, cols, data);

    let mut all = Vec::new();
    for c in 0..spec.classes {
        let dir = disc.row(c).to_vec();
        for _ in 0..spec.samples_per_class {
            let x: Vec<f64> = dir
                .iter()
                .map(|d| d + spec.noise * standard_normal(&mut rng))
                .collect();
            all.push(Sample {
                x,
                label: c,
                task_id: 0,
            });
        }
    }
    let (train, test) = split_80_20(all, spec.samples_per_class);
    Ok(Dataset {
        train,
        test,
        classes: spec.classes,
        target: None,
        reference: vec![disc],
    })
}

/// Probe tokens plus the target matrix to fit.
pub fn gen_target_fit(spec: &TaskSpec) -> Result<Dataset> {
    let dims = spec.resolved_dims()?;
    let target = match spec.target_kind {
        TargetKind::Random => {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 0xF17));
            random_matrix(dims, &mut rng)
        }
        TargetKind::Odd => gen_odd_target(dims, spec.seed),
        TargetKind::Even => gen_even_target(dims, spec.seed),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 0x9B0));
    let count = spec.samples_per_class.max(1);
    let all: Vec<Sample> = (0..count)
        .map(|_| Sample {
            x: (0..dims.1).map(|_| standard_normal(&mut rng)).collect(),
            label: 0,
            task_id: 0,
        })
        .collect();
    let (train, test) = split_80_20(all, count);
    Ok(Dataset {
        train,
        test,
        classes: 0,
        target: Some(target),
        reference: Vec::new(),
    })
}

/// Dispatch on the task kind.
pub fn generate(spec: &TaskSpec) -> Result<Dataset> {
    match spec.kind {
        TaskKind::TargetFit => gen_target_fit(spec),
        TaskKind::BandMultitask => gen_band_multitask(spec),
        TaskKind::ToyClassify => gen_toy_classify(spec),
    }
}

/// Accuracy of the generating discriminators themselves: sample `x` of task
/// `t` is classified by `argmax_c (reference[t]·x)_c`.
pub fn reference_accuracy(dataset: &Dataset, samples: &[Sample]) -> Result<f64> {
    if dataset.reference.is_empty() {
        return Err(Error::Parameter(
            "dataset has no generating discriminators".into(),
        ));
    }
    let mut correct = 0usize;
    for s in samples {
        let scores = dataset.reference[s.task_id].matvec(&s.x)?;
        let pred = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{dft2, reflect_index};
    use crate::matrix::FrequencyIndex;

    fn spec(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            dims: Some((16, 16)),
            tasks: 4,
            classes: 4,
            noise: 0.1,
            seed: 3,
            samples_per_class: 30,
            target_kind: TargetKind::Random,
            gen_bandwidth: 0.12,
            gen_bins: None,
            carrier_scale: 2.0,
            min_margin: 0.4,
        }
    }

    #[test]
    fn odd_target_of_trivial_dims_is_zero() {
        let t = gen_odd_target((1, 1), 5);
        assert_eq!(t, RealMatrix::zeros(1, 1));
    }

    #[test]
    fn odd_target_is_exactly_antisymmetric() {
        let t = gen_odd_target((6, 8), 11);
        let refl = circular_reflect(&t);
        for (a, b) in t.data().iter().zip(refl.data().iter()) {
            assert!((a + b).abs() < 1e-15);
        }
        assert_eq!(t.get(0, 0), 0.0);
    }

    #[test]
    fn odd_target_spectrum_is_purely_imaginary() {
        // A real circularly odd matrix has a purely imaginary spectrum:
        // F = −conj(F) pointwise, equivalently F(u,v) = −F(reflect(u,v))
        // given the Hermitian symmetry of any real input.
        let t = gen_odd_target((8, 8), 13);
        let f = dft2(&t.to_complex());
        for u in 0..8 {
            for v in 0..8 {
                let r = reflect_index(FrequencyIndex::new(u, v), (8, 8)).unwrap();
                assert!(f.get(u, v).re.abs() < 1e-9);
                assert!((f.get(u, v) + f.get(r.u, r.v)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_single_task_is_perfectly_separable() {
        let mut s = spec(TaskKind::BandMultitask);
        s.tasks = 1;
        s.noise = 0.0;
        let ds = gen_band_multitask(&s).unwrap();
        let acc = reference_accuracy(&ds, &ds.train).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn reference_classifier_stays_accurate_under_default_noise() {
        let ds = gen_band_multitask(&spec(TaskKind::BandMultitask)).unwrap();
        let acc = reference_accuracy(&ds, &ds.test).unwrap();
        assert!(acc >= 0.95, "reference accuracy {acc}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(TaskKind::BandMultitask)).unwrap();
        let b = generate(&spec(TaskKind::BandMultitask)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn split_is_80_20_per_class() {
        let ds = generate(&spec(TaskKind::ToyClassify)).unwrap();
        // toy task: T=1; 4 classes x 30 samples, 24 train + 6 test each.
        assert_eq!(ds.train.len(), 4 * 24);
        assert_eq!(ds.test.len(), 4 * 6);
    }

    #[test]
    fn projections_are_complementary_and_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let m = random_matrix((5, 7), &mut rng);
        let e = even_projection(&m);
        let o = odd_projection(&m);
        for i in 0..m.data().len() {
            assert!((e.data()[i] + o.data()[i] - m.data()[i]).abs() < 1e-12);
        }
        let ee = even_projection(&e);
        for (a, b) in ee.data().iter().zip(e.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Even and odd parts are orthogonal.
        let dot: f64 = e.data().iter().zip(o.data().iter()).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-10);
    }

    #[test]
    fn target_fit_dataset_carries_target_and_probes() {
        let mut s = spec(TaskKind::TargetFit);
        s.target_kind = TargetKind::Odd;
        let ds = generate(&s).unwrap();
        assert!(ds.target.is_some());
        assert_eq!(ds.classes, 0);
        assert!(!ds.train.is_empty());
        let t = ds.target.unwrap();
        let refl = circular_reflect(&t);
        for (a, b) in t.data().iter().zip(refl.data().iter()) {
            assert!((a + b).abs() < 1e-15);
        }
    }
}
