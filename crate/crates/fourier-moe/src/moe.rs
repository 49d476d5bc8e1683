//! The adapted linear layer: a frozen base matrix plus the gated, scaled sum
//! of reconstructed expert updates. Active experts are reconstructed once
//! per forward call and shared across every token routed to them; per-token
//! outputs apply `ΔW_i·x` directly so no per-token dense update matrix is
//! ever materialized.

use crate::baselines::{LowRankExpert, UnsymmetricExpert};
use crate::error::{Error, Result};
use crate::experts::SpectralExpert;
use crate::matrix::RealMatrix;
use crate::parallel;
use crate::rank::numerical_rank;
use crate::router::{gate, Router, RoutingDecision};
use crate::spectral::dft2;
use std::collections::BTreeMap;

/// Any of the supported expert parameterizations behind one interface.
#[derive(Debug, Clone)]
pub enum ExpertParams {
    Spectral(SpectralExpert),
    Unsymmetric(UnsymmetricExpert),
    LowRank(LowRankExpert),
}

impl ExpertParams {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ExpertParams::Spectral(e) => e.dims(),
            ExpertParams::Unsymmetric(e) => e.dims(),
            ExpertParams::LowRank(e) => e.dims(),
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            ExpertParams::Spectral(e) => e.param_len(),
            ExpertParams::Unsymmetric(e) => e.param_len(),
            ExpertParams::LowRank(e) => e.param_len(),
        }
    }

    /// Spatial update and, for the unsymmetric variant, the imaginary energy
    /// discarded by truncation (zero for the lossless parameterizations).
    pub fn reconstruct_with_truncation(&self) -> (RealMatrix, f64) {
        match self {
            ExpertParams::Spectral(e) => (e.reconstruct(), 0.0),
            ExpertParams::Unsymmetric(e) => e.reconstruct_with_truncation(),
            ExpertParams::LowRank(e) => (e.reconstruct(), 0.0),
        }
    }

    pub fn reconstruct(&self) -> RealMatrix {
        self.reconstruct_with_truncation().0
    }

    /// Upper bound on the rank of the reconstructed update.
    pub fn rank_capacity(&self) -> usize {
        let (rows, cols) = self.dims();
        let cap = match self {
            ExpertParams::Spectral(e) => e.support_len(),
            ExpertParams::Unsymmetric(e) => 2 * e.bins().len(),
            ExpertParams::LowRank(e) => e.rank(),
        };
        cap.min(rows).min(cols)
    }

    /// Symmetric support size |Ω| for spectral kinds.
    pub fn support_len(&self) -> Option<usize> {
        match self {
            ExpertParams::Spectral(e) => Some(e.support_len()),
            ExpertParams::Unsymmetric(e) => Some(e.bins().len()),
            ExpertParams::LowRank(_) => None,
        }
    }

    pub fn pack_params(&self, out: &mut Vec<f64>) {
        match self {
            ExpertParams::Spectral(e) => e.pack_params(out),
            ExpertParams::Unsymmetric(e) => e.pack_params(out),
            ExpertParams::LowRank(e) => e.pack_params(out),
        }
    }

    pub fn unpack_params(&mut self, src: &[f64]) -> usize {
        match self {
            ExpertParams::Spectral(e) => e.unpack_params(src),
            ExpertParams::Unsymmetric(e) => e.unpack_params(src),
            ExpertParams::LowRank(e) => e.unpack_params(src),
        }
    }

    /// Gradients w.r.t. trainable scalars given the spatial gradient
    /// `G = ∂L/∂ΔW` accumulated for this expert.
    pub fn grad_params(&self, g: &RealMatrix, out: &mut Vec<f64>) {
        match self {
            ExpertParams::Spectral(e) => {
                let g_hat = dft2(&g.to_complex());
                e.grad_params(&g_hat, out);
            }
            ExpertParams::Unsymmetric(e) => {
                let g_hat = dft2(&g.to_complex());
                e.grad_params(&g_hat, out);
            }
            ExpertParams::LowRank(e) => e.grad_params(g, out),
        }
    }
}

/// One adapted layer: frozen base `W₀`, an expert ensemble, a router, and
/// the scaling factor η.
#[derive(Debug, Clone)]
pub struct AdapterSite {
    base: RealMatrix,
    experts: Vec<ExpertParams>,
    router: Router,
    eta: f64,
}

impl AdapterSite {
    pub fn new(
        base: RealMatrix,
        experts: Vec<ExpertParams>,
        router: Router,
        eta: f64,
    ) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Parameter("site needs at least one expert".into()));
        }
        let dims = base.dims();
        if experts.iter().any(|e| e.dims() != dims) {
            return Err(Error::Dimension(
                "expert dims must equal base dims".into(),
            ));
        }
        if router.num_experts() != experts.len() {
            return Err(Error::Dimension(format!(
                "router covers {} experts, site has {}",
                router.num_experts(),
                experts.len()
            )));
        }
        if router.input_dim() != dims.1 {
            return Err(Error::Dimension(format!(
                "router input dim {} must equal layer input dim {}",
                router.input_dim(),
                dims.1
            )));
        }
        if !base.is_finite() {
            return Err(Error::NonFinite("base matrix".into()));
        }
        if !eta.is_finite() {
            return Err(Error::NonFinite("eta".into()));
        }
        Ok(Self {
            base,
            experts,
            router,
            eta,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.base.dims()
    }

    pub fn base(&self) -> &RealMatrix {
        &self.base
    }

    pub fn experts(&self) -> &[ExpertParams] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [ExpertParams] {
        &mut self.experts
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn router_mut(&mut self) -> &mut Router {
        &mut self.router
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// Everything one forward call produced: outputs, routing decisions, the
/// per-expert reconstruction cache (exactly the experts active for at least
/// one token), and the summed truncation error of unsymmetric experts.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub outputs: Vec<Vec<f64>>,
    pub decisions: Vec<RoutingDecision>,
    pub reconstructions: BTreeMap<usize, RealMatrix>,
    pub truncation_error: f64,
}

impl ForwardTrace {
    /// Number of expert reconstructions this forward performed.
    pub fn reconstruction_count(&self) -> usize {
        self.reconstructions.len()
    }
}

/// Routes each token, reconstructs each active expert exactly once, and
/// computes `h = W₀x + η·Σ_{i∈S(x)} g_i·(ΔW_i x)` per token.
pub fn forward(batch: &[Vec<f64>], site: &AdapterSite) -> Result<ForwardTrace> {
    let (_, cols) = site.dims();
    for x in batch {
        if x.len() != cols {
            return Err(Error::Dimension(format!(
                "token length {} does not match layer input dim {cols}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward input".into()));
        }
    }

    let decisions: Vec<RoutingDecision> = {
        let results = parallel::map_slice(batch, |x| gate(x, site.router()));
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            out.push(r?);
        }
        out
    };

    let mut active: Vec<usize> = decisions
        .iter()
        .flat_map(|d| d.selected.iter().copied())
        .collect();
    active.sort_unstable();
    active.dedup();

    let recon_list = parallel::map_slice(&active, |&i| site.experts()[i].reconstruct_with_truncation());
    let mut reconstructions = BTreeMap::new();
    let mut truncation = 0.0;
    for (&i, (dw, t)) in active.iter().zip(recon_list.into_iter()) {
        truncation += t;
        reconstructions.insert(i, dw);
    }

    let outputs: Vec<Vec<f64>> = {
        let results = parallel::map_indexed(batch.len(), |b| -> Result<Vec<f64>> {
            let x = &batch[b];
            let mut y = site.base().matvec(x)?;
            let d = &decisions[b];
            for (&i, &g) in d.selected.iter().zip(d.gates.iter()) {
                let dw = &reconstructions[&i];
                let contrib = dw.matvec(x)?;
                for (acc, c) in y.iter_mut().zip(contrib.iter()) {
                    *acc += site.eta() * g * c;
                }
            }
            Ok(y)
        });
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            out.push(r?);
        }
        out
    };

    Ok(ForwardTrace {
        outputs,
        decisions,
        reconstructions,
        truncation_error: truncation,
    })
}

/// Per-token effective update `ΔW = Σ_{i∈S(x)} g_i·ΔW_i`, summed over the
/// selected experts in ascending index order.
pub fn composite_update(
    decision: &RoutingDecision,
    site: &AdapterSite,
    cache: &BTreeMap<usize, RealMatrix>,
) -> RealMatrix {
    let (rows, cols) = site.dims();
    let mut out = RealMatrix::zeros(rows, cols);
    for (&i, &g) in decision.selected.iter().zip(decision.gates.iter()) {
        match cache.get(&i) {
            Some(dw) => out.add_scaled(g, dw),
            None => out.add_scaled(g, &site.experts()[i].reconstruct()),
        }
    }
    out
}

/// Trainable-scalar accounting for one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub expert_scalars: usize,
    pub router_scalars: usize,
    pub total: usize,
}

/// Counts trainable scalars by enumerating the stored parameters:
/// `Σ_i (2·pairs_i + self_i)` for the experts plus `Z·N` for the router.
pub fn param_count(site: &AdapterSite) -> ParamCount {
    let expert_scalars: usize = site.experts().iter().map(|e| e.param_len()).sum();
    let router_scalars = site.router().phi().rows() * site.router().phi().cols();
    ParamCount {
        expert_scalars,
        router_scalars,
        total: expert_scalars + router_scalars,
    }
}

/// Numerical rank of the composite update a token receives; bounded by the
/// summed support of its selected experts.
pub fn effective_rank(
    decision: &RoutingDecision,
    site: &AdapterSite,
    cache: &BTreeMap<usize, RealMatrix>,
) -> Result<usize> {
    numerical_rank(&composite_update(decision, site, cache), 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{
        default_centers, init_expert, BandParams, CoeffMode, IndexBias, InitPolicy,
    };
    use crate::spectral::{hermitian_embed, idft2_naive};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn small_site(eta: f64, init: InitPolicy, seed: u64) -> AdapterSite {
        let dims = (6, 6);
        let z = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let base = RealMatrix::from_vec(
            dims.0,
            dims.1,
            (0..dims.0 * dims.1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let experts: Vec<ExpertParams> = default_centers(z)
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                ExpertParams::Spectral(
                    init_expert(
                        dims,
                        8,
                        IndexBias::Band(BandParams::new(c, 0.25).unwrap()),
                        init,
                        CoeffMode::Complex,
                        seed + i as u64,
                    )
                    .unwrap(),
                )
            })
            .collect();
        let phi = RealMatrix::from_vec(
            z,
            dims.1,
            (0..z * dims.1).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        );
        AdapterSite::new(base, experts, Router::new(phi, 2).unwrap(), eta).unwrap()
    }

    fn random_batch(b: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..b)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_coefficients_make_forward_equal_base() {
        let site = small_site(7.0, InitPolicy::Zero, 1);
        let batch = random_batch(5, 6, 2);
        let trace = forward(&batch, &site).unwrap();
        for (x, y) in batch.iter().zip(trace.outputs.iter()) {
            let base = site.base().matvec(x).unwrap();
            for (a, b) in y.iter().zip(base.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn zero_eta_makes_forward_equal_base() {
        let site = small_site(0.0, InitPolicy::Gaussian { sigma: 0.5 }, 3);
        let batch = random_batch(4, 6, 4);
        let trace = forward(&batch, &site).unwrap();
        for (x, y) in batch.iter().zip(trace.outputs.iter()) {
            let base = site.base().matvec(x).unwrap();
            for (a, b) in y.iter().zip(base.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_matches_dense_recomputation() {
        let site = small_site(3.0, InitPolicy::Gaussian { sigma: 0.4 }, 5);
        let batch = random_batch(6, 6, 6);
        let trace = forward(&batch, &site).unwrap();
        for (b, x) in batch.iter().enumerate() {
            // Independent dense path: embed -> naive IDFT -> explicit sums.
            let d = &trace.decisions[b];
            let mut y = site.base().matvec(x).unwrap();
            for (&i, &g) in d.selected.iter().zip(d.gates.iter()) {
                let e = match &site.experts()[i] {
                    ExpertParams::Spectral(e) => e,
                    _ => unreachable!(),
                };
                let dw = idft2_naive(&hermitian_embed(e.coeffs())).real_part();
                let contrib = dw.matvec(x).unwrap();
                for (acc, c) in y.iter_mut().zip(contrib.iter()) {
                    *acc += site.eta() * g * c;
                }
            }
            for (a, bb) in trace.outputs[b].iter().zip(y.iter()) {
                assert!((a - bb).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let site = small_site(1.0, InitPolicy::Zero, 7);
        assert!(forward(&[vec![1.0; 5]], &site).is_err());
        assert!(forward(&[vec![f64::INFINITY; 6]], &site).is_err());
    }

    #[test]
    fn reconstruction_cache_covers_exactly_active_experts() {
        let site = small_site(1.0, InitPolicy::Gaussian { sigma: 0.3 }, 8);
        let batch = random_batch(16, 6, 9);
        let trace = forward(&batch, &site).unwrap();
        let mut active: Vec<usize> = trace
            .decisions
            .iter()
            .flat_map(|d| d.selected.iter().copied())
            .collect();
        active.sort_unstable();
        active.dedup();
        let cached: Vec<usize> = trace.reconstructions.keys().copied().collect();
        assert_eq!(cached, active);
        assert!(trace.reconstruction_count() <= site.num_experts());
        assert!(trace.reconstruction_count() < batch.len() * site.router().k());
    }

    #[test]
    fn output_is_linear_in_eta() {
        let base_site = small_site(0.0, InitPolicy::Gaussian { sigma: 0.4 }, 10);
        let batch = random_batch(4, 6, 11);
        let out0 = forward(&batch, &base_site).unwrap().outputs;

        let mut site1 = base_site.clone();
        site1.eta = 2.0;
        let out1 = forward(&batch, &site1).unwrap().outputs;

        let mut site2 = base_site;
        site2.eta = 4.0;
        let out2 = forward(&batch, &site2).unwrap().outputs;

        for b in 0..batch.len() {
            for m in 0..out0[b].len() {
                let d1 = out1[b][m] - out0[b][m];
                let d2 = out2[b][m] - out0[b][m];
                assert!((d2 - 2.0 * d1).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn composite_update_examples() {
        let site = small_site(1.0, InitPolicy::Gaussian { sigma: 0.4 }, 12);
        let cache: BTreeMap<usize, RealMatrix> = (0..site.num_experts())
            .map(|i| (i, site.experts()[i].reconstruct()))
            .collect();

        let zero_gates = RoutingDecision {
            probs: vec![0.5, 0.3, 0.2],
            selected: vec![0, 1],
            gates: vec![0.0, 0.0],
        };
        assert_eq!(
            composite_update(&zero_gates, &site, &cache),
            RealMatrix::zeros(6, 6)
        );

        let single = RoutingDecision {
            probs: vec![1.0, 0.0, 0.0],
            selected: vec![1],
            gates: vec![1.0],
        };
        assert_eq!(composite_update(&single, &site, &cache), cache[&1]);

        let two = RoutingDecision {
            probs: vec![0.6, 0.4, 0.0],
            selected: vec![0, 2],
            gates: vec![0.6, 0.4],
        };
        let got = composite_update(&two, &site, &cache);
        for r in 0..6 {
            for c in 0..6 {
                let want = 0.6 * cache[&0].get(r, c) + 0.4 * cache[&2].get(r, c);
                assert!((got.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_count_enumerates_stored_scalars() {
        // Z=1, one pair (n=2), N=4 -> (2, 4, 6).
        let dims = (4, 4);
        let support = crate::experts::SampledSupport {
            pairs: vec![crate::matrix::FrequencyIndex::new(0, 1)],
            self_conjugate: vec![],
        };
        let expert = ExpertParams::Spectral(
            crate::experts::expert_from_support(dims, &support, CoeffMode::Complex).unwrap(),
        );
        let site = AdapterSite::new(
            RealMatrix::zeros(4, 4),
            vec![expert],
            Router::new(RealMatrix::zeros(1, 4), 1).unwrap(),
            1.0,
        )
        .unwrap();
        let pc = param_count(&site);
        assert_eq!(pc.expert_scalars, 2);
        assert_eq!(pc.router_scalars, 4);
        assert_eq!(pc.total, 6);
    }

    #[test]
    fn effective_rank_respects_support_bound() {
        let site = small_site(1.0, InitPolicy::Gaussian { sigma: 0.5 }, 13);
        let batch = random_batch(10, 6, 14);
        let trace = forward(&batch, &site).unwrap();
        for d in &trace.decisions {
            let bound: usize = d
                .selected
                .iter()
                .map(|&i| site.experts()[i].support_len().unwrap())
                .sum();
            let rank = effective_rank(d, &site, &trace.reconstructions).unwrap();
            assert!(rank <= bound.min(6));
        }
    }
}
