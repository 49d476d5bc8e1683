//! Frequency-adaptive gating: per-token expert scores, top-k selection, and
//! the load-balancing auxiliary loss.

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;

/// Linear gating map: logits = phi · x, softmaxed into expert probabilities.
/// No bias term.
#[derive(Debug, Clone)]
pub struct Router {
    phi: RealMatrix, // (Z, d_in)
    k: usize,
    renormalize: bool,
}

impl Router {
    pub fn new(phi: RealMatrix, k: usize) -> Result<Self> {
        Self::with_options(phi, k, false)
    }

    /// `renormalize` rescales the selected gates to sum to one; default off,
    /// matching the use of raw softmax probabilities in the forward pass.
    pub fn with_options(phi: RealMatrix, k: usize, renormalize: bool) -> Result<Self> {
        let z = phi.rows();
        if k < 1 || k > z {
            return Err(Error::Parameter(format!(
                "k must satisfy 1 <= k <= Z, got k={k}, Z={z}"
            )));
        }
        if !phi.is_finite() {
            return Err(Error::NonFinite("router weights".into()));
        }
        Ok(Self {
            phi,
            k,
            renormalize,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.phi.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn renormalize(&self) -> bool {
        self.renormalize
    }

    pub fn phi(&self) -> &RealMatrix {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut RealMatrix {
        &mut self.phi
    }
}

/// Per-token routing outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    /// Softmax probabilities over all Z experts.
    pub probs: Vec<f64>,
    /// Indices of the k selected experts, ascending.
    pub selected: Vec<usize>,
    /// Gate values for the selected experts, aligned with `selected`.
    pub gates: Vec<f64>,
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Top-k indices by probability, ties broken by smaller index first;
/// returned in ascending index order.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Stable sort by descending probability keeps the smaller index first
    // among ties.
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
    let mut selected: Vec<usize> = order.into_iter().take(k).collect();
    selected.sort_unstable();
    selected
}

/// Routes one token: logits, stable softmax, deterministic top-k.
pub fn gate(x: &[f64], router: &Router) -> Result<RoutingDecision> {
    if x.len() != router.input_dim() {
        return Err(Error::Dimension(format!(
            "router expects input of length {}, got {}",
            router.input_dim(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("router input".into()));
    }
    let logits = router.phi.matvec(x)?;
    let probs = softmax(&logits);
    let selected = top_k_indices(&probs, router.k);
    let mut gates: Vec<f64> = selected.iter().map(|&i| probs[i]).collect();
    if router.renormalize {
        let sum: f64 = gates.iter().sum();
        for g in gates.iter_mut() {
            *g /= sum;
        }
    }
    Ok(RoutingDecision {
        probs,
        selected,
        gates,
    })
}

/// Load-balancing loss `Z · Σ_i f_i · P_i` with `f_i` the fraction of tokens
/// whose top-k set contains expert `i` and `P_i` the mean routing
/// probability of expert `i` over the batch. Reduces in token order.
pub fn load_balance_loss(decisions: &[RoutingDecision], z: usize) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Parameter("load_balance_loss needs a non-empty batch".into()));
    }
    let b = decisions.len() as f64;
    let mut f = vec![0.0; z];
    let mut p = vec![0.0; z];
    for d in decisions {
        if d.probs.len() != z {
            return Err(Error::Dimension(format!(
                "decision has {} experts, expected {z}",
                d.probs.len()
            )));
        }
        for &i in &d.selected {
            f[i] += 1.0;
        }
        for (acc, pr) in p.iter_mut().zip(d.probs.iter()) {
            *acc += pr;
        }
    }
    for v in f.iter_mut() {
        *v /= b;
    }
    for v in p.iter_mut() {
        *v /= b;
    }
    Ok(z as f64 * f.iter().zip(p.iter()).map(|(a, c)| a * c).sum::<f64>())
}

/// Assignment fractions `f_i` of a batch of decisions.
pub fn assignment_fractions(decisions: &[RoutingDecision], z: usize) -> Vec<f64> {
    let mut f = vec![0.0; z];
    for d in decisions {
        for &i in &d.selected {
            f[i] += 1.0;
        }
    }
    let b = decisions.len().max(1) as f64;
    for v in f.iter_mut() {
        *v /= b;
    }
    f
}
