//! A small trainable stack: one or more adapter sites chained with tanh
//! activations in between, topped by an optional linear task head. Gradients
//! are computed analytically for every trainable scalar (expert
//! coefficients, router weights, head) with the discrete top-k selection
//! treated as constant; everything smooth follows the exact chain rule, so
//! central finite differences agree to first order everywhere away from a
//! selection boundary.

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::moe::{self, AdapterSite, ForwardTrace};
use crate::router::{assignment_fractions, softmax};
use std::ops::Range;

/// Linear task head `logits = W·h + b`.
#[derive(Debug, Clone)]
pub struct Head {
    weight: RealMatrix, // (classes, hidden)
    bias: Vec<f64>,
}

impl Head {
    pub fn new(weight: RealMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(
                "head bias length must equal class count".into(),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &RealMatrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weight.matvec(h)?;
        for (o, b) in out.iter_mut().zip(self.bias.iter()) {
            *o += b;
        }
        Ok(out)
    }

    pub fn param_len(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }
}

/// Adapter sites plus optional head.
#[derive(Debug, Clone)]
pub struct Model {
    sites: Vec<AdapterSite>,
    head: Option<Head>,
}

/// What the loss reads off the top of the stack.
pub enum Objective<'a> {
    /// Mean cross-entropy of head logits against integer labels.
    Classify { labels: &'a [usize] },
    /// Mean over tokens of `‖η·ΔW_comp(x) − T‖²_F / (MN)` at the single site.
    TargetFit { target: &'a RealMatrix },
}

/// Loss components: `total = task + lambda·aux`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub aux: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Cached activations of one full forward pass.
pub struct ModelTrace {
    /// Input tokens of each site (index 0 holds the raw batch; later entries
    /// hold the tanh-activated outputs of the previous site).
    pub site_inputs: Vec<Vec<Vec<f64>>>,
    pub site_traces: Vec<ForwardTrace>,
    /// Final site outputs (no activation).
    pub hidden: Vec<Vec<f64>>,
    pub logits: Option<Vec<Vec<f64>>>,
    /// Per-token composite updates, kept only for the target-fit objective.
    pub composites: Option<Vec<RealMatrix>>,
}

/// Which component a flat-parameter segment belongs to, for per-group
/// learning rates and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Expert,
    Router,
    Head,
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub group: ParamGroup,
    pub label: String,
    pub range: Range<usize>,
}

impl Model {
    pub fn new(sites: Vec<AdapterSite>, head: Option<Head>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Parameter("model needs at least one site".into()));
        }
        for w in sites.windows(2) {
            if w[0].dims().0 != w[1].dims().1 {
                return Err(Error::Dimension(format!(
                    "site output dim {} does not feed site input dim {}",
                    w[0].dims().0,
                    w[1].dims().1
                )));
            }
        }
        if let Some(h) = &head {
            let last = sites.last().unwrap().dims().0;
            if h.hidden() != last {
                return Err(Error::Dimension(format!(
                    "head expects hidden dim {}, last site outputs {last}",
                    h.hidden()
                )));
            }
        }
        Ok(Self { sites, head })
    }

    pub fn sites(&self) -> &[AdapterSite] {
        &self.sites
    }

    pub fn sites_mut(&mut self) -> &mut [AdapterSite] {
        &mut self.sites
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.sites[0].dims().1
    }

    /// Flat-parameter layout in canonical order: per site its experts
    /// (ascending) then its router, and finally the head.
    pub fn layout(&self) -> Vec<Segment> {
        let mut segments = Vec::new();
        let mut offset = 0usize;
        for (s, site) in self.sites.iter().enumerate() {
            for (i, e) in site.experts().iter().enumerate() {
                let len = e.param_len();
                segments.push(Segment {
                    group: ParamGroup::Expert,
                    label: format!("site{s}.expert{i}"),
                    range: offset..offset + len,
                });
                offset += len;
            }
            let len = site.router().phi().data().len();
            segments.push(Segment {
                group: ParamGroup::Router,
                label: format!("site{s}.router"),
                range: offset..offset + len,
            });
            offset += len;
        }
        if let Some(h) = &self.head {
            let len = h.param_len();
            segments.push(Segment {
                group: ParamGroup::Head,
                label: "head".into(),
                range: offset..offset + len,
            });
        }
        segments
    }

    pub fn num_params(&self) -> usize {
        self.layout().last().map(|s| s.range.end).unwrap_or(0)
    }

    /// All trainable scalars in canonical order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for site in &self.sites {
            for e in site.experts() {
                e.pack_params(&mut out);
            }
            out.extend_from_slice(site.router().phi().data());
        }
        if let Some(h) = &self.head {
            out.extend_from_slice(h.weight.data());
            out.extend_from_slice(&h.bias);
        }
        out
    }

    /// Writes scalars back in the [`Self::flatten_params`] order.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Parameter(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut k = 0usize;
        for site in self.sites.iter_mut() {
            for e in site.experts_mut() {
                k += e.unpack_params(&flat[k..]);
            }
            let phi = site.router_mut().phi_mut();
            let len = phi.data().len();
            phi.data_mut().copy_from_slice(&flat[k..k + len]);
            k += len;
        }
        if let Some(h) = &mut self.head {
            let len = h.weight.data().len();
            h.weight.data_mut().copy_from_slice(&flat[k..k + len]);
            k += len;
            let blen = h.bias.len();
            h.bias.copy_from_slice(&flat[k..k + blen]);
            k += blen;
        }
        debug_assert_eq!(k, flat.len());
        Ok(())
    }

    /// Full forward pass. `keep_composites` additionally materializes each
    /// token's composite update (needed by the target-fit objective).
    pub fn forward(&self, inputs: &[Vec<f64>], keep_composites: bool) -> Result<ModelTrace> {
        if inputs.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let mut a: Vec<Vec<f64>> = inputs.to_vec();
        let mut site_inputs = Vec::with_capacity(self.sites.len());
        let mut site_traces = Vec::with_capacity(self.sites.len());
        let last = self.sites.len() - 1;
        for (s, site) in self.sites.iter().enumerate() {
            site_inputs.push(a.clone());
            let trace = moe::forward(&a, site)?;
            a = if s == last {
                trace.outputs.clone()
            } else {
                trace
                    .outputs
                    .iter()
                    .map(|row| row.iter().map(|x| x.tanh()).collect())
                    .collect()
            };
            site_traces.push(trace);
        }
        let hidden = a;
        let logits = match &self.head {
            Some(h) => {
                let mut all = Vec::with_capacity(hidden.len());
                for row in &hidden {
                    all.push(h.forward(row)?);
                }
                Some(all)
            }
            None => None,
        };
        let composites = if keep_composites {
            let site = &self.sites[0];
            let tr = &site_traces[0];
            Some(
                tr.decisions
                    .iter()
                    .map(|d| moe::composite_update(d, site, &tr.reconstructions))
                    .collect(),
            )
        } else {
            None
        };
        Ok(ModelTrace {
            site_inputs,
            site_traces,
            hidden,
            logits,
            composites,
        })
    }

    /// Forward plus loss under the composite objective
    /// `task + lambda·mean_site(load_balance)`.
    pub fn loss(
        &self,
        inputs: &[Vec<f64>],
        objective: &Objective,
        lambda: f64,
    ) -> Result<(LossBreakdown, ModelTrace)> {
        if lambda < 0.0 {
            return Err(Error::Parameter("lambda must be >= 0".into()));
        }
        let keep = matches!(objective, Objective::TargetFit { .. });
        if keep && self.sites.len() != 1 {
            return Err(Error::Parameter(
                "target-fit objective requires a single-site model".into(),
            ));
        }
        let trace = self.forward(inputs, keep)?;
        let b = inputs.len() as f64;

        let task = match objective {
            Objective::Classify { labels } => {
                let logits = trace
                    .logits
                    .as_ref()
                    .ok_or_else(|| Error::Parameter("classification requires a head".into()))?;
                if labels.len() != inputs.len() {
                    return Err(Error::Dimension("labels/batch length mismatch".into()));
                }
                let mut sum = 0.0;
                for (row, &label) in logits.iter().zip(labels.iter()) {
                    if label >= row.len() {
                        return Err(Error::Parameter(format!(
                            "label {label} out of range for {} classes",
                            row.len()
                        )));
                    }
                    let p = softmax(row);
                    sum += -(p[label].max(f64::MIN_POSITIVE)).ln();
                }
                sum / b
            }
            Objective::TargetFit { target } => {
                let site = &self.sites[0];
                if target.dims() != site.dims() {
                    return Err(Error::Dimension("target dims must match site dims".into()));
                }
                let eta = site.eta();
                let mn = (target.rows() * target.cols()) as f64;
                let composites = trace.composites.as_ref().unwrap();
                let mut sum = 0.0;
                for comp in composites {
                    let mut sq = 0.0;
                    for (c, t) in comp.data().iter().zip(target.data().iter()) {
                        let r = eta * c - t;
                        sq += r * r;
                    }
                    sum += sq / mn;
                }
                sum / b
            }
        };

        let mut aux = 0.0;
        for (site, tr) in self.sites.iter().zip(trace.site_traces.iter()) {
            aux += crate::router::load_balance_loss(&tr.decisions, site.num_experts())?;
        }
        aux /= self.sites.len() as f64;

        Ok((
            LossBreakdown {
                task,
                aux,
                lambda,
                total: task + lambda * aux,
            },
            trace,
        ))
    }

    /// Analytic gradients of the composite loss w.r.t. every trainable
    /// scalar, in flat canonical order. `trace` must come from the same
    /// inputs (reuse the one returned by [`Self::loss`]).
    pub fn backward(
        &self,
        inputs: &[Vec<f64>],
        objective: &Objective,
        lambda: f64,
        trace: &ModelTrace,
    ) -> Result<Vec<f64>> {
        let b = inputs.len();
        let bf = b as f64;
        let num_sites = self.sites.len();

        // Top-of-stack gradients.
        let mut d_hidden: Vec<Vec<f64>> = vec![vec![0.0; self.sites.last().unwrap().dims().0]; b];
        let mut head_w_grad: Option<RealMatrix> = None;
        let mut head_b_grad: Option<Vec<f64>> = None;
        let mut dcomp: Option<Vec<RealMatrix>> = None;

        match objective {
            Objective::Classify { labels } => {
                let h = self
                    .head
                    .as_ref()
                    .ok_or_else(|| Error::Parameter("classification requires a head".into()))?;
                let logits = trace.logits.as_ref().unwrap();
                let mut wg = RealMatrix::zeros(h.weight.rows(), h.weight.cols());
                let mut bg = vec![0.0; h.bias.len()];
                for (bi, (row, &label)) in logits.iter().zip(labels.iter()).enumerate() {
                    let p = softmax(row);
                    let dlogit: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(c, &pc)| (pc - if c == label { 1.0 } else { 0.0 }) / bf)
                        .collect();
                    wg.add_outer(1.0, &dlogit, &trace.hidden[bi]);
                    for (acc, d) in bg.iter_mut().zip(dlogit.iter()) {
                        *acc += d;
                    }
                    d_hidden[bi] = h.weight.matvec_transpose(&dlogit)?;
                }
                head_w_grad = Some(wg);
                head_b_grad = Some(bg);
            }
            Objective::TargetFit { target } => {
                let site = &self.sites[0];
                let eta = site.eta();
                let mn = (target.rows() * target.cols()) as f64;
                let composites = trace.composites.as_ref().ok_or_else(|| {
                    Error::Parameter("target-fit backward needs composites in the trace".into())
                })?;
                let mut per_token = Vec::with_capacity(b);
                for comp in composites {
                    // d task / d ΔW_comp = (2η/(B·MN))·(η·ΔW_comp − T)
                    let mut g = RealMatrix::zeros(target.rows(), target.cols());
                    let scale = 2.0 * eta / (bf * mn);
                    for ((out, c), t) in
                        g.data_mut().iter_mut().zip(comp.data()).zip(target.data())
                    {
                        *out = scale * (eta * c - t);
                    }
                    per_token.push(g);
                }
                dcomp = Some(per_token);
            }
        }

        // Walk sites in reverse, producing per-site structured grads.
        struct SiteGrads {
            experts: Vec<Option<RealMatrix>>,
            phi: RealMatrix,
        }
        let mut per_site: Vec<Option<SiteGrads>> = (0..num_sites).map(|_| None).collect();
        let mut da = d_hidden;

        for s in (0..num_sites).rev() {
            let site = &self.sites[s];
            let tr = &trace.site_traces[s];
            let xin = &trace.site_inputs[s];
            let (rows, cols) = site.dims();
            let z = site.num_experts();
            let eta = site.eta();
            let is_last = s + 1 == num_sites;

            // Upstream gradient on this site's raw output z_s.
            let dz: Vec<Vec<f64>> = if is_last {
                std::mem::take(&mut da)
            } else {
                // a_{s+1} = tanh(z_s) was stored as the next site's input.
                let act = &trace.site_inputs[s + 1];
                da.iter()
                    .zip(act.iter())
                    .map(|(dv, av)| {
                        dv.iter()
                            .zip(av.iter())
                            .map(|(d, a)| d * (1.0 - a * a))
                            .collect()
                    })
                    .collect()
            };

            let f = assignment_fractions(&tr.decisions, z);
            let aux_scale = lambda * z as f64 / (bf * num_sites as f64);

            let mut grads = SiteGrads {
                experts: (0..z).map(|_| None).collect(),
                phi: RealMatrix::zeros(z, cols),
            };
            let mut dx: Vec<Vec<f64>> = vec![vec![0.0; cols]; b];

            for bi in 0..b {
                let x = &xin[bi];
                let d = &tr.decisions[bi];
                let dz_b = &dz[bi];

                // Gradient w.r.t. the gates actually used in the forward pass.
                let mut gamma = vec![0.0; z];
                for (&i, &g) in d.selected.iter().zip(d.gates.iter()) {
                    let dw = &tr.reconstructions[&i];
                    let gi = grads.experts[i]
                        .get_or_insert_with(|| RealMatrix::zeros(rows, cols));
                    gi.add_outer(eta * g, dz_b, x);
                    let wx = dw.matvec(x)?;
                    let mut gval = eta
                        * dz_b
                            .iter()
                            .zip(wx.iter())
                            .map(|(a, c)| a * c)
                            .sum::<f64>();
                    if let Some(dc) = &dcomp {
                        debug_assert_eq!(s, 0);
                        gi.add_scaled(g, &dc[bi]);
                        gval += dc[bi]
                            .data()
                            .iter()
                            .zip(dw.data().iter())
                            .map(|(a, c)| a * c)
                            .sum::<f64>();
                    }
                    gamma[i] = gval;
                    // Expert path into the input.
                    let wt = dw.matvec_transpose(dz_b)?;
                    for (acc, v) in dx[bi].iter_mut().zip(wt.iter()) {
                        *acc += eta * g * v;
                    }
                }

                // Base path into the input.
                let base_t = site.base().matvec_transpose(dz_b)?;
                for (acc, v) in dx[bi].iter_mut().zip(base_t.iter()) {
                    *acc += v;
                }

                // dL/dp: task path through the selected gates plus the aux
                // load-balance path through every P_i.
                let p = &d.probs;
                let mut v = vec![0.0; z];
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi = aux_scale * f[i];
                }
                if site.router().renormalize() {
                    let t: f64 = d.selected.iter().map(|&i| p[i]).sum();
                    let inner: f64 = d
                        .selected
                        .iter()
                        .zip(d.gates.iter())
                        .map(|(&i, &g)| gamma[i] * g)
                        .sum();
                    for &i in &d.selected {
                        v[i] += (gamma[i] - inner) / t;
                    }
                } else {
                    for &i in &d.selected {
                        v[i] += gamma[i];
                    }
                }

                // Softmax backward: dℓ_j = p_j·(v_j − Σ_i v_i·p_i).
                let inner: f64 = v.iter().zip(p.iter()).map(|(a, c)| a * c).sum();
                let dl: Vec<f64> = p.iter().zip(v.iter()).map(|(pj, vj)| pj * (vj - inner)).collect();
                grads.phi.add_outer(1.0, &dl, x);
                // Router path into the input.
                let phi_t = site.router().phi().matvec_transpose(&dl)?;
                for (acc, w) in dx[bi].iter_mut().zip(phi_t.iter()) {
                    *acc += w;
                }
            }

            per_site[s] = Some(grads);
            da = dx;
        }

        // Pack into flat canonical order.
        let mut flat = Vec::with_capacity(self.num_params());
        for (s, site) in self.sites.iter().enumerate() {
            let grads = per_site[s].take().unwrap();
            for (i, e) in site.experts().iter().enumerate() {
                match &grads.experts[i] {
                    Some(g) => e.grad_params(g, &mut flat),
                    None => flat.extend(std::iter::repeat(0.0).take(e.param_len())),
                }
            }
            flat.extend_from_slice(grads.phi.data());
        }
        if let Some(h) = &self.head {
            match (head_w_grad, head_b_grad) {
                (Some(wg), Some(bg)) => {
                    flat.extend_from_slice(wg.data());
                    flat.extend_from_slice(&bg);
                }
                _ => flat.extend(std::iter::repeat(0.0).take(h.param_len())),
            }
        }
        debug_assert_eq!(flat.len(), self.num_params());
        Ok(flat)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::experts::{
        default_centers, init_expert, BandParams, CoeffMode, IndexBias, InitPolicy,
    };
    use crate::moe::ExpertParams;
    use crate::router::Router;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    pub(crate) fn build_site(
        dims: (usize, usize),
        z: usize,
        k: usize,
        n: usize,
        eta: f64,
        seed: u64,
    ) -> AdapterSite {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let base = RealMatrix::from_vec(
            dims.0,
            dims.1,
            (0..dims.0 * dims.1).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        );
        let experts: Vec<ExpertParams> = default_centers(z)
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                ExpertParams::Spectral(
                    init_expert(
                        dims,
                        n,
                        IndexBias::Band(BandParams::new(c, 0.2).unwrap()),
                        InitPolicy::Gaussian { sigma: 0.3 },
                        CoeffMode::Complex,
                        seed * 31 + i as u64,
                    )
                    .unwrap(),
                )
            })
            .collect();
        let phi = RealMatrix::from_vec(
            z,
            dims.1,
            (0..z * dims.1).map(|_| rng.gen_range(-0.4..0.4)).collect(),
        );
        AdapterSite::new(base, experts, Router::new(phi, k).unwrap(), eta).unwrap()
    }

    fn build_model(seed: u64) -> Model {
        let dims = (6, 6);
        let s0 = build_site(dims, 3, 2, 8, 1.5, seed);
        let s1 = build_site(dims, 3, 2, 8, 1.5, seed + 100);
        let mut rng = ChaCha12Rng::seed_from_u64(seed + 7);
        let classes = 3;
        let head = Head::new(
            RealMatrix::from_vec(
                classes,
                dims.0,
                (0..classes * dims.0).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            ),
            vec![0.0; classes],
        )
        .unwrap();
        Model::new(vec![s0, s1], Some(head)).unwrap()
    }

    #[test]
    fn flatten_set_round_trip() {
        let mut model = build_model(1);
        let p = model.flatten_params();
        assert_eq!(p.len(), model.num_params());
        let doubled: Vec<f64> = p.iter().map(|x| x * 2.0).collect();
        model.set_params(&doubled).unwrap();
        assert_eq!(model.flatten_params(), doubled);
    }

    #[test]
    fn layout_covers_all_params_contiguously() {
        let model = build_model(2);
        let segs = model.layout();
        let mut expected = 0usize;
        for s in &segs {
            assert_eq!(s.range.start, expected);
            expected = s.range.end;
        }
        assert_eq!(expected, model.num_params());
    }

    #[test]
    fn loss_total_is_task_plus_lambda_aux() {
        let model = build_model(3);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let batch: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels = vec![0usize, 1, 2, 0, 1];
        let (l, _) = model
            .loss(&batch, &Objective::Classify { labels: &labels }, 0.37)
            .unwrap();
        assert!((l.total - (l.task + 0.37 * l.aux)).abs() < 1e-12);

        let (l0, _) = model
            .loss(&batch, &Objective::Classify { labels: &labels }, 0.0)
            .unwrap();
        assert_eq!(l0.total, l0.task);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        // A target already matched perfectly: composite is zero (zero
        // coefficients) and the target is zero, so every gradient vanishes.
        let dims = (4, 4);
        let site = {
            let experts: Vec<ExpertParams> = (0..2)
                .map(|i| {
                    ExpertParams::Spectral(
                        init_expert(
                            dims,
                            4,
                            IndexBias::Uniform,
                            InitPolicy::Zero,
                            CoeffMode::Complex,
                            i,
                        )
                        .unwrap(),
                    )
                })
                .collect();
            AdapterSite::new(
                RealMatrix::zeros(4, 4),
                experts,
                Router::new(RealMatrix::zeros(2, 4), 1).unwrap(),
                1.0,
            )
            .unwrap()
        };
        let model = Model::new(vec![site], None).unwrap();
        let target = RealMatrix::zeros(4, 4);
        let batch = vec![vec![1.0, 0.0, 0.0, 0.0]];
        let (l, trace) = model
            .loss(&batch, &Objective::TargetFit { target: &target }, 0.0)
            .unwrap();
        assert_eq!(l.task, 0.0);
        let grads = model
            .backward(&batch, &Objective::TargetFit { target: &target }, 0.0, &trace)
            .unwrap();
        assert!(grads.iter().all(|g| *g == 0.0));
    }
}
