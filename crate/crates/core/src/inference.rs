//! Generalized EM for the factorization family: multinomial-thinning E-step,
//! closed-form Gamma and Theta M-steps, analytic-gradient ascent on the free
//! columns of W under a softplus reparameterization, random restarts, and
//! heldout scoring.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{
    edge_rate, log_likelihood, poisson_log_pmf, total_rate_at, LikelihoodMode, PhiTables,
};
use crate::hypergraph::{Hyperedge, Hypergraph, MaskedSplit};
use crate::params::{init_params, ModelParams, PriorSpec, Variant, EPS};
use crate::rng::substream;
use crate::{Error, Result};

/// Nonzero hyperedges in a fixed, deterministic order (by order, then node
/// set). E-step outputs are aligned with this list.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub edges: Vec<(Hyperedge, u64)>,
}

impl EdgeList {
    pub fn from_graph(graph: &Hypergraph) -> EdgeList {
        let mut edges: Vec<(Hyperedge, u64)> =
            graph.iter().map(|(e, a)| (e.clone(), a)).collect();
        edges.sort_by(|a, b| (a.0.order(), a.0.nodes()).cmp(&(b.0.order(), b.0.nodes())));
        EdgeList { edges }
    }
}

/// E-step expectations of the latent Poisson subcounts.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// Per nonzero edge (aligned with the EdgeList): the K-vector of
    /// expected per-community subcounts.
    pub varphi_edge: Vec<Vec<f64>>,
    /// N x K node-community totals.
    pub varphi_ik: Array2<f64>,
    /// N x C x K node-class-community totals.
    pub varphi_ick: Array3<f64>,
    /// (D - 1) x K per-order community totals; row d - 2 holds order d.
    pub varphi_dk: Array2<f64>,
}

fn log_edge_product(col: ArrayView1<'_, f64>, edge: &Hyperedge) -> f64 {
    let mut acc = 0.0;
    for &i in edge.nodes() {
        let v = col[i as usize];
        if v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += v.ln();
    }
    acc
}

/// Expected latent subcounts given current parameters. Each nonzero edge's
/// count is thinned over communities (and classes, within each node) in
/// proportion to the variant-specific rate decomposition; ratios are
/// max-shifted in log space so high orders stay stable. Edges whose every
/// numerator underflows are allocated uniformly.
pub fn e_step(edges: &EdgeList, params: &ModelParams, phi_m: &PhiTables) -> SufficientStats {
    let n = params.n_nodes();
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let d_max = params.max_order;
    let m = phi_m.scores();
    let omni = params.variant == Variant::Omni;

    let mut varphi_edge = Vec::with_capacity(edges.edges.len());
    let mut varphi_ik = Array2::<f64>::zeros((n, k_total));
    let mut varphi_ick = Array3::<f64>::zeros((n, c_total, k_total));
    let mut varphi_dk = Array2::<f64>::zeros((d_max - 1, k_total));

    for (edge, count) in &edges.edges {
        let d = edge.order();
        let a = *count as f64;
        let gamma = params.gamma_at(d);

        let logpm: Vec<f64> =
            (0..k_total).map(|k| log_edge_product(m.column(k), edge)).collect();
        let logpt: Vec<f64> = if omni {
            (0..c_total)
                .map(|c| log_edge_product(params.theta.column(c), edge))
                .collect()
        } else {
            Vec::new()
        };
        let shift = logpm
            .iter()
            .chain(logpt.iter())
            .cloned()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);

        let mut num = vec![0.0; k_total];
        let mut total = 0.0;
        if shift.is_finite() {
            let sm: Vec<f64> = logpm.iter().map(|&v| (v - shift).exp()).collect();
            let st: Vec<f64> = logpt.iter().map(|&v| (v - shift).exp()).collect();
            for k in 0..k_total {
                let mut term = sm[k];
                if omni && k >= c_total {
                    let diag: f64 = (0..c_total)
                        .map(|c| params.w[[c, k]].powi(d as i32) * st[c])
                        .sum();
                    term -= diag;
                }
                num[k] = gamma[k] * term.max(0.0);
                total += num[k];
            }
        }

        let phi_e: Vec<f64> = if total > 0.0 && total.is_finite() {
            num.iter().map(|&v| a * v / total).collect()
        } else {
            vec![a / k_total as f64; k_total]
        };

        for &i in edge.nodes() {
            let i = i as usize;
            for k in 0..k_total {
                varphi_ik[[i, k]] += phi_e[k];
            }
        }
        for k in 0..k_total {
            varphi_dk[[d - 2, k]] += phi_e[k];
        }
        if omni {
            split_classes_omni(params, m, edge, &phi_e, &mut varphi_ick);
        }
        varphi_edge.push(phi_e);
    }

    if !omni {
        // classes split per node independently of the edge, in proportion
        // to w_ck theta_ic
        for i in 0..n {
            for k in 0..k_total {
                let mass = varphi_ik[[i, k]];
                if mass <= 0.0 {
                    continue;
                }
                let weights: Vec<f64> =
                    (0..c_total).map(|c| params.w[[c, k]] * params.theta[[i, c]]).collect();
                let denom: f64 = weights.iter().sum();
                for c in 0..c_total {
                    let share = if denom > 0.0 { weights[c] / denom } else { 1.0 / c_total as f64 };
                    varphi_ick[[i, c, k]] += mass * share;
                }
            }
        }
    }

    SufficientStats {
        varphi_edge,
        varphi_ik,
        varphi_ick,
        varphi_dk,
    }
}

/// Omni per-node class split. Pure communities concentrate their mass on
/// their own class; mixed communities split node i's share over classes in
/// proportion to theta_ic w_ck (prod_{j != i} m_jk - w_ck^{d-1} prod_{j != i}
/// theta_jc), the diagonal-excluded conditional.
fn split_classes_omni(
    params: &ModelParams,
    m: &Array2<f64>,
    edge: &Hyperedge,
    phi_e: &[f64],
    varphi_ick: &mut Array3<f64>,
) {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let d = edge.order();
    for (pos, &node) in edge.nodes().iter().enumerate() {
        let i = node as usize;
        for k in 0..c_total {
            varphi_ick[[i, k, k]] += phi_e[k];
        }
        if k_total == c_total {
            continue;
        }
        // log products over the other nodes of this edge
        let mut lex_m = vec![0.0f64; k_total];
        let mut lex_t = vec![0.0f64; c_total];
        for (q, &other) in edge.nodes().iter().enumerate() {
            if q == pos {
                continue;
            }
            let j = other as usize;
            for (k, slot) in lex_m.iter_mut().enumerate() {
                let v = m[[j, k]];
                *slot += if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
            }
            for (c, slot) in lex_t.iter_mut().enumerate() {
                let v = params.theta[[j, c]];
                *slot += if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
            }
        }
        for k in c_total..k_total {
            let mass = phi_e[k];
            if mass <= 0.0 {
                continue;
            }
            let shift = lex_t
                .iter()
                .cloned()
                .chain(std::iter::once(lex_m[k]))
                .filter(|v| v.is_finite())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut num = vec![0.0f64; c_total];
            let mut total = 0.0;
            if shift.is_finite() {
                let sm = (lex_m[k] - shift).exp();
                for c in 0..c_total {
                    let w = params.w[[c, k]];
                    let st = (lex_t[c] - shift).exp();
                    num[c] = (params.theta[[i, c]]
                        * w
                        * (sm - w.powi(d as i32 - 1) * st))
                        .max(0.0);
                    total += num[c];
                }
            }
            for c in 0..c_total {
                let share = if total > 0.0 { num[c] / total } else { 1.0 / c_total as f64 };
                varphi_ick[[i, c, k]] += mass * share;
            }
        }
    }
}

/// MAP coordinate update under a Gamma(alpha, beta) prior:
/// max((y + alpha - 1) / (c + beta), 0). Reduces to y/c at alpha=1, beta=0.
pub fn map_adjust(y: f64, c: f64, prior: &PriorSpec) -> f64 {
    ((y + prior.alpha - 1.0) / (c + prior.beta)).max(0.0)
}

/// Closed-form Gamma update. Pure-community denominators for the omni
/// variant use the theta table; mixed communities subtract the
/// diagonal-exclusion mass (clamped at the floor, with a warning when the
/// clamp bites).
pub fn m_step_gamma(
    stats: &SufficientStats,
    params: &ModelParams,
    phi_m: &PhiTables,
    phi_theta: Option<&PhiTables>,
    prior: &PriorSpec,
) -> Array2<f64> {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let mut gamma = Array2::<f64>::zeros((params.max_order - 1, k_total));
    for d in 2..=params.max_order {
        let phi_d = phi_m.phi(d);
        for k in 0..k_total {
            let y = stats.varphi_dk[[d - 2, k]];
            let denom = match params.variant {
                Variant::Strict | Variant::Semi => phi_d[k],
                Variant::Omni => {
                    let pure = phi_theta.expect("omni gamma update needs theta tables").phi(d);
                    if k < c_total {
                        pure[k]
                    } else {
                        let diag: f64 = (0..c_total)
                            .map(|c| params.w[[c, k]].powi(d as i32) * pure[c])
                            .sum();
                        let raw = phi_d[k] - diag;
                        if raw < 0.0 {
                            log::warn!(
                                "order-{d} community {k} rate denominator clamped ({raw:.3e})"
                            );
                        }
                        raw.max(EPS)
                    }
                }
            };
            gamma[[d - 2, k]] = if denom > 0.0 {
                map_adjust(y, denom, prior).max(EPS)
            } else {
                EPS
            };
        }
    }
    gamma
}

/// Closed-form Theta sweep in node order. After each node the phi tables are
/// patched in place, so later nodes see the updated sums. The omni variant
/// maintains both the mixed-membership table and the pure theta table.
pub fn m_step_theta(
    params: &mut ModelParams,
    stats: &SufficientStats,
    phi_m: &mut PhiTables,
    mut phi_theta: Option<&mut PhiTables>,
    prior: &PriorSpec,
) {
    let n = params.n_nodes();
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let d_max = params.max_order;
    for i in 0..n {
        let bar_m = phi_m.node_barphi(i, d_max - 1);
        let bar_t = phi_theta.as_ref().map(|t| t.node_barphi(i, d_max - 1));
        let mut row = vec![0.0f64; c_total];
        for (c, slot) in row.iter_mut().enumerate() {
            let num: f64 = (0..k_total).map(|k| stats.varphi_ick[[i, c, k]]).sum();
            let mut den = 0.0;
            for d in 2..=d_max {
                let gamma = params.gamma_at(d);
                match params.variant {
                    Variant::Strict => {
                        den += gamma[c] * bar_m[[d - 1, c]];
                    }
                    Variant::Semi => {
                        for k in 0..k_total {
                            den += gamma[k] * params.w[[c, k]] * bar_m[[d - 1, k]];
                        }
                    }
                    Variant::Omni => {
                        let bt = bar_t.as_ref().expect("omni theta update needs theta tables");
                        den += gamma[c] * bt[[d - 1, c]];
                        for k in c_total..k_total {
                            let w = params.w[[c, k]];
                            den += gamma[k]
                                * w
                                * (bar_m[[d - 1, k]] - w.powi(d as i32 - 1) * bt[[d - 1, c]])
                                    .max(0.0);
                        }
                    }
                }
            }
            *slot = if den > 0.0 { map_adjust(num, den, prior).max(EPS) } else { EPS };
        }
        let m_row: Vec<f64> = (0..k_total)
            .map(|k| (0..c_total).map(|c| row[c] * params.w[[c, k]]).sum())
            .collect();
        phi_m.refresh_node(i, &m_row);
        if let Some(t) = phi_theta.as_deref_mut() {
            t.refresh_node(i, &row);
        }
        for (c, v) in row.into_iter().enumerate() {
            params.theta[[i, c]] = v;
        }
    }
}

fn softplus(nu: f64) -> f64 {
    if nu > 30.0 {
        nu
    } else {
        nu.exp().ln_1p()
    }
}

fn softplus_inv(w: f64) -> f64 {
    if w > 30.0 {
        w
    } else {
        (w.exp() - 1.0).max(f64::MIN_POSITIVE).ln()
    }
}

/// The W-step objective: the terms of the expected complete-data
/// log-likelihood that depend on W, with Gamma and the stats held fixed.
pub fn w_objective(
    params: &ModelParams,
    phi_m: &PhiTables,
    phi_theta: Option<&PhiTables>,
    varphi_ck: &Array2<f64>,
) -> f64 {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let mut obj = 0.0;
    for d in 2..=params.max_order {
        obj -= total_rate_at(params, phi_m, phi_theta, d);
    }
    for k in c_total..k_total {
        for c in 0..c_total {
            let y = varphi_ck[[c, k]];
            if y > 0.0 {
                obj += y * params.w[[c, k]].max(EPS).ln();
            }
        }
    }
    obj
}

/// Analytic gradient of the W-step objective with respect to the free
/// entries of W (columns C..K). Zero-filled on the fixed identity block.
pub fn w_gradient(
    params: &ModelParams,
    phi_m: &PhiTables,
    phi_theta: Option<&PhiTables>,
    varphi_ck: &Array2<f64>,
) -> Array2<f64> {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let d_max = params.max_order;
    let bars = phi_m.all_barphi(d_max - 1);
    let mut grad = Array2::<f64>::zeros((c_total, k_total));
    for d in 2..=d_max {
        let gamma = params.gamma_at(d);
        // s[c, k] = sum_i theta_ic bar_phi_ik^(d-1)
        let s = params.theta.t().dot(&bars[d - 1]);
        for k in c_total..k_total {
            for c in 0..c_total {
                grad[[c, k]] -= gamma[k] * s[[c, k]];
                if params.variant == Variant::Omni {
                    let pure = phi_theta.expect("omni W gradient needs theta tables");
                    grad[[c, k]] += gamma[k]
                        * d as f64
                        * params.w[[c, k]].powi(d as i32 - 1)
                        * pure.phi(d)[c];
                }
            }
        }
    }
    for k in c_total..k_total {
        for c in 0..c_total {
            grad[[c, k]] += varphi_ck[[c, k]] / params.w[[c, k]].max(EPS);
        }
    }
    grad
}

/// One gradient-ascent step on the free columns of W in softplus coordinates
/// nu = log(exp(w) - 1). If the objective drops, the step is halved up to 20
/// times and then skipped, so the surrounding EM stays monotone. Returns
/// whether a step was taken; on success the mixed-membership phi tables are
/// rebuilt in place.
pub fn m_step_w(
    params: &mut ModelParams,
    stats: &SufficientStats,
    phi_m: &mut PhiTables,
    phi_theta: Option<&PhiTables>,
    delta: f64,
) -> bool {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    if k_total == c_total || params.variant == Variant::Strict || delta == 0.0 {
        return false;
    }
    let mut varphi_ck = Array2::<f64>::zeros((c_total, k_total));
    for i in 0..params.n_nodes() {
        for c in 0..c_total {
            for k in 0..k_total {
                varphi_ck[[c, k]] += stats.varphi_ick[[i, c, k]];
            }
        }
    }
    let grad_w = w_gradient(params, phi_m, phi_theta, &varphi_ck);
    if grad_w.iter().any(|v| !v.is_finite()) {
        log::warn!("non-finite W gradient; step skipped");
        return false;
    }
    let q0 = w_objective(params, phi_m, phi_theta, &varphi_ck);
    let mut step = delta;
    for _ in 0..=20 {
        let mut w_new = params.w.clone();
        for k in c_total..k_total {
            for c in 0..c_total {
                let w = params.w[[c, k]];
                let nu = softplus_inv(w) + step * grad_w[[c, k]] * (1.0 - (-w).exp());
                w_new[[c, k]] = softplus(nu).max(EPS);
            }
        }
        let candidate = ModelParams {
            w: w_new,
            ..params.clone()
        };
        let tables = match PhiTables::build(candidate.mixed_memberships(), params.max_order) {
            Ok(t) => t,
            Err(_) => {
                step *= 0.5;
                continue;
            }
        };
        let q1 = w_objective(&candidate, &tables, phi_theta, &varphi_ck);
        if q1.is_finite() && q1 >= q0 {
            params.w = candidate.w;
            *phi_m = tables;
            return true;
        }
        step *= 0.5;
    }
    false
}

/// Full fit configuration; defaults follow the reference estimation recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub variant: Variant,
    pub n_classes: usize,
    pub n_communities: usize,
    /// Largest hyperedge order to model; inferred from the data when unset.
    #[serde(default)]
    pub max_order: Option<usize>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop when the log-likelihood moves less than `conv_threshold` over
    /// this many iterations.
    #[serde(default = "default_window")]
    pub conv_window: usize,
    #[serde(default = "default_threshold")]
    pub conv_threshold: f64,
    /// Base step size for the W gradient ascent.
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    /// Down-weight pure communities at initialization.
    #[serde(default)]
    pub gamma_assortative_init: bool,
}

fn default_max_iters() -> usize {
    1000
}
fn default_window() -> usize {
    10
}
fn default_threshold() -> f64 {
    1.0
}
fn default_step() -> f64 {
    1e-6
}
fn default_restarts() -> usize {
    10
}

impl FitConfig {
    pub fn new(variant: Variant, n_classes: usize, n_communities: usize) -> FitConfig {
        FitConfig {
            variant,
            n_classes,
            n_communities,
            max_order: None,
            max_iters: default_max_iters(),
            conv_window: default_window(),
            conv_threshold: default_threshold(),
            step_size: default_step(),
            restarts: default_restarts(),
            seed: 0,
            prior: None,
            gamma_assortative_init: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Best parameters across restarts, normalized.
    pub params: ModelParams,
    /// Final proportional log-likelihood of the best restart.
    pub final_ll: f64,
    /// Per-restart log-likelihood traces.
    pub ll_trace: Vec<Vec<f64>>,
    /// Index of the selected restart (lowest index on exact ties).
    pub best_restart: usize,
    /// Iterations used per restart.
    pub iterations: Vec<usize>,
    pub wall_time_ms: u128,
}

/// Fits the model with random restarts, returning the best run by final
/// proportional log-likelihood.
pub fn fit(graph: &Hypergraph, config: &FitConfig) -> Result<FitResult> {
    if config.restarts < 1 {
        return Err(Error::Dimension("need at least one restart".into()));
    }
    if config.step_size < 0.0 {
        return Err(Error::Dimension("step size must be nonnegative".into()));
    }
    if graph.iter().next().is_none() {
        return Err(Error::EmptyInput);
    }
    let d_max = config.max_order.unwrap_or_else(|| graph.max_order());
    let edges = EdgeList::from_graph(graph);
    let prior = config.prior.unwrap_or_default();
    let start = Instant::now();

    let mut ll_trace = Vec::with_capacity(config.restarts);
    let mut iterations = Vec::with_capacity(config.restarts);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for r in 0..config.restarts {
        let seed_r: u64 = substream(config.seed, "init-r", r as u64).gen();
        let mut params = init_params(
            graph.n_nodes(),
            config.n_classes,
            config.n_communities,
            d_max,
            config.variant,
            seed_r,
            config.gamma_assortative_init,
        )?;
        let mut phi_m = PhiTables::build(params.mixed_memberships(), d_max)?;
        let mut phi_theta = if config.variant == Variant::Omni {
            Some(PhiTables::build(params.theta.clone(), d_max)?)
        } else {
            None
        };
        let mut trace: Vec<f64> = Vec::new();
        loop {
            let iter_start = Instant::now();
            let stats = e_step(&edges, &params, &phi_m);
            params.gamma = m_step_gamma(&stats, &params, &phi_m, phi_theta.as_ref(), &prior);
            m_step_theta(&mut params, &stats, &mut phi_m, phi_theta.as_mut(), &prior);
            m_step_w(&mut params, &stats, &mut phi_m, phi_theta.as_ref(), config.step_size);
            params = params.normalize()?;
            phi_m = PhiTables::build(params.mixed_memberships(), d_max)?;
            if phi_theta.is_some() {
                phi_theta = Some(PhiTables::build(params.theta.clone(), d_max)?);
            }
            let ll = log_likelihood(
                graph,
                &params,
                &phi_m,
                phi_theta.as_ref(),
                LikelihoodMode::Proportional,
            );
            let delta = trace.last().map(|prev| ll - prev).unwrap_or(f64::NAN);
            trace.push(ll);
            log::info!(
                "restart {r} iter {t}: ll {ll:.6} delta {delta:.6} wall-ms {ms}",
                t = trace.len(),
                ms = iter_start.elapsed().as_millis()
            );
            let t = trace.len();
            if t >= config.max_iters {
                break;
            }
            if t > config.conv_window
                && (trace[t - 1] - trace[t - 1 - config.conv_window]).abs()
                    < config.conv_threshold
            {
                break;
            }
        }
        let final_ll = *trace.last().unwrap_or(&f64::NEG_INFINITY);
        iterations.push(trace.len());
        ll_trace.push(trace);
        if final_ll.is_finite() && best.as_ref().map_or(true, |(b, _, _)| final_ll > *b) {
            best = Some((final_ll, r, params));
        }
    }

    let (final_ll, best_restart, params) = best.ok_or_else(|| {
        Error::Numeric("every restart diverged to a degenerate likelihood".into())
    })?;
    Ok(FitResult {
        params,
        final_ll,
        ll_trace,
        best_restart,
        iterations,
        wall_time_ms: start.elapsed().as_millis(),
    })
}

/// Heldout log-likelihoods per order and overall, plus the per-edge rates
/// needed for ranking-based evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeldoutScore {
    /// Per order: (sum of full Poisson log-pmfs, number of test entries).
    pub per_order: BTreeMap<usize, (f64, usize)>,
    /// Sum over orders.
    pub total: f64,
    /// Orders weighted equally: sum of per-order means.
    pub uniform: f64,
    /// Per order, (observed count, model rate) for every test entry.
    pub rates: BTreeMap<usize, Vec<(u64, f64)>>,
}

/// Scores the masked test entries under fitted parameters.
pub fn heldout_score(split: &MaskedSplit, params: &ModelParams) -> HeldoutScore {
    let m = params.mixed_memberships();
    let mut per_order = BTreeMap::new();
    let mut rates = BTreeMap::new();
    let mut total = 0.0;
    let mut uniform = 0.0;
    for (&d, entries) in &split.test {
        let mut ll = 0.0;
        let mut pairs = Vec::with_capacity(entries.len());
        for (edge, count) in entries {
            let mu = edge_rate(params, &m, edge);
            ll += poisson_log_pmf(*count, mu);
            pairs.push((*count, mu));
        }
        total += ll;
        if !entries.is_empty() {
            uniform += ll / entries.len() as f64;
        }
        per_order.insert(d, (ll, entries.len()));
        rates.insert(d, pairs);
    }
    HeldoutScore {
        per_order,
        total,
        uniform,
        rates,
    }
}
