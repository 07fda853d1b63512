//! Performance-critical kernels: the phi/bar-phi dynamic program, incremental
//! phi maintenance during sequential theta sweeps, edge-rate evaluation, and
//! the log-likelihood.
//!
//! For a nonnegative N x J score matrix M, `phi[d][j]` is the sum over all
//! order-d node subsets of the product of scores, and `bar_phi[i][d][j]` the
//! same sum over subsets excluding node i. Both satisfy
//!
//! ```text
//! phi^(d)_j     = (1/d) sum_i m_ij bar_phi^(d-1)_ij
//! bar_phi^(d)_ij = phi^(d)_j - m_ij bar_phi^(d-1)_ij
//! ```
//!
//! with `bar_phi^(0) = 1`. Bar-phi rows are derived lazily from phi, so a
//! single-node update costs O(DJ) and a full build O(NDJ).

use ndarray::{Array1, Array2, ArrayView1};

use crate::hypergraph::{Hyperedge, Hypergraph};
use crate::params::{ModelParams, Variant};
use crate::{Error, Result};

/// Hyperedge orders above this use log-space products.
pub const LOG_SPACE_ORDER: usize = 8;

#[derive(Debug, Clone)]
pub struct PhiTables {
    /// N x J score matrix (M = Theta W, or Theta itself for pure-class sums).
    m: Array2<f64>,
    /// (D + 1) x J; row d holds phi^(d), with phi^(0) = 1.
    phi: Array2<f64>,
    max_order: usize,
}

impl PhiTables {
    pub fn build(m: Array2<f64>, max_order: usize) -> Result<PhiTables> {
        if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric("phi tables need finite nonnegative scores".into()));
        }
        let mut tables = PhiTables {
            phi: Array2::zeros((max_order + 1, m.ncols())),
            m,
            max_order,
        };
        tables.rebuild();
        Ok(tables)
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// phi^(d) for d in 0..=max_order.
    pub fn phi(&self, d: usize) -> ArrayView1<'_, f64> {
        self.phi.row(d)
    }

    /// Recomputes phi from scratch in O(NDJ).
    pub fn rebuild(&mut self) {
        let (n, j) = self.m.dim();
        let mut bar_prev = Array2::<f64>::ones((n, j));
        self.phi.row_mut(0).fill(1.0);
        for d in 1..=self.max_order {
            let mut phi_d = Array1::<f64>::zeros(j);
            for i in 0..n {
                for col in 0..j {
                    phi_d[col] += self.m[[i, col]] * bar_prev[[i, col]];
                }
            }
            phi_d.mapv_inplace(|v| v / d as f64);
            for i in 0..n {
                for col in 0..j {
                    bar_prev[[i, col]] =
                        (phi_d[col] - self.m[[i, col]] * bar_prev[[i, col]]).max(0.0);
                }
            }
            self.phi.row_mut(d).assign(&phi_d);
        }
    }

    /// bar_phi^(d)_i for d in 0..=upto, derived from the current phi.
    /// Mathematically nonnegative; clamped at 0 against cancellation.
    pub fn node_barphi(&self, i: usize, upto: usize) -> Array2<f64> {
        let j = self.m.ncols();
        let mut out = Array2::<f64>::zeros((upto + 1, j));
        out.row_mut(0).fill(1.0);
        for d in 1..=upto {
            for col in 0..j {
                out[[d, col]] =
                    (self.phi[[d, col]] - self.m[[i, col]] * out[[d - 1, col]]).max(0.0);
            }
        }
        out
    }

    /// bar_phi matrices for every node, indexed by order 0..=upto.
    pub fn all_barphi(&self, upto: usize) -> Vec<Array2<f64>> {
        let (n, j) = self.m.dim();
        let mut out = Vec::with_capacity(upto + 1);
        out.push(Array2::<f64>::ones((n, j)));
        for d in 1..=upto {
            let prev = &out[d - 1];
            let mut next = Array2::<f64>::zeros((n, j));
            for i in 0..n {
                for col in 0..j {
                    next[[i, col]] =
                        (self.phi[[d, col]] - self.m[[i, col]] * prev[[i, col]]).max(0.0);
                }
            }
            out.push(next);
        }
        out
    }

    /// Replaces node i's score row and patches every phi^(d) in O(DJ).
    pub fn refresh_node(&mut self, i: usize, new_row: &[f64]) {
        let bar = self.node_barphi(i, self.max_order);
        for d in 1..=self.max_order {
            for col in 0..self.m.ncols() {
                self.phi[[d, col]] = (new_row[col] * bar[[d - 1, col]] + bar[[d, col]]).max(0.0);
            }
        }
        for (col, &v) in new_row.iter().enumerate() {
            self.m[[i, col]] = v;
        }
    }
}

/// Product of `col[i]` over the edge's nodes; switches to log space for
/// orders above `LOG_SPACE_ORDER`.
pub fn edge_product(col: ArrayView1<'_, f64>, edge: &Hyperedge) -> f64 {
    let nodes = edge.nodes();
    if nodes.len() <= LOG_SPACE_ORDER {
        nodes.iter().map(|&i| col[i as usize]).product()
    } else {
        let mut acc = 0.0;
        for &i in nodes {
            let v = col[i as usize];
            if v <= 0.0 {
                return 0.0;
            }
            acc += v.ln();
        }
        acc.exp()
    }
}

/// Like `edge_product` but skipping one node of the edge.
pub fn edge_product_excluding(col: ArrayView1<'_, f64>, edge: &Hyperedge, skip: u32) -> f64 {
    let nodes = edge.nodes();
    if nodes.len() <= LOG_SPACE_ORDER + 1 {
        nodes.iter().filter(|&&i| i != skip).map(|&i| col[i as usize]).product()
    } else {
        let mut acc = 0.0;
        for &i in nodes {
            if i == skip {
                continue;
            }
            let v = col[i as usize];
            if v <= 0.0 {
                return 0.0;
            }
            acc += v.ln();
        }
        acc.exp()
    }
}

/// Poisson rate of one hyperedge under the given parameters. `m` must equal
/// Theta W (pass Theta itself for the strict variant).
pub fn edge_rate(params: &ModelParams, m: &Array2<f64>, edge: &Hyperedge) -> f64 {
    let d = edge.order();
    let gamma = params.gamma_at(d);
    let rate: f64 = match params.variant {
        Variant::Strict => (0..params.n_classes())
            .map(|c| gamma[c] * edge_product(params.theta.column(c), edge))
            .sum(),
        Variant::Semi => (0..params.n_communities())
            .map(|k| gamma[k] * edge_product(m.column(k), edge))
            .sum(),
        Variant::Omni => {
            let c_total = params.n_classes();
            let theta_prods: Vec<f64> = (0..c_total)
                .map(|c| edge_product(params.theta.column(c), edge))
                .collect();
            (0..params.n_communities())
                .map(|k| {
                    let mut term = edge_product(m.column(k), edge);
                    if k >= c_total {
                        let diag: f64 = (0..c_total)
                            .map(|c| params.w[[c, k]].powi(d as i32) * theta_prods[c])
                            .sum();
                        term -= diag;
                    }
                    gamma[k] * term.max(0.0)
                })
                .sum()
        }
    };
    rate.max(0.0)
}

/// Closed-form total rate sum over the full order-d index set.
/// `phi_theta` is the pure-class table (built on Theta); only the omni
/// variant reads it.
pub fn total_rate_at(
    params: &ModelParams,
    phi_m: &PhiTables,
    phi_theta: Option<&PhiTables>,
    d: usize,
) -> f64 {
    let gamma = params.gamma_at(d);
    let phi_d = phi_m.phi(d);
    let mut total: f64 = gamma.iter().zip(phi_d.iter()).map(|(g, p)| g * p).sum();
    if params.variant == Variant::Omni {
        let c_total = params.n_classes();
        let pure = phi_theta.expect("omni total rate needs pure-class phi tables");
        let pure_d = pure.phi(d);
        for k in c_total..params.n_communities() {
            let diag: f64 = (0..c_total)
                .map(|c| params.w[[c, k]].powi(d as i32) * pure_d[c])
                .sum();
            total -= gamma[k] * diag;
        }
    }
    total.max(0.0)
}

/// Total rate over all orders 2..=D.
pub fn total_rate(
    params: &ModelParams,
    phi_m: &PhiTables,
    phi_theta: Option<&PhiTables>,
) -> f64 {
    (2..=params.max_order)
        .map(|d| total_rate_at(params, phi_m, phi_theta, d))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    /// Drops the log(A!) constant; the EM objective.
    Proportional,
    /// Full Poisson log-pmf, for heldout scoring.
    Full,
}

/// Log-likelihood of the observed counts. Returns -inf if any nonzero count
/// sits on a zero rate.
pub fn log_likelihood(
    graph: &Hypergraph,
    params: &ModelParams,
    phi_m: &PhiTables,
    phi_theta: Option<&PhiTables>,
    mode: LikelihoodMode,
) -> f64 {
    let mut ll = -total_rate(params, phi_m, phi_theta);
    for (edge, count) in graph.iter() {
        let mu = edge_rate(params, phi_m.scores(), edge);
        if mu <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += count as f64 * mu.ln();
        if mode == LikelihoodMode::Full {
            ll -= ln_factorial(count);
        }
    }
    ll
}

/// Full Poisson log-pmf of a single observation.
pub fn poisson_log_pmf(count: u64, mu: f64) -> f64 {
    if mu <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    count as f64 * mu.ln() - mu - ln_factorial(count)
}

pub fn ln_factorial(n: u64) -> f64 {
    // exact summation up front, Stirling series beyond
    if n < 256 {
        (2..=n).map(|v| (v as f64).ln()).sum()
    } else {
        let x = n as f64 + 1.0;
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
    }
}
