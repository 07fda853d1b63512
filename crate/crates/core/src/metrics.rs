//! Evaluation and interpretation quantities: ranking AUC, membership
//! entropy, community/class Jensen-Shannon divergences, hyperedge
//! allocation, disassortativity proportions, and the class affinity matrix.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::hypergraph::Hyperedge;
use crate::inference::{EdgeList, SufficientStats};
use crate::params::ModelParams;
use crate::rng::stream;
use crate::{Error, Result};

/// Pairs positive-edge rates with zero-edge rates at random (seeded,
/// without replacement); the shorter side bounds the number of pairs.
pub fn pair_rates(positive: &[f64], zero: &[f64], seed: u64) -> Vec<(f64, f64)> {
    let mut rng = stream(seed, "pairing");
    let mut pos = positive.to_vec();
    let mut zer = zero.to_vec();
    pos.shuffle(&mut rng);
    zer.shuffle(&mut rng);
    pos.into_iter().zip(zer).collect()
}

/// Fraction of pairs where the positive edge outranks the zero edge; ties
/// credit one half.
pub fn auc(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let score: f64 = pairs
        .iter()
        .map(|&(p, z)| {
            if p > z {
                1.0
            } else if p == z {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(score / pairs.len() as f64)
}

fn entropy(row: &[f64]) -> f64 {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        log::warn!("zero membership row; entropy set to 0");
        return 0.0;
    }
    -row.iter()
        .map(|&v| {
            let p = v / total;
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Median over nodes of the entropy of each (normalized) membership row.
pub fn membership_entropy(memberships: &Array2<f64>) -> f64 {
    let mut values: Vec<f64> = memberships
        .rows()
        .into_iter()
        .map(|row| entropy(row.as_slice().expect("contiguous row")))
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite entropies"));
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn kl(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .map(|(&pi, &mi)| if pi > 0.0 { pi * (pi / mi).ln() } else { 0.0 })
        .sum()
}

/// Jensen-Shannon divergence (natural log) between class c's membership
/// column and community k's mixed-membership column. Zero when community k
/// is the pure community of class c.
pub fn js_divergence(params: &ModelParams, c: usize, k: usize) -> f64 {
    let n = params.n_nodes();
    let p: Vec<f64> = params.theta.column(c).to_vec();
    let q: Vec<f64> = (0..n)
        .map(|i| {
            (0..params.n_classes())
                .map(|cc| params.theta[[i, cc]] * params.w[[cc, k]])
                .sum()
        })
        .collect();
    let ps: f64 = p.iter().sum();
    let qs: f64 = q.iter().sum();
    let p: Vec<f64> = p.iter().map(|v| if ps > 0.0 { v / ps } else { 0.0 }).collect();
    let q: Vec<f64> = q.iter().map(|v| if qs > 0.0 { v / qs } else { 0.0 }).collect();
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)
}

/// Expected number of hyperedges allocated to each community, summed over
/// orders. Totals the training event count.
pub fn allocation(stats: &SufficientStats) -> Vec<f64> {
    let k_total = stats.varphi_dk.ncols();
    (0..k_total).map(|k| stats.varphi_dk.column(k).sum()).collect()
}

fn log_product(col: ndarray::ArrayView1<'_, f64>, edge: &Hyperedge) -> f64 {
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

/// Expected proportion of order-d hyperedges whose latent class assignment
/// is not pure: sum of per-edge subcounts weighted by 1 minus the pure-class
/// share of each community's rate. None when the order has no data.
pub fn disassortativity_proportion(
    edges: &EdgeList,
    params: &ModelParams,
    stats: &SufficientStats,
    d: usize,
) -> Option<f64> {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let m = params.mixed_memberships();
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for ((edge, count), phi_e) in edges.edges.iter().zip(&stats.varphi_edge) {
        if edge.order() != d {
            continue;
        }
        mass += *count as f64;
        for k in 0..k_total {
            if phi_e[k] <= 0.0 {
                continue;
            }
            let log_m = log_product(m.column(k), edge);
            let rho = if !log_m.is_finite() {
                0.0
            } else {
                let pure: f64 = (0..c_total)
                    .map(|c| {
                        let log_t = log_product(params.theta.column(c), edge);
                        params.w[[c, k]].powi(d as i32) * (log_t - log_m).exp()
                    })
                    .sum();
                (1.0 - pure).clamp(0.0, 1.0)
            };
            weighted += phi_e[k] * rho;
        }
    }
    if mass > 0.0 {
        Some(weighted / mass)
    } else {
        None
    }
}

/// C x C class affinity: sum over orders and communities of
/// gamma_k^(d) w_k w_k^T. Symmetric by construction.
pub fn class_affinity(params: &ModelParams) -> Array2<f64> {
    let c_total = params.n_classes();
    let mut out = Array2::<f64>::zeros((c_total, c_total));
    for d in 2..=params.max_order {
        let gamma = params.gamma_at(d);
        for k in 0..params.n_communities() {
            for a in 0..c_total {
                for b in 0..c_total {
                    out[[a, b]] += gamma[k] * params.w[[a, k]] * params.w[[b, k]];
                }
            }
        }
    }
    out
}

/// Improvement of one heldout log-likelihood over a baseline, relative to
/// the baseline's magnitude.
pub fn relative_gain(l_model: f64, l_base: f64) -> f64 {
    (l_model - l_base) / l_base.abs()
}

/// Flat bundle of every reported metric; serializes to JSON or CSV rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: Option<f64>,
    pub median_entropy: f64,
    /// C x K matrix of JS divergences, row-major.
    pub js: Vec<Vec<f64>>,
    /// min over classes per community.
    pub js_min_per_k: Vec<f64>,
    pub allocation: Vec<f64>,
    /// per order present in the data.
    pub disassortativity: BTreeMap<usize, f64>,
    /// C x C, row-major.
    pub class_affinity: Vec<Vec<f64>>,
    /// raw per-order community rates, row d - 2.
    pub community_order_rates: Vec<Vec<f64>>,
    /// the same rows rescaled to sum to 1 per order.
    pub community_order_rates_normalized: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_gain_per_order: Option<BTreeMap<usize, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_gain_total: Option<f64>,
}

impl MetricReport {
    pub fn build(
        params: &ModelParams,
        edges: &EdgeList,
        stats: &SufficientStats,
        auc: Option<f64>,
    ) -> MetricReport {
        let c_total = params.n_classes();
        let k_total = params.n_communities();
        let js: Vec<Vec<f64>> = (0..c_total)
            .map(|c| (0..k_total).map(|k| js_divergence(params, c, k)).collect())
            .collect();
        let js_min_per_k = (0..k_total)
            .map(|k| (0..c_total).map(|c| js[c][k]).fold(f64::INFINITY, f64::min))
            .collect();
        let mut disassortativity = BTreeMap::new();
        for d in 2..=params.max_order {
            if let Some(v) = disassortativity_proportion(edges, params, stats, d) {
                disassortativity.insert(d, v);
            }
        }
        let affinity = class_affinity(params);
        let rates: Vec<Vec<f64>> =
            params.gamma.rows().into_iter().map(|r| r.to_vec()).collect();
        let rates_norm = rates
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
            })
            .collect();
        MetricReport {
            auc,
            median_entropy: membership_entropy(&params.theta),
            js,
            js_min_per_k,
            allocation: allocation(stats),
            disassortativity,
            class_affinity: affinity.rows().into_iter().map(|r| r.to_vec()).collect(),
            community_order_rates: rates,
            community_order_rates_normalized: rates_norm,
            relative_gain_per_order: None,
            relative_gain_total: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long-format rows: metric,index_a,index_b,value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,index_a,index_b,value\n");
        let mut push = |name: &str, a: String, b: String, v: f64| {
            out.push_str(&format!("{name},{a},{b},{v}\n"));
        };
        if let Some(a) = self.auc {
            push("auc", String::new(), String::new(), a);
        }
        push("median_entropy", String::new(), String::new(), self.median_entropy);
        for (c, row) in self.js.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                push("js", c.to_string(), k.to_string(), *v);
            }
        }
        for (k, v) in self.js_min_per_k.iter().enumerate() {
            push("js_min", k.to_string(), String::new(), *v);
        }
        for (k, v) in self.allocation.iter().enumerate() {
            push("allocation", k.to_string(), String::new(), *v);
        }
        for (d, v) in &self.disassortativity {
            push("disassortativity", d.to_string(), String::new(), *v);
        }
        for (a, row) in self.class_affinity.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                push("class_affinity", a.to_string(), b.to_string(), *v);
            }
        }
        for (r, row) in self.community_order_rates.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                push("order_rate", (r + 2).to_string(), k.to_string(), *v);
            }
        }
        for (r, row) in self.community_order_rates_normalized.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                push("order_rate_normalized", (r + 2).to_string(), k.to_string(), *v);
            }
        }
        if let Some(gains) = &self.relative_gain_per_order {
            for (d, v) in gains {
                push("relative_gain", d.to_string(), String::new(), *v);
            }
        }
        if let Some(v) = self.relative_gain_total {
            push("relative_gain_total", String::new(), String::new(), v);
        }
        out
    }
}
