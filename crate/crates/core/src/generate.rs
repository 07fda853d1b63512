//! Synthetic hypergraph sampling: a single Poisson draw for the total event
//! count, multinomial thinning over (order, community), then weighted
//! without-replacement node selection per event.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::compute::PhiTables;
use crate::hypergraph::{Hyperedge, Hypergraph};
use crate::params::{ModelParams, Variant};
use crate::rng::substream;
use crate::{Error, Result};

/// Sampling request: normalized parameters, a seed, and an optional hard cap
/// on the number of events (a safety valve for misbehaved inputs).
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub params: ModelParams,
    pub seed: u64,
    pub cap: Option<u64>,
}

/// Expected event rate per (order, community) cell and its total. The omni
/// variant subtracts the pure-class mass excluded from mixed communities.
pub fn event_rates(params: &ModelParams, phi_m: &PhiTables) -> (Array2<f64>, f64) {
    let c_total = params.n_classes();
    let k_total = params.n_communities();
    let pure = if params.variant == Variant::Omni {
        Some(PhiTables::build(params.theta.clone(), params.max_order).expect("valid theta"))
    } else {
        None
    };
    let mut rates = Array2::<f64>::zeros((params.max_order - 1, k_total));
    let mut total = 0.0;
    for d in 2..=params.max_order {
        let gamma = params.gamma_at(d);
        let phi_d = phi_m.phi(d);
        for k in 0..k_total {
            let mut mass = phi_d[k];
            if let Some(pure) = &pure {
                if k >= c_total {
                    let diag: f64 = (0..c_total)
                        .map(|c| params.w[[c, k]].powi(d as i32) * pure.phi(d)[c])
                        .sum();
                    mass -= diag;
                }
            }
            let r = (gamma[k] * mass).max(0.0);
            rates[[d - 2, k]] = r;
            total += r;
        }
    }
    (rates, total)
}

/// Fenwick tree over node weights; supports O(log N) point updates and
/// sampling by cumulative weight.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Fenwick {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let mut pos = i + 1;
            while pos <= n {
                tree[pos] += w;
                pos += pos & pos.wrapping_neg();
            }
        }
        Fenwick { tree }
    }

    fn total(&self) -> f64 {
        self.prefix(self.tree.len() - 1)
    }

    fn prefix(&self, mut idx: usize) -> f64 {
        let mut sum = 0.0;
        while idx > 0 {
            sum += self.tree[idx];
            idx -= idx & idx.wrapping_neg();
        }
        sum
    }

    fn add(&mut self, i: usize, delta: f64) {
        let n = self.tree.len() - 1;
        let mut pos = i + 1;
        while pos <= n {
            self.tree[pos] += delta;
            pos += pos & pos.wrapping_neg();
        }
    }

    /// Largest index whose prefix sum is below `target`; i.e. samples node i
    /// with probability w_i / total when target ~ U(0, total).
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0usize;
        let mut mask = n.next_power_of_two();
        while mask > 0 {
            let next = pos + mask;
            if next <= n && self.tree[next] < target {
                target -= self.tree[next];
                pos = next;
            }
            mask >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Probability that an event on these nodes is not purely single-class:
/// 1 - sum_c w_ck^d prod theta_ic / prod m_ik.
fn disassortative_share(
    params: &ModelParams,
    m: &Array2<f64>,
    nodes: &[u32],
    k: usize,
    d: usize,
) -> f64 {
    let mut log_m = 0.0;
    for &i in nodes {
        let v = m[[i as usize, k]];
        if v <= 0.0 {
            return 1.0;
        }
        log_m += v.ln();
    }
    let pure: f64 = (0..params.n_classes())
        .map(|c| {
            let mut log_t = 0.0;
            for &i in nodes {
                let v = params.theta[[i as usize, c]];
                if v <= 0.0 {
                    return 0.0;
                }
                log_t += v.ln();
            }
            params.w[[c, k]].powi(d as i32) * (log_t - log_m).exp()
        })
        .sum();
    (1.0 - pure).clamp(0.0, 1.0)
}

/// Draws a hypergraph from the model. The total event count is Poisson with
/// the model's total rate, events are thinned over (order, community) cells
/// by sequential binomial splitting, and each event picks its nodes without
/// replacement with weights m_ik. Deterministic under the seed.
pub fn sample_hypergraph(spec: &GenSpec) -> Result<Hypergraph> {
    let params = &spec.params;
    params.validate()?;
    let n = params.n_nodes();
    let k_total = params.n_communities();
    let m = params.mixed_memberships();
    let phi_m = PhiTables::build(m.clone(), params.max_order)?;
    let (rates, total) = event_rates(params, &phi_m);
    if !total.is_finite() {
        return Err(Error::Sampling(format!("non-finite total event rate {total}")));
    }

    let mut graph = Hypergraph::new(n);
    let mut rng = substream(spec.seed, "generation", 0);
    let mut remaining: u64 = if total > 0.0 {
        Poisson::new(total)
            .map_err(|e| Error::Sampling(format!("invalid Poisson rate: {e}")))?
            .sample(&mut rng) as u64
    } else {
        0
    };
    if let Some(cap) = spec.cap {
        remaining = remaining.min(cap);
    }
    if remaining == 0 {
        return Ok(graph);
    }

    // thin the total into per-cell counts, then fill cell by cell
    let mut rate_left = total;
    let mut cell = 0u64;
    for d in 2..=params.max_order {
        for k in 0..k_total {
            cell += 1;
            let r = rates[[d - 2, k]];
            if remaining == 0 || r <= 0.0 {
                rate_left -= r;
                continue;
            }
            let events = if r >= rate_left {
                remaining
            } else {
                let p = (r / rate_left).clamp(0.0, 1.0);
                Binomial::new(remaining, p)
                    .map_err(|e| Error::Sampling(format!("binomial split failed: {e}")))?
                    .sample(&mut rng)
            };
            remaining -= events;
            rate_left -= r;
            if events == 0 {
                continue;
            }

            let weights: Vec<f64> = m.column(k).to_vec();
            let positive = weights.iter().filter(|&&w| w > 0.0).count();
            if positive < d {
                log::warn!(
                    "order-{d} community {k}: only {positive} nodes carry weight; \
                     skipping {events} events"
                );
                continue;
            }
            // mixed omni communities exclude pure-class mass: accept each
            // event with its disassortative share and redraw otherwise, so
            // edges land proportional to the excluded-rate form
            let reject_pure = params.variant == Variant::Omni && k >= params.n_classes();
            let mut fenwick = Fenwick::new(&weights);
            let mut event_rng = substream(spec.seed, "generation", cell);
            let mut picked = Vec::with_capacity(d);
            for _ in 0..events {
                let mut accepted = false;
                for _attempt in 0..100 {
                    picked.clear();
                    for _ in 0..d {
                        let mass = fenwick.total();
                        let idx = fenwick.find(event_rng.gen::<f64>() * mass);
                        picked.push(idx as u32);
                        fenwick.add(idx, -weights[idx]);
                    }
                    for &i in &picked {
                        fenwick.add(i as usize, weights[i as usize]);
                    }
                    if reject_pure {
                        let rho = disassortative_share(params, &m, &picked, k, d);
                        if event_rng.gen::<f64>() >= rho {
                            continue;
                        }
                    }
                    accepted = true;
                    break;
                }
                if !accepted {
                    log::warn!("order-{d} community {k}: event rejected 100 times; skipped");
                    continue;
                }
                picked.sort_unstable();
                graph.add_count(Hyperedge::new(picked.clone())?, 1);
            }
        }
    }
    Ok(graph)
}
