//! Model parameter containers, constraints, initialization, and the
//! normalizing transformation into the identifiable class.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

/// Floor applied to free parameters after every update. Structural zeros of
/// the identity block are exempt.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// K = C, W = identity: purely diagonal affinity tensors.
    Strict,
    /// Nonnegative community rates; diagonal mass bounded below.
    Semi,
    /// Non-pure communities carry no diagonal mass, admitting strict
    /// disassortativity.
    Omni,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Strict => write!(f, "strict"),
            Variant::Semi => write!(f, "semi"),
            Variant::Omni => write!(f, "omni"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Variant::Strict),
            "semi" => Ok(Variant::Semi),
            "omni" => Ok(Variant::Omni),
            other => Err(Error::Dimension(format!("unknown variant '{other}'"))),
        }
    }
}

/// Optional Gamma prior on Theta and/or Gamma entries; alpha = 1, beta = 0
/// recovers maximum likelihood.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PriorSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { alpha: 1.0, beta: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub variant: Variant,
    /// N x C node-class memberships.
    pub theta: Array2<f64>,
    /// C x K class-community memberships; first C columns are the identity.
    pub w: Array2<f64>,
    /// (D - 1) x K community-order rates; row index is d - 2.
    pub gamma: Array2<f64>,
    pub max_order: usize,
}

impl ModelParams {
    pub fn n_nodes(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.theta.ncols()
    }

    pub fn n_communities(&self) -> usize {
        self.w.ncols()
    }

    /// Row of gamma for order d (2-based).
    pub fn gamma_at(&self, d: usize) -> ndarray::ArrayView1<'_, f64> {
        self.gamma.row(d - 2)
    }

    /// M = Theta W, the N x K node-community loadings.
    pub fn mixed_memberships(&self) -> Array2<f64> {
        self.theta.dot(&self.w)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, k) = (self.n_nodes(), self.n_classes(), self.n_communities());
        if self.w.nrows() != c {
            return Err(Error::Dimension("W row count != C".into()));
        }
        if c > k {
            return Err(Error::Dimension(format!("C = {c} must not exceed K = {k}")));
        }
        if k > n {
            return Err(Error::Dimension(format!("K = {k} must not exceed N = {n}")));
        }
        if self.variant == Variant::Strict && k != c {
            return Err(Error::Dimension("strict variant requires K = C".into()));
        }
        if self.max_order < 2 || self.gamma.nrows() != self.max_order - 1 {
            return Err(Error::Dimension("gamma rows must cover orders 2..=D".into()));
        }
        if self.gamma.ncols() != k {
            return Err(Error::Dimension("gamma columns != K".into()));
        }
        for c_idx in 0..c {
            for k_idx in 0..c {
                let expect = if c_idx == k_idx { 1.0 } else { 0.0 };
                if (self.w[[c_idx, k_idx]] - expect).abs() > 1e-12 {
                    return Err(Error::Dimension(
                        "first C columns of W must form the identity".into(),
                    ));
                }
            }
        }
        if self.theta.iter().chain(self.w.iter()).chain(self.gamma.iter()).any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Floors theta, gamma, and the free columns of W at EPS.
    pub fn apply_floor(&mut self) {
        let c = self.n_classes();
        self.theta.mapv_inplace(|v| v.max(EPS));
        self.gamma.mapv_inplace(|v| v.max(EPS));
        for mut col in self.w.columns_mut().into_iter().skip(c) {
            col.mapv_inplace(|v| v.max(EPS));
        }
    }

    /// Rescales into the identifiable class: Theta and W columns sum to 1,
    /// gamma absorbs the scale so every edge rate is unchanged.
    pub fn normalize(&self) -> Result<ModelParams> {
        let c = self.n_classes();
        let psi_c = self.theta.sum_axis(Axis(0));
        if psi_c.iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("zero Theta column sum in normalize".into()));
        }
        let mut theta = self.theta.clone();
        for (mut col, &p) in theta.columns_mut().into_iter().zip(psi_c.iter()) {
            col.mapv_inplace(|v| v / p);
        }
        let mut w = self.w.clone();
        let mut gamma = self.gamma.clone();
        for k in 0..self.n_communities() {
            let psi_k: f64 = (0..c).map(|cc| self.w[[cc, k]] * psi_c[cc]).sum();
            if psi_k <= 0.0 {
                return Err(Error::Numeric("zero psi_k in normalize".into()));
            }
            for cc in 0..c {
                w[[cc, k]] = self.w[[cc, k]] * psi_c[cc] / psi_k;
            }
            for d in 2..=self.max_order {
                gamma[[d - 2, k]] = self.gamma[[d - 2, k]] * psi_k.powi(d as i32);
            }
        }
        // structural identity block is preserved exactly
        for k in 0..c {
            for cc in 0..c {
                w[[cc, k]] = if cc == k { 1.0 } else { 0.0 };
            }
        }
        Ok(ModelParams {
            variant: self.variant,
            theta,
            w,
            gamma,
            max_order: self.max_order,
        })
    }

    /// Dense order-d affinity tensor, row-major over (c_1, ..., c_d).
    pub fn lambda_tensor(&self, d: usize) -> Result<Vec<f64>> {
        let c = self.n_classes();
        let k_total = self.n_communities();
        let size = (c as f64).powi(d as i32);
        if size > 1e7 {
            return Err(Error::Dimension(format!(
                "lambda tensor with C^d = {size} entries exceeds the materialization guard"
            )));
        }
        let size = size as usize;
        let gamma = self.gamma_at(d);
        let mut out = vec![0.0; size];
        let mut idx = vec![0usize; d];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for q in (0..d).rev() {
                idx[q] = rem % c;
                rem /= c;
            }
            let diagonal = idx.windows(2).all(|w| w[0] == w[1]);
            let mut acc = 0.0;
            for k in 0..k_total {
                if self.variant == Variant::Omni && k >= c && diagonal {
                    continue;
                }
                let prod: f64 = idx.iter().map(|&ci| self.w[[ci, k]]).product();
                acc += gamma[k] * prod;
            }
            *slot = acc;
        }
        Ok(out)
    }
}

/// Initializes parameters: theta rows symmetric-Dirichlet(1000), free W
/// columns symmetric-Dirichlet(1), first C columns identity, gamma all ones
/// (or 0.01 on pure communities under `gamma_assortative_init`).
pub fn init_params(
    n: usize,
    c: usize,
    k: usize,
    max_order: usize,
    variant: Variant,
    seed: u64,
    gamma_assortative_init: bool,
) -> Result<ModelParams> {
    if c < 1 || c > k || k > n || max_order < 2 {
        return Err(Error::Dimension(format!(
            "need 1 <= C <= K <= N and D >= 2, got C={c} K={k} N={n} D={max_order}"
        )));
    }
    if variant == Variant::Strict && k != c {
        return Err(Error::Dimension("strict variant requires K = C".into()));
    }
    let mut rng = stream(seed, "init-r");
    let mut theta = Array2::zeros((n, c));
    for mut row in theta.rows_mut() {
        let sample = dirichlet_row(&mut rng, c, 1e3);
        for (slot, v) in row.iter_mut().zip(sample) {
            *slot = v;
        }
    }
    let mut w = Array2::zeros((c, k));
    for cc in 0..c {
        w[[cc, cc]] = 1.0;
    }
    for kk in c..k {
        let sample = dirichlet_row(&mut rng, c, 1.0);
        for (cc, v) in sample.into_iter().enumerate() {
            w[[cc, kk]] = v;
        }
    }
    let mut gamma = Array2::ones((max_order - 1, k));
    if gamma_assortative_init {
        for kk in 0..c {
            gamma.column_mut(kk).fill(0.01);
        }
    }
    let params = ModelParams {
        variant,
        theta,
        w,
        gamma,
        max_order,
    };
    params.validate()?;
    Ok(params)
}

fn dirichlet_row<R: Rng>(rng: &mut R, dim: usize, concentration: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    let dist = Dirichlet::new_with_size(concentration, dim).expect("valid Dirichlet");
    dist.sample(rng)
}

/// JSON checkpoint, loss-free at full double precision.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub variant: Variant,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
    /// Row-major N x C.
    pub theta: Vec<f64>,
    /// Row-major C x K.
    pub w: Vec<f64>,
    /// Order-major (D - 1) x K, orders 2..=D.
    pub gamma: Vec<f64>,
}

impl From<&ModelParams> for Checkpoint {
    fn from(p: &ModelParams) -> Self {
        Checkpoint {
            variant: p.variant,
            n: p.n_nodes(),
            c: p.n_classes(),
            k: p.n_communities(),
            d: p.max_order,
            theta: p.theta.iter().copied().collect(),
            w: p.w.iter().copied().collect(),
            gamma: p.gamma.iter().copied().collect(),
        }
    }
}

impl TryFrom<Checkpoint> for ModelParams {
    type Error = Error;
    fn try_from(ck: Checkpoint) -> Result<ModelParams> {
        let theta = Array2::from_shape_vec((ck.n, ck.c), ck.theta)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let w = Array2::from_shape_vec((ck.c, ck.k), ck.w)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let gamma = Array2::from_shape_vec((ck.d - 1, ck.k), ck.gamma)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let params = ModelParams {
            variant: ck.variant,
            theta,
            w,
            gamma,
            max_order: ck.d,
        };
        params.validate()?;
        Ok(params)
    }
}

impl ModelParams {
    pub fn save_json<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &Checkpoint::from(self))?;
        Ok(())
    }

    pub fn load_json<R: std::io::Read>(input: R) -> Result<ModelParams> {
        let ck: Checkpoint = serde_json::from_reader(input)?;
        ck.try_into()
    }
}
