//! Python bindings for the core library: parsing, fitting, scoring, and
//! synthetic generation.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hypermeso_core::compute::PhiTables;
use hypermeso_core::generate::{sample_hypergraph, GenSpec};
use hypermeso_core::hypergraph::{parse_hyperedges, write_hyperedges, ParseOptions};
use hypermeso_core::inference::{self, e_step, EdgeList, FitConfig};
use hypermeso_core::metrics::MetricReport;
use hypermeso_core::params::PriorSpec;
use hypermeso_core::{Error, Hyperedge, Variant};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::Json(_) => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// Sparse multi-order hypergraph with count-valued hyperedges.
#[pyclass(name = "Hypergraph")]
#[derive(Clone)]
struct PyHypergraph {
    inner: hypermeso_core::Hypergraph,
}

#[pymethods]
impl PyHypergraph {
    /// Builds a hypergraph from (nodes, count) pairs over `n_nodes` nodes.
    #[new]
    fn new(n_nodes: usize, edges: Vec<(Vec<u32>, u64)>) -> PyResult<Self> {
        let mut inner = hypermeso_core::Hypergraph::new(n_nodes);
        for (nodes, count) in edges {
            inner.add_count(Hyperedge::new(nodes).map_err(to_py)?, count);
        }
        Ok(PyHypergraph { inner })
    }

    /// Parses the hyperedge text format (one edge per line).
    #[staticmethod]
    #[pyo3(signature = (path, max_order = 64))]
    fn parse(path: &str, max_order: usize) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let options = ParseOptions {
            max_order,
            ..ParseOptions::default()
        };
        let inner = parse_hyperedges(BufReader::new(file), &options).map_err(to_py)?;
        Ok(PyHypergraph { inner })
    }

    fn write(&self, path: &str, aggregate: bool) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        write_hyperedges(&self.inner, BufWriter::new(file), aggregate).map_err(to_py)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn max_order(&self) -> usize {
        self.inner.max_order()
    }

    fn edges(&self) -> Vec<(Vec<u32>, u64)> {
        let mut out: Vec<(Vec<u32>, u64)> = self
            .inner
            .iter()
            .map(|(e, c)| (e.nodes().to_vec(), c))
            .collect();
        out.sort();
        out
    }

    fn summarize<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let stats = self.inner.summarize();
        let dict = PyDict::new_bound(py);
        dict.set_item("n_nodes", stats.n_nodes)?;
        dict.set_item("n_nz", stats.n_nz)?;
        dict.set_item("a_bullet", stats.a_bullet)?;
        dict.set_item("max_order", stats.max_order)?;
        dict.set_item("mean_order", stats.mean_order)?;
        dict.set_item("pct_pairwise", stats.pct_pairwise)?;
        Ok(dict)
    }

    fn __len__(&self) -> usize {
        self.inner.iter().count()
    }
}

/// Fitted or hand-specified model parameters.
#[pyclass(name = "ModelParams")]
#[derive(Clone)]
struct PyModelParams {
    inner: hypermeso_core::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let inner =
            hypermeso_core::ModelParams::load_json(BufReader::new(file)).map_err(to_py)?;
        Ok(PyModelParams { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner.save_json(BufWriter::new(file)).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn n_communities(&self) -> usize {
        self.inner.n_communities()
    }

    #[getter]
    fn max_order(&self) -> usize {
        self.inner.max_order
    }

    /// N x C class memberships as nested lists.
    #[getter]
    fn theta(&self) -> Vec<Vec<f64>> {
        self.inner.theta.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// C x K mixing matrix as nested lists.
    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        self.inner.w.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// (D - 1) x K per-order community rates; row 0 is order 2.
    #[getter]
    fn gamma(&self) -> Vec<Vec<f64>> {
        self.inner.gamma.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn normalized(&self) -> PyResult<Self> {
        Ok(PyModelParams {
            inner: self.inner.normalize().map_err(to_py)?,
        })
    }
}

/// Fits the model; returns (params, final_loglik, best_restart).
#[pyfunction]
#[pyo3(signature = (
    graph, variant, n_classes, n_communities,
    max_order = None, max_iters = 1000, step_size = 1e-6, restarts = 10,
    seed = 0, prior_alpha = None, prior_beta = None,
    gamma_assortative_init = false
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    graph: &PyHypergraph,
    variant: &str,
    n_classes: usize,
    n_communities: usize,
    max_order: Option<usize>,
    max_iters: usize,
    step_size: f64,
    restarts: usize,
    seed: u64,
    prior_alpha: Option<f64>,
    prior_beta: Option<f64>,
    gamma_assortative_init: bool,
) -> PyResult<(PyModelParams, f64, usize)> {
    let mut config = FitConfig::new(parse_variant(variant)?, n_classes, n_communities);
    config.max_order = max_order;
    config.max_iters = max_iters;
    config.step_size = step_size;
    config.restarts = restarts;
    config.seed = seed;
    config.gamma_assortative_init = gamma_assortative_init;
    if prior_alpha.is_some() || prior_beta.is_some() {
        config.prior = Some(PriorSpec {
            alpha: prior_alpha.unwrap_or(1.0),
            beta: prior_beta.unwrap_or(0.0),
        });
    }
    let result = inference::fit(&graph.inner, &config).map_err(to_py)?;
    Ok((
        PyModelParams { inner: result.params },
        result.final_ll,
        result.best_restart,
    ))
}

/// Masks a split and scores it; returns a dict with per-order and total
/// heldout log-likelihoods.
#[pyfunction]
#[pyo3(signature = (graph, params, mask_seed = 0))]
fn heldout_score<'py>(
    py: Python<'py>,
    graph: &PyHypergraph,
    params: &PyModelParams,
    mask_seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let split = graph.inner.mask_split(mask_seed).map_err(to_py)?;
    let score = inference::heldout_score(&split, &params.inner);
    let dict = PyDict::new_bound(py);
    dict.set_item("total", score.total)?;
    dict.set_item("uniform", score.uniform)?;
    let per_order = PyDict::new_bound(py);
    for (d, (ll, n)) in &score.per_order {
        per_order.set_item(d, (ll, n))?;
    }
    dict.set_item("per_order", per_order)?;
    Ok(dict)
}

/// Samples a synthetic hypergraph from the parameters.
#[pyfunction]
#[pyo3(signature = (params, seed = 0, cap = None))]
fn generate(params: &PyModelParams, seed: u64, cap: Option<u64>) -> PyResult<PyHypergraph> {
    let spec = GenSpec {
        params: params.inner.clone(),
        seed,
        cap,
    };
    Ok(PyHypergraph {
        inner: sample_hypergraph(&spec).map_err(to_py)?,
    })
}

/// Computes the full metric report as a JSON string.
#[pyfunction]
fn metric_report(graph: &PyHypergraph, params: &PyModelParams) -> PyResult<String> {
    let edges = EdgeList::from_graph(&graph.inner);
    let phi = PhiTables::build(params.inner.mixed_memberships(), params.inner.max_order)
        .map_err(to_py)?;
    let stats = e_step(&edges, &params.inner, &phi);
    MetricReport::build(&params.inner, &edges, &stats, None)
        .to_json()
        .map_err(to_py)
}

#[pymodule]
fn hypermeso(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHypergraph>()?;
    m.add_class::<PyModelParams>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(heldout_score, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(metric_report, m)?)?;
    Ok(())
}
