use krpsample::als::{self, AlsOptions, Preprocess, Solver};
use krpsample::bench::{self, DistCheckConfig};
use krpsample::dense::{self, Matrix};
use krpsample::io::{self, TnsOptions};
use krpsample::krp::{self, RowOrder};
use krpsample::lstsq::{self, SketchConfig};
use krpsample::tensor::{self, DenseTensor, KruskalTensor, SparseTensorCoo};
use krpsample::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn matrices(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Matrix>> {
    factors.into_iter().map(matrix).collect()
}

/// Leverage-score sampler for rows of a Khatri-Rao product. Factors are
/// lists of rows.
#[pyclass(module = "krpsample_py")]
struct KrpSampler {
    inner: krp::KrpSampler,
}

#[pymethods]
impl KrpSampler {
    #[new]
    fn new(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let inner = krp::KrpSampler::new(&matrices(factors)?).map_err(err)?;
        Ok(KrpSampler { inner })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    /// Returns `(indices, probabilities)`: one multi-index per draw over
    /// the sampled modes, and each draw's probability.
    #[pyo3(signature = (count, seed, excluded=None))]
    fn sample(&self, count: usize, seed: u64, excluded: Option<usize>) -> PyResult<(Vec<Vec<usize>>, Vec<f64>)> {
        let b = self.inner.sample_seeded(excluded, count, seed).map_err(err)?;
        let idx = b.multi_indices().map(<[usize]>::to_vec).collect();
        Ok((idx, b.probabilities))
    }

    /// Flat row indices, first factor slowest.
    #[pyo3(signature = (count, seed, excluded=None))]
    fn sample_rows(&self, count: usize, seed: u64, excluded: Option<usize>) -> PyResult<Vec<usize>> {
        let b = self.inner.sample_seeded(excluded, count, seed).map_err(err)?;
        Ok(b.flat_indices(RowOrder::FirstSlowest))
    }

    #[pyo3(signature = (k, h, excluded=None))]
    fn conditional_distribution(&self, k: usize, h: Vec<f64>, excluded: Option<usize>) -> PyResult<Vec<f64>> {
        self.inner.conditional_distribution(excluded, k, &h).map_err(err)
    }

    /// `(score, probability)` of one row.
    #[pyo3(signature = (index, excluded=None))]
    fn leverage(&self, index: Vec<usize>, excluded: Option<usize>) -> PyResult<(f64, f64)> {
        self.inner.leverage(excluded, &index).map_err(err)
    }

    fn update_factor(&mut self, j: usize, factor: Vec<Vec<f64>>) -> PyResult<()> {
        self.inner.update_factor(j, &matrix(factor)?).map_err(err)
    }

    fn update_entry(&mut self, j: usize, row: usize, col: usize, value: f64) -> PyResult<()> {
        self.inner.update_factor_entry(j, row, col, value).map_err(err)
    }

    fn factor(&self, j: usize) -> PyResult<Vec<Vec<f64>>> {
        if j >= self.inner.factor_count() {
            return Err(PyValueError::new_err(format!("factor {j} out of range")));
        }
        Ok(self.inner.factor(j).to_rows())
    }
}

/// Dense or sparse order-N tensor with 0-based coordinates.
#[pyclass(module = "krpsample_py")]
struct Tensor {
    inner: tensor::Tensor,
}

#[pymethods]
impl Tensor {
    /// Values in first-mode-fastest order.
    #[staticmethod]
    fn dense(dims: Vec<usize>, values: Vec<f64>) -> PyResult<Self> {
        let t = DenseTensor::new(dims, values).map_err(err)?;
        Ok(Tensor { inner: tensor::Tensor::Dense(t) })
    }

    #[staticmethod]
    fn sparse(dims: Vec<usize>, coords: Vec<Vec<usize>>, values: Vec<f64>) -> PyResult<Self> {
        if coords.len() != values.len() {
            return Err(PyValueError::new_err("coords and values differ in length"));
        }
        let t = SparseTensorCoo::from_entries(dims, coords.into_iter().zip(values).collect()).map_err(err)?;
        Ok(Tensor { inner: tensor::Tensor::Sparse(t) })
    }

    #[staticmethod]
    #[pyo3(signature = (path, dims=None, log1p=false))]
    fn from_tns(path: &str, dims: Option<Vec<usize>>, log1p: bool) -> PyResult<Self> {
        let t = io::parse_tns(path, &TnsOptions { dims, log1p }).map_err(err)?;
        Ok(Tensor { inner: tensor::Tensor::Sparse(t) })
    }

    /// Low-rank tensor plus Gaussian noise of relative size `noise`.
    #[staticmethod]
    #[pyo3(signature = (dims, rank, noise, seed=0))]
    fn synthetic(dims: Vec<usize>, rank: usize, noise: f64, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = als::synthetic_tensor(&dims, rank, noise, &mut rng).map_err(err)?;
        Ok(Tensor { inner })
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn is_sparse(&self) -> bool {
        matches!(self.inner, tensor::Tensor::Sparse(_))
    }

    fn norm_sq(&self) -> f64 {
        self.inner.norm_sq()
    }

    fn log1p(&self) -> Tensor {
        Tensor { inner: self.inner.log1p() }
    }

    fn mttkrp(&self, j: usize, factors: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.mttkrp(j, &matrices(factors)?).map_err(err)?.to_rows())
    }
}

/// CP model `Σ_r σ_r U_1[:, r] ∘ ... ∘ U_N[:, r]`.
#[pyclass(module = "krpsample_py")]
struct Model {
    inner: KruskalTensor,
}

#[pymethods]
impl Model {
    /// Normalizes factor columns into `sigma`.
    #[new]
    fn new(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let inner = KruskalTensor::from_factors(matrices(factors)?).map_err(err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model { inner: io::load_model(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_model(&self.inner, path).map_err(err)
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma.clone()
    }

    #[getter]
    fn factors(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.factors.iter().map(Matrix::to_rows).collect()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    fn entry(&self, coords: Vec<usize>) -> PyResult<f64> {
        let dims = self.inner.dims();
        if coords.len() != dims.len() || coords.iter().zip(&dims).any(|(c, d)| c >= d) {
            return Err(PyValueError::new_err(format!("coordinate {coords:?} outside {dims:?}")));
        }
        Ok(self.inner.entry(&coords))
    }

    fn fit(&self, tensor: &Tensor) -> PyResult<f64> {
        tensor::fit(&self.inner, &tensor.inner).map_err(err)
    }
}

#[pyfunction]
fn gram(a: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(dense::gram(&matrix(a)?).to_rows())
}

/// Khatri-Rao product, first operand slowest.
#[pyfunction]
fn khatri_rao(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
    let m = matrices(factors)?;
    let refs: Vec<&Matrix> = m.iter().collect();
    Ok(dense::khatri_rao_chain(&refs).map_err(err)?.to_rows())
}

#[pyfunction]
fn leverage_scores(a: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    lstsq::leverage_scores(&matrix(a)?).map_err(err)
}

/// Runs CP-ALS and returns `(model, info)`.
#[pyfunction]
#[pyo3(signature = (
    tensor, rank, solver="sts-cp", samples=4096, max_rounds=100, epoch_length=5,
    tolerance=1e-4, preprocess="none", epsilon_oracle=false, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn decompose<'py>(
    py: Python<'py>,
    tensor: &Tensor,
    rank: usize,
    solver: &str,
    samples: usize,
    max_rounds: usize,
    epoch_length: usize,
    tolerance: f64,
    preprocess: &str,
    epsilon_oracle: bool,
    seed: u64,
) -> PyResult<(Model, Bound<'py, PyDict>)> {
    let opts = AlsOptions {
        max_rounds,
        epoch_length,
        stop_tolerance: tolerance,
        solver: solver.parse::<Solver>().map_err(err)?,
        sketch: SketchConfig {
            samples,
            seed,
            ..SketchConfig::default()
        },
        preprocess: preprocess.parse::<Preprocess>().map_err(err)?,
        fit_every_round: false,
        epsilon_oracle,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = als::decompose(&tensor.inner, rank, &opts, &mut rng).map_err(err)?;
    let info = PyDict::new(py);
    info.set_item("epoch_fits", res.epoch_fits)?;
    info.set_item("final_fit", res.final_fit)?;
    info.set_item("converged", res.converged)?;
    info.set_item("rounds", res.rounds.len())?;
    let eps: Vec<f64> = res.rounds.iter().flat_map(|r| r.solves.iter().filter_map(|s| s.epsilon)).collect();
    info.set_item("solve_epsilon", eps)?;
    Ok((Model { inner: res.model }, info))
}

/// Histogram check of the sampler against exact leverage scores; returns
/// the run record as JSON.
#[pyfunction]
#[pyo3(signature = (modes=3, rows=8, rank=8, samples=50_000, spike_fraction=0.01, seed=0))]
fn dist_check(modes: usize, rows: usize, rank: usize, samples: usize, spike_fraction: f64, seed: u64) -> PyResult<String> {
    let cfg = DistCheckConfig {
        modes,
        rows,
        rank,
        samples,
        spike_fraction,
        seed,
    };
    bench::cmd_dist_check(&cfg).and_then(|r| r.to_json()).map_err(err)
}

#[pymodule]
fn krpsample_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KrpSampler>()?;
    m.add_class::<Tensor>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gram, m)?)?;
    m.add_function(wrap_pyfunction!(khatri_rao, m)?)?;
    m.add_function(wrap_pyfunction!(leverage_scores, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(dist_check, m)?)?;
    Ok(())
}
