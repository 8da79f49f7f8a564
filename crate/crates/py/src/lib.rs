//! Python module `frenet_py`: tensors, spectra, RAW packing, networks and
//! metrics.

use std::path::PathBuf;

use frenet::arch::{build_frenet, Checkpoint, Frenet, NetworkConfig};
use frenet::raw::{self, PreprocessSpec};
use frenet::spectral::{self, ComplexTensor};
use frenet::train;
use frenet::verify::{self, Suite};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: frenet::Error) -> PyErr {
    match e {
        frenet::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for frenet::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Dense float32 tensor, row-major.
#[pyclass(name = "Tensor", module = "frenet_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor(pub frenet::Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self(frenet::Tensor::new(&shape, data).py()?))
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self(frenet::Tensor::zeros(&shape))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(frenet::tensor::ften::load(path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        frenet::tensor::ften::save(&self.0, path).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

fn complex(re: &PyTensor, im: &PyTensor) -> PyResult<ComplexTensor> {
    ComplexTensor::new(re.0.clone(), im.0.clone()).py()
}

fn split(x: ComplexTensor) -> (PyTensor, PyTensor) {
    let (re, im) = x.into_parts();
    (PyTensor(re), PyTensor(im))
}

/// Orthonormal per-channel 2-D FFT; returns `(re, im)`.
#[pyfunction]
fn fft2d(x: &PyTensor) -> PyResult<(PyTensor, PyTensor)> {
    Ok(split(spectral::fft2d(&x.0).py()?))
}

/// Inverse of `fft2d`, real part only.
#[pyfunction]
fn ifft2d(re: &PyTensor, im: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor(spectral::ifft2d(&complex(re, im)?).py()?))
}

#[pyfunction]
#[pyo3(signature = (re, im, inverse = false))]
fn fft_shift(re: &PyTensor, im: &PyTensor, inverse: bool) -> PyResult<(PyTensor, PyTensor)> {
    Ok(split(spectral::fft_shift(&complex(re, im)?, inverse).py()?))
}

#[pyfunction]
fn bayer_pack(x: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor(raw::bayer_pack(&x.0).py()?))
}

#[pyfunction]
fn bayer_unpack(x: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor(raw::bayer_unpack(&x.0).py()?))
}

/// Black-level subtraction and white-level normalization to `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (x, black_level = None, white_level = None))]
fn preprocess_raw(x: &PyTensor, black_level: Option<f64>, white_level: Option<f64>) -> PyResult<PyTensor> {
    let d = PreprocessSpec::default();
    let spec = PreprocessSpec {
        black_level: black_level.unwrap_or(d.black_level),
        white_level: white_level.unwrap_or(d.white_level),
    };
    Ok(PyTensor(raw::preprocess_raw(&x.0, &spec).py()?))
}

#[pyfunction]
#[pyo3(signature = (a, b, peak = 1.0))]
fn psnr(a: &PyTensor, b: &PyTensor, peak: f64) -> PyResult<f64> {
    train::psnr(&a.0, &b.0, peak).py()
}

#[pyfunction]
fn ssim(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    train::ssim(&a.0, &b.0).py()
}

/// Runs an invariant suite; returns `(passed, report lines)`.
#[pyfunction]
#[pyo3(signature = (suite = "all", seed = 0))]
fn run_verify(suite: &str, seed: u64) -> PyResult<(bool, Vec<String>)> {
    let suite: Suite = suite.parse().py()?;
    let reports = verify::run(suite, seed).py()?;
    let ok = reports.iter().all(|r| r.passed());
    let lines = reports
        .iter()
        .flat_map(|r| r.to_string().lines().map(str::to_owned).collect::<Vec<_>>())
        .collect();
    Ok((ok, lines))
}

/// Network hyperparameters.
#[pyclass(name = "NetworkConfig", module = "frenet_py", from_py_object)]
#[derive(Clone)]
pub struct PyNetworkConfig(pub NetworkConfig);

#[pymethods]
impl PyNetworkConfig {
    /// `frenet`, `frenet_plus` or `tiny`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self(NetworkConfig::preset(name).py()?))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self(NetworkConfig::from_text(text).py()?))
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn with_input(&self, h: usize, w: usize) -> Self {
        Self(self.0.clone().with_input(h, w))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn in_channels(&self) -> usize {
        self.0.in_channels
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        (self.0.in_channels, self.0.input_h, self.0.input_w)
    }

    #[getter]
    fn total_blocks(&self) -> usize {
        self.0.total_blocks()
    }

    fn __repr__(&self) -> String {
        format!(
            "NetworkConfig(width={}, blocks={:?}/{}/{:?}, input={:?})",
            self.0.width,
            self.0.enc_blocks,
            self.0.bottleneck_blocks,
            self.0.dec_blocks,
            self.input_shape()
        )
    }
}

/// A FrENet with its parameters.
#[pyclass(name = "Network", module = "frenet_py")]
pub struct PyNetwork(pub Frenet);

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyNetworkConfig, seed: u64) -> PyResult<Self> {
        Ok(Self(build_frenet(&config.0, seed).py()?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Checkpoint::load(&path).py()?.to_network().py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_network(&self.0, vec![], 0).save(&path).py()
    }

    #[getter]
    fn config(&self) -> PyNetworkConfig {
        PyNetworkConfig(self.0.cfg.clone())
    }

    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    /// `(params, conv_macs, fft_flops)` for one configured input.
    fn cost(&self) -> (usize, u64, u64) {
        let c = self.0.cost();
        (c.params, c.conv_macs, c.fft_flops)
    }

    fn forward(&self, py: Python<'_>, x: &PyTensor) -> PyResult<PyTensor> {
        let x = x.0.clone();
        Ok(PyTensor(py.detach(|| self.0.forward(&x)).py()?))
    }

    /// Sliding-window inference; overlap defaults to half the window.
    #[pyo3(signature = (x, overlap = None))]
    fn infer(&self, py: Python<'_>, x: &PyTensor, overlap: Option<usize>) -> PyResult<PyTensor> {
        let x = x.0.clone();
        let ov = overlap.unwrap_or(self.0.cfg.input_h / 2);
        Ok(PyTensor(py.detach(|| train::infer_tiled(&self.0, &x, ov)).py()?))
    }

    /// Centered spectra per block path, as `{path: (re, im)}`.
    fn spectra(&self, py: Python<'_>, x: &PyTensor) -> PyResult<Vec<(String, PyTensor, PyTensor)>> {
        let x = x.0.clone();
        let mut trace = frenet::arch::Trace::default();
        py.detach(|| self.0.forward_traced(&x, Some(&mut trace))).py()?;
        Ok(trace
            .spectra
            .into_iter()
            .map(|(name, s)| {
                let (re, im) = split(s);
                (name, re, im)
            })
            .collect())
    }
}

#[pymodule]
fn frenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyNetworkConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(fft2d, m)?)?;
    m.add_function(wrap_pyfunction!(ifft2d, m)?)?;
    m.add_function(wrap_pyfunction!(fft_shift, m)?)?;
    m.add_function(wrap_pyfunction!(bayer_pack, m)?)?;
    m.add_function(wrap_pyfunction!(bayer_unpack, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_raw, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
