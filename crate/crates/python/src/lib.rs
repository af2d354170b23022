//! Python bindings: models, sessions and a few of the planning primitives.
//! Tensors cross the boundary as flat lists of floats in NCHW order.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use nano_infer::backend::{Backend, CpuBackend, MemoryMode, Session, SimBackend};
use nano_infer::bench::benchmark;
use nano_infer::compare::compare_schemes;
use nano_infer::graph::{fuse, load_model, save_model, Graph};
use nano_infer::preinference::{BackendCost, BackendPolicy, BackendProfile, CostModel, PlanOptions};
use nano_infer::presets::{preset, random_input, PRESETS};
use nano_infer::reference::run_reference;
use nano_infer::tensor::{Layout, Shape, Tensor};
use nano_infer::winograd::{generate_transforms, DEFAULT_SPACING};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn tensors(g: &Graph, inputs: Vec<Vec<f32>>) -> PyResult<Vec<Tensor>> {
    if inputs.len() != g.inputs().len() {
        return Err(err(format!("model takes {} inputs, got {}", g.inputs().len(), inputs.len())));
    }
    g.inputs()
        .iter()
        .zip(inputs)
        .map(|(&t, data)| Tensor::from_vec(g.shape(t).clone(), Layout::Nchw, data).map_err(err))
        .collect()
}

fn seeded_inputs(g: &Graph, seed: u64) -> Vec<Tensor> {
    g.inputs()
        .iter()
        .enumerate()
        .map(|(i, &t)| random_input(g.shape(t), seed.wrapping_add(i as u64)))
        .collect()
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    graph: Graph,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (name, seed = 0))]
    fn preset(name: &str, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            graph: preset(name, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(err)?;
        Self::from_bytes(&bytes)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel {
            graph: load_model(data).map_err(err)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &save_model(&self.graph).map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(path, save_model(&self.graph).map_err(err)?).map_err(err)
    }

    /// Copy with activations folded into the ops that feed them.
    fn fused(&self) -> PyResult<Self> {
        Ok(PyModel {
            graph: fuse(&self.graph).map_err(err)?,
        })
    }

    /// `(name, shape)` of each graph input.
    #[getter]
    fn inputs(&self) -> Vec<(String, Vec<usize>)> {
        let g = &self.graph;
        g.inputs()
            .iter()
            .map(|&t| (g.tensor(t).name.clone(), g.shape(t).dims().to_vec()))
            .collect()
    }

    #[getter]
    fn outputs(&self) -> Vec<(String, Vec<usize>)> {
        let g = &self.graph;
        g.outputs()
            .iter()
            .map(|&t| (g.tensor(t).name.clone(), g.shape(t).dims().to_vec()))
            .collect()
    }

    /// `(name, kind)` of each node in execution order.
    fn layers(&self) -> Vec<(String, String)> {
        self.graph
            .nodes()
            .iter()
            .map(|n| (n.name.clone(), n.kind().name().to_string()))
            .collect()
    }

    /// Outputs of the naive reference evaluator.
    #[pyo3(signature = (inputs = None, seed = 0))]
    fn reference(&self, inputs: Option<Vec<Vec<f32>>>, seed: u64) -> PyResult<Vec<Vec<f32>>> {
        let xs = match inputs {
            Some(v) => tensors(&self.graph, v)?,
            None => seeded_inputs(&self.graph, seed),
        };
        Ok(run_reference(&self.graph, &xs)
            .map_err(err)?
            .into_iter()
            .map(Tensor::into_data)
            .collect())
    }

    /// Every conv under each applicable scheme, as a dict.
    #[pyo3(signature = (threads = 4, spacing = DEFAULT_SPACING, reps = 3, seed = 0))]
    fn compare<'py>(&self, py: Python<'py>, threads: usize, spacing: f64, reps: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let xs = seeded_inputs(&self.graph, seed);
        let report = compare_schemes(&self.graph, &xs, threads, spacing, reps).map_err(err)?;
        to_py(py, &serde_json::to_value(report).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Model(nodes={}, inputs={:?})", self.graph.nodes().len(), self.inputs())
    }
}

/// A pre-inferred model bound to its backends.
#[pyclass(name = "Session", unsendable)]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (model, threads = 4, backend = "auto", spacing = DEFAULT_SPACING, cost_model = None))]
    fn new(model: &PyModel, threads: usize, backend: &str, spacing: f64, cost_model: Option<&str>) -> PyResult<Self> {
        let costs = match cost_model {
            Some(text) => CostModel::from_json(text).map_err(err)?,
            None => CostModel::default(),
        };
        let default = CostModel::default();
        let cost = |name: &str| {
            costs
                .get(name)
                .or_else(|| default.get(name))
                .copied()
                .expect("built-in table has cpu and sim")
        };
        let mut backends: Vec<Box<dyn Backend>> = vec![Box::new(CpuBackend::with_cost(cost("cpu"), MemoryMode::Pooled))];
        let policy = match backend {
            "cpu" => BackendPolicy::Force(0),
            "sim" => BackendPolicy::Force(1),
            "auto" => BackendPolicy::Auto,
            other => return Err(err(format!("unknown backend `{other}`, expected cpu, sim or auto"))),
        };
        if backend != "cpu" {
            backends.push(Box::new(SimBackend::with_profile(
                BackendProfile::all_kinds("sim", cost("sim")),
                MemoryMode::Pooled,
            )));
        }
        let options = PlanOptions {
            threads,
            spacing,
            policy,
            ..PlanOptions::default()
        };
        let graph = fuse(&model.graph).map_err(err)?;
        Ok(PySession {
            inner: Session::build(graph, backends, options).map_err(err)?,
        })
    }

    /// Runs once on flat NCHW inputs and returns the flat outputs.
    fn run(&mut self, inputs: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        let xs = tensors(self.inner.plan().graph(), inputs)?;
        Ok(self.inner.run(&xs).map_err(err)?.into_iter().map(Tensor::into_data).collect())
    }

    #[pyo3(signature = (runs = 10, warmup = 1, seed = 0))]
    fn benchmark<'py>(&mut self, py: Python<'py>, runs: usize, warmup: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let xs = seeded_inputs(self.inner.plan().graph(), seed);
        let (report, _) = benchmark(&mut self.inner, &xs, runs, warmup).map_err(err)?;
        to_py(py, &serde_json::to_value(report).map_err(err)?)
    }

    /// The execution plan as a dict.
    fn plan<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.plan().dump())
    }

    #[getter]
    fn backend(&self) -> String {
        self.inner.plan().chosen_backend().to_string()
    }

    /// Buffer allocations made by the backends so far.
    #[getter]
    fn allocations(&self) -> usize {
        self.inner.allocations()
    }
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.to_vec()
}

/// Seeded uniform [-1, 1] values for `shape`.
#[pyfunction]
#[pyo3(signature = (shape, seed = 0))]
fn random_tensor(shape: Vec<usize>, seed: u64) -> PyResult<Vec<f32>> {
    Ok(random_input(&Shape::new(shape).map_err(err)?, seed).into_data())
}

/// `{"A", "B", "G"}` of F(n, k) as nested row lists.
#[pyfunction]
#[pyo3(signature = (n, k, f = DEFAULT_SPACING))]
fn winograd_transforms<'py>(py: Python<'py>, n: usize, k: usize, f: f64) -> PyResult<Bound<'py, PyAny>> {
    let t = generate_transforms(n, k, f).map_err(err)?;
    let rows = |m: &[f64], cols: usize| m.chunks(cols).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let v = serde_json::json!({
        "n": t.n, "k": t.k, "alpha": t.alpha, "f": t.f,
        "A": rows(&t.a, t.n), "B": rows(&t.b, t.alpha), "G": rows(&t.g, t.k),
    });
    to_py(py, &v)
}

#[pyfunction]
fn choose_tile(k: usize, in_channels: usize, out_channels: usize, out_w: usize, out_h: usize) -> usize {
    nano_infer::winograd::choose_tile(k, in_channels, out_channels, out_w, out_h)
}

/// Estimated milliseconds for `mul` multiplications on a device of `flops`.
#[pyfunction]
#[pyo3(signature = (mul, flops, t_schedule_ms = 0.0))]
fn op_cost(mul: u64, flops: f64, t_schedule_ms: f64) -> f64 {
    let cost = if t_schedule_ms > 0.0 {
        BackendCost::gpu(flops, t_schedule_ms)
    } else {
        BackendCost::cpu(flops)
    };
    nano_infer::preinference::op_cost(mul, &cost)
}

#[pymodule]
#[pyo3(name = "nano_infer")]
fn nano_infer_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(random_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(winograd_transforms, m)?)?;
    m.add_function(wrap_pyfunction!(choose_tile, m)?)?;
    m.add_function(wrap_pyfunction!(op_cost, m)?)?;
    Ok(())
}
