//! Python bindings for `zphase-core`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use zphase_core::geometry::{self, PhaseBinning, ZPhase};
use zphase_core::matching::Condition;
use zphase_core::report::{self, AuditConfig, OutputFormat};
use zphase_core::simulator::{self, SspShape, SyntheticNodule};
use zphase_core::stats::{self, BootstrapConfig};
use zphase_core::{fixtures, ingest, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

#[pyclass(name = "VolumeGeometry", frozen)]
struct PyVolumeGeometry {
    inner: geometry::VolumeGeometry,
}

#[pymethods]
impl PyVolumeGeometry {
    #[new]
    #[pyo3(signature = (z_origin_mm, recon_interval_mm, pixel_spacing_mm=(1.0, 1.0), slice_count=1, xy_origin_mm=(0.0, 0.0)))]
    fn new(
        z_origin_mm: f64,
        recon_interval_mm: f64,
        pixel_spacing_mm: (f64, f64),
        slice_count: u32,
        xy_origin_mm: (f64, f64),
    ) -> PyResult<Self> {
        let inner = geometry::VolumeGeometry::new(
            z_origin_mm,
            recon_interval_mm,
            [pixel_spacing_mm.0, pixel_spacing_mm.1],
            slice_count,
        )
        .map_err(to_py)?
        .with_xy_origin([xy_origin_mm.0, xy_origin_mm.1])
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn z_origin_mm(&self) -> f64 {
        self.inner.z_origin_mm
    }

    #[getter]
    fn recon_interval_mm(&self) -> f64 {
        self.inner.recon_interval_mm
    }

    #[getter]
    fn pixel_spacing_mm(&self) -> (f64, f64) {
        (self.inner.pixel_spacing_mm[0], self.inner.pixel_spacing_mm[1])
    }

    #[getter]
    fn slice_count(&self) -> u32 {
        self.inner.slice_count
    }

    /// Z-phase of a position in mm.
    fn zphase(&self, z_mm: f64) -> PyResult<f64> {
        compute_zphase(z_mm, self)
    }

    fn __repr__(&self) -> String {
        format!(
            "VolumeGeometry(z_origin_mm={}, recon_interval_mm={}, slice_count={})",
            self.inner.z_origin_mm, self.inner.recon_interval_mm, self.inner.slice_count
        )
    }
}

#[pyclass(name = "SliceModel", frozen)]
struct PySliceModel {
    inner: simulator::SliceModel,
}

#[pymethods]
impl PySliceModel {
    /// `ssp_width_mm` defaults to the interval; `shape` is rect, triangular or gaussian.
    #[new]
    #[pyo3(signature = (recon_interval_mm, ssp_width_mm=None, shape="rect"))]
    fn new(recon_interval_mm: f64, ssp_width_mm: Option<f64>, shape: &str) -> PyResult<Self> {
        let shape: SspShape = parse(shape)?;
        let inner = simulator::SliceModel::new(recon_interval_mm, ssp_width_mm.unwrap_or(recon_interval_mm), shape)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn recon_interval_mm(&self) -> f64 {
        self.inner.recon_interval_mm
    }

    #[getter]
    fn ssp_width_mm(&self) -> f64 {
        self.inner.ssp_width_mm
    }

    fn weight(&self, dz_mm: f64) -> f64 {
        self.inner.weight(dz_mm)
    }
}

#[pyfunction]
fn compute_zphase(z_mm: f64, geometry: &PyVolumeGeometry) -> PyResult<f64> {
    geometry::compute_zphase(z_mm, &geometry.inner)
        .map(ZPhase::value)
        .map_err(to_py)
}

/// Returns (index, lower, upper, center).
#[pyfunction]
#[pyo3(signature = (phase, bins=5))]
fn bin_phase(phase: f64, bins: usize) -> PyResult<(usize, f64, f64, f64)> {
    let binning = PhaseBinning::new(bins).map_err(to_py)?;
    let b = binning.bin_phase(ZPhase::new(phase).map_err(to_py)?);
    Ok((b.index, b.lower, b.upper, b.center))
}

#[pyfunction]
fn interval_diameter_ratio(interval_mm: f64, diameter_mm: f64) -> PyResult<f64> {
    geometry::interval_diameter_ratio(interval_mm, diameter_mm).map_err(to_py)
}

/// Parse one annotation XML document into plain dicts and lists.
#[pyfunction]
fn parse_annotations<'py>(py: Python<'py>, xml: &str) -> PyResult<Bound<'py, PyDict>> {
    let doc = ingest::parse_annotations(xml.as_bytes()).map_err(to_py)?;
    let sessions = doc
        .sessions
        .iter()
        .map(|s| {
            let anns = s
                .annotations
                .iter()
                .map(|a| {
                    let d = PyDict::new(py);
                    d.set_item("reader_id", &a.reader_id)?;
                    d.set_item("nodule_id", &a.nodule_id)?;
                    let rois: Vec<(f64, Vec<(f64, f64)>)> =
                        a.rois.iter().map(|r| (r.z_position_mm, r.edge_points.clone())).collect();
                    d.set_item("rois", rois)?;
                    d.set_item("characteristics", a.characteristics.clone())?;
                    Ok(d)
                })
                .collect::<PyResult<Vec<_>>>()?;
            let d = PyDict::new(py);
            d.set_item("reader_id", &s.reader_id)?;
            d.set_item("annotations", anns)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("series_uid", doc.series_uid)?;
    out.set_item("sessions", sessions)?;
    out.set_item(
        "skipped",
        doc.skipped.iter().map(|d| d.message.clone()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

#[pyfunction]
fn sensitivity(detected: Vec<bool>) -> PyResult<f64> {
    if detected.is_empty() {
        return Err(to_py(Error::EmptyCell));
    }
    Ok(detected.iter().filter(|&&d| d).count() as f64 / detected.len() as f64)
}

/// Percentile bootstrap interval of a detection rate.
#[pyfunction]
#[pyo3(signature = (detected, seed, resamples=2000, level=0.95))]
fn bootstrap_ci(py: Python<'_>, detected: Vec<bool>, seed: u64, resamples: usize, level: f64) -> PyResult<(f64, f64)> {
    let config = BootstrapConfig {
        resamples,
        level,
        ..BootstrapConfig::new(seed)
    };
    py.detach(|| stats::bootstrap_ci_flags(&detected, &config)).map_err(to_py)
}

#[pyfunction]
fn plane_signal(diameter_mm: f64, z_offset_mm: f64, slice: &PySliceModel, plane_z_mm: f64) -> PyResult<f64> {
    let n = SyntheticNodule::new(diameter_mm, z_offset_mm).map_err(to_py)?;
    Ok(simulator::plane_signal(&n, &slice.inner, plane_z_mm))
}

#[pyfunction]
fn max_plane_fraction(diameter_mm: f64, z_offset_mm: f64, slice: &PySliceModel) -> PyResult<f64> {
    let n = SyntheticNodule::new(diameter_mm, z_offset_mm).map_err(to_py)?;
    Ok(simulator::max_plane_fraction(&n, &slice.inner))
}

#[pyfunction]
fn simulate_detection(diameter_mm: f64, z_offset_mm: f64, slice: &PySliceModel, threshold: f64) -> PyResult<bool> {
    let n = SyntheticNodule::new(diameter_mm, z_offset_mm).map_err(to_py)?;
    simulator::simulate_detection(&n, &slice.inner, threshold).map_err(to_py)
}

/// Detection-rate sweep; returns one dict per (ratio, phase) cell.
#[pyfunction]
#[pyo3(signature = (phases, ratios, slice, seed, threshold=0.6, n_per_cell=500, noise_sd=0.05))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    phases: Vec<f64>,
    ratios: Vec<f64>,
    slice: &PySliceModel,
    seed: u64,
    threshold: f64,
    n_per_cell: usize,
    noise_sd: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = simulator::SweepConfig {
        phases,
        ratios,
        slice: slice.inner,
        threshold,
        n_per_cell,
        noise_sd,
        seed,
        bootstrap: None,
    };
    let cells = py.detach(|| simulator::sweep(&config)).map_err(to_py)?;
    cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("ratio", c.ratio)?;
            d.set_item("phase", c.phase)?;
            d.set_item("diameter_mm", c.diameter_mm)?;
            d.set_item("clean_max_fraction", c.clean_max_fraction)?;
            d.set_item("detected", c.detected)?;
            d.set_item("total", c.total)?;
            d.set_item("sensitivity", c.sensitivity())?;
            Ok(d)
        })
        .collect()
}

/// Run the full audit and write its tables; returns the condition summary
/// as (condition, detected, total) tuples and the written paths.
#[pyfunction]
#[pyo3(signature = (annotations_dir, manifest, detections, out_dir, seed, resamples=2000, format="csv"))]
#[allow(clippy::too_many_arguments)]
fn run_audit(
    py: Python<'_>,
    annotations_dir: PathBuf,
    manifest: PathBuf,
    detections: BTreeMap<String, PathBuf>,
    out_dir: PathBuf,
    seed: u64,
    resamples: usize,
    format: &str,
) -> PyResult<(Vec<(String, usize, usize)>, Vec<PathBuf>)> {
    let detections = detections
        .into_iter()
        .map(|(c, p)| Ok((parse::<Condition>(&c)?, p)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let mut config = AuditConfig::new(annotations_dir, manifest, detections, out_dir, seed);
    config.analysis.resamples = resamples;
    config.format = parse::<OutputFormat>(format)?;
    let (report, files) = py.detach(|| report::execute_audit(&config)).map_err(to_py)?;
    let summary = report
        .tables
        .condition_summary
        .iter()
        .map(|(c, cell)| (c.label().to_string(), cell.detected, cell.total))
        .collect();
    Ok((summary, files))
}

/// Write the reference-cohort input bundle; returns the manifest path.
#[pyfunction]
fn write_fixtures(out_dir: PathBuf) -> PyResult<PathBuf> {
    let bundle = fixtures::reference_cohort_bundle().map_err(to_py)?;
    Ok(bundle.write_to(&out_dir).map_err(to_py)?.manifest)
}

#[pymodule]
fn zphase_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolumeGeometry>()?;
    m.add_class::<PySliceModel>()?;
    m.add_function(wrap_pyfunction!(compute_zphase, m)?)?;
    m.add_function(wrap_pyfunction!(bin_phase, m)?)?;
    m.add_function(wrap_pyfunction!(interval_diameter_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(parse_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(plane_signal, m)?)?;
    m.add_function(wrap_pyfunction!(max_plane_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_detection, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_audit, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixtures, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
