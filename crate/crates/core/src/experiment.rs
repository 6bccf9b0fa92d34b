//! File-level pipeline: simulate, train, reconstruct, evaluate.
//!
//! Run directory layout (`output_dir`):
//!
//! ```text
//! <variant>/config.json            resolved configuration used for training
//! <variant>/checkpoints/layer_{l}/ manifest.json, conv*_*.mcta, train_log.csv
//! <variant>/images/<id>.mcta       final reconstructions
//! <variant>/trace.csv              layer,sample_id,rmse_hu (layer 0 is the FBP input)
//! inputs/<id>_{fbp,reference}.mcta
//! metrics.csv, curve.csv, panels/<id>.png
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_io::{load_matrix, save_matrix, write_atomic};
use crate::config::{ExperimentConfig, MaskKind};
use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::export::{export_image, hstack, Window};
use crate::fbp::fbp_reconstruct;
use crate::geometry::FanBeamGeometry;
use crate::grid::{Image, Sinogram};
use crate::metrics::{mean_std, rmse_hu};
use crate::momentum::{run_momentum_net, train_momentum_net, LayerConfig, MbirProblem, RunOptions, TrainingSample};
use crate::nn::checkpoint::{load_params, save_params};
use crate::nn::{DenoiserParams, Variant};
use crate::noise::{weights_for, NoiseModel};
use crate::projector::FanBeamProjector;

pub const TRACE_CSV: &str = "trace.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CURVE_CSV: &str = "curve.csv";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const FBP_METHOD: &str = "fbp";

pub fn method_dir(output_dir: &Path, variant: Variant) -> PathBuf {
    output_dir.join(variant.name())
}

pub fn checkpoint_dir(output_dir: &Path, variant: Variant) -> PathBuf {
    method_dir(output_dir, variant).join("checkpoints")
}

pub fn layer_dir(checkpoints: &Path, layer: usize) -> PathBuf {
    checkpoints.join(format!("layer_{layer}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub layer: usize,
    pub sample_id: String,
    pub rmse_hu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub mean_rmse_hu: f64,
    pub std_rmse_hu: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub layer: usize,
    pub mean_rmse_hu: f64,
    pub n: usize,
}

fn to_csv<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("CSV encoding: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("CSV encoding: {e}")))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn mask_for(kind: MaskKind, geom: &FanBeamGeometry) -> Option<ndarray::Array2<bool>> {
    match kind {
        MaskKind::Full => None,
        MaskKind::Fov => {
            let r = geom.fov_radius();
            Some(ndarray::Array2::from_shape_fn(geom.image_shape(), |(i, j)| {
                let [x, y] = geom.pixel_center(i, j);
                x * x + y * y <= r * r
            }))
        }
    }
}

fn open_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = Dataset::open(cfg.require_dataset()?)?;
    if ds.geometry() != &cfg.geometry {
        return Err(Error::Data(format!(
            "dataset at {} was simulated with a different geometry than the config",
            ds.root.display()
        )));
    }
    Ok(ds)
}

fn problem_for(op: &FanBeamProjector, y: &Sinogram, noise: &NoiseModel, cfg: &ExperimentConfig) -> Result<MbirProblem> {
    MbirProblem::new(op, y.clone(), weights_for(y, noise), cfg.net.chi, cfg.net.spectral)
}

/// Simulate the cohort described by the config.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Dataset> {
    crate::dataset::simulate_dataset(cfg)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoints: PathBuf,
    /// Final-epoch training loss per layer.
    pub final_loss: Vec<f64>,
}

/// Greedy training on the dataset's train split; writes `layer_{l}` checkpoints as they finish.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let ds = open_dataset(cfg)?;
    let op = FanBeamProjector::new(ds.geometry())?;
    let noise = &ds.manifest.noise;
    let samples = ds.load_split(Split::Train)?;
    if samples.is_empty() {
        return Err(Error::Data("dataset has no training members".into()));
    }
    let training: Vec<TrainingSample> = samples
        .par_iter()
        .map(|s| {
            Ok(TrainingSample {
                problem: problem_for(&op, &s.y, noise, cfg)?,
                x0: s.fbp.clone(),
                reference: s.reference.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let mdir = method_dir(&cfg.output_dir, cfg.variant);
    let ckpt = checkpoint_dir(&cfg.output_dir, cfg.variant);
    mkdir(&ckpt)?;
    let json = serde_json::to_vec_pretty(cfg).expect("config serialises");
    write_atomic(&mdir.join("config.json"), &json)?;
    let mut final_loss = Vec::with_capacity(cfg.net.layers);
    train_momentum_net(&op, &training, &cfg.net, &cfg.train, |l, params, log| {
        let dir = layer_dir(&ckpt, l);
        save_params(&dir, params, l, log.loss.len())?;
        write_atomic(&dir.join(TRAIN_LOG_CSV), log.to_csv().as_bytes())?;
        let last = log.loss.last().copied().unwrap_or(f64::NAN);
        log::info!("{}: layer {}/{} trained, loss {last:.4e}", cfg.variant, l + 1, cfg.net.layers);
        final_loss.push(last);
        Ok(())
    })?;
    Ok(TrainReport {
        checkpoints: ckpt,
        final_loss,
    })
}

/// Load `layer_0 … layer_{L-1}` from a checkpoint directory.
pub fn load_checkpoints(dir: &Path) -> Result<Vec<DenoiserParams<f32>>> {
    let mut out: Vec<DenoiserParams<f32>> = Vec::new();
    loop {
        let ldir = layer_dir(dir, out.len());
        if !ldir.is_dir() {
            break;
        }
        let (params, manifest) = load_params::<f32>(&ldir)?;
        if manifest.layer_index != out.len() {
            return Err(Error::Data(format!(
                "{} records layer index {}",
                ldir.display(),
                manifest.layer_index
            )));
        }
        if let Some(first) = out.first() {
            if first.variant != params.variant {
                return Err(Error::Data(format!("{} mixes variants", dir.display())));
            }
        }
        out.push(params);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no layer_0 checkpoint under {}", dir.display())));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ReconReport {
    pub method_dir: PathBuf,
    pub trace: Vec<TraceRow>,
    pub images: Vec<PathBuf>,
}

struct ReconOut {
    image: Image,
    rows: Vec<TraceRow>,
    layer_images: Vec<Image>,
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_one(
    op: &FanBeamProjector,
    cfg: &ExperimentConfig,
    noise: &NoiseModel,
    params: &[DenoiserParams<f32>],
    id: &str,
    y: &Sinogram,
    x0: &Image,
    reference: Option<&Image>,
) -> Result<ReconOut> {
    let problem = problem_for(op, y, noise, cfg)?;
    let layers: Vec<LayerConfig<'_>> = params
        .iter()
        .map(|p| LayerConfig {
            rho: cfg.net.rho,
            ..LayerConfig::new(p)
        })
        .collect();
    let opts = RunOptions {
        momentum: cfg.net.momentum,
        keep_images: cfg.eval.keep_layer_images,
        mask: mask_for(cfg.eval.mask, &cfg.geometry),
    };
    let rec = run_momentum_net(op, &problem, &layers, x0, reference, &opts)?;
    let mut rows = Vec::new();
    if let Some(r) = reference {
        rows.push(TraceRow {
            layer: 0,
            sample_id: id.to_string(),
            rmse_hu: rmse_hu(x0, r, opts.mask.as_ref())?,
        });
        rows.extend(rec.trace.iter().map(|t| TraceRow {
            layer: t.layer,
            sample_id: id.to_string(),
            rmse_hu: t.rmse_hu.expect("reference given"),
        }));
    }
    let layer_images = rec.trace.into_iter().filter_map(|t| t.image).collect();
    Ok(ReconOut {
        image: rec.image,
        rows,
        layer_images,
    })
}

/// Reconstruct with trained checkpoints.
///
/// `input` is either a dataset directory (every test member is reconstructed
/// and traced against its reference) or a single sinogram MCTA file, for
/// which `reference` optionally enables the trace.
pub fn reconstruct(
    cfg: &ExperimentConfig,
    checkpoints: &Path,
    input: &Path,
    reference: Option<&Path>,
) -> Result<ReconReport> {
    let params = load_checkpoints(checkpoints)?;
    let variant = params[0].variant;
    let mdir = method_dir(&cfg.output_dir, variant);
    let img_dir = mdir.join("images");
    mkdir(&img_dir)?;
    let inputs_dir = cfg.output_dir.join("inputs");

    let jobs: Vec<(Sample, bool)>;
    let geom;
    let noise;
    if input.is_dir() {
        let ds = Dataset::open(input)?;
        geom = ds.geometry().clone();
        noise = ds.manifest.noise.clone();
        jobs = ds.load_split(Split::Test)?.into_iter().map(|s| (s, true)).collect();
        if jobs.is_empty() {
            return Err(Error::Data("dataset has no test members".into()));
        }
    } else {
        geom = cfg.geometry.clone();
        noise = cfg.noise.clone();
        let y = Sinogram::new(load_matrix(input, Some(geom.sinogram_shape()))?);
        let fbp = fbp_reconstruct(&geom, &y, cfg.fbp.filter)?;
        let (ref_img, has_ref) = match reference {
            Some(p) => (Image::new(load_matrix(p, Some(geom.image_shape()))?), true),
            None => (Image::zeros(geom.n_pixels, geom.n_pixels), false),
        };
        let id = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into());
        jobs = vec![(
            Sample {
                id,
                y,
                fbp,
                reference: ref_img,
            },
            has_ref,
        )];
    }
    let op = FanBeamProjector::new(&geom)?;
    let mut run_cfg = cfg.clone();
    run_cfg.geometry = geom;
    let outs: Vec<ReconOut> = jobs
        .par_iter()
        .map(|(s, has_ref)| {
            let r = has_ref.then_some(&s.reference);
            reconstruct_one(&op, &run_cfg, &noise, &params, &s.id, &s.y, &s.fbp, r)
        })
        .collect::<Result<_>>()?;

    let mut trace = Vec::new();
    let mut images = Vec::new();
    mkdir(&inputs_dir)?;
    for ((s, has_ref), out) in jobs.iter().zip(outs) {
        let path = img_dir.join(format!("{}.mcta", s.id));
        save_matrix(&path, out.image.as_array())?;
        save_matrix(&inputs_dir.join(format!("{}_fbp.mcta", s.id)), s.fbp.as_array())?;
        if *has_ref {
            save_matrix(&inputs_dir.join(format!("{}_reference.mcta", s.id)), s.reference.as_array())?;
        }
        for (l, img) in out.layer_images.iter().enumerate() {
            let dir = mdir.join("layers").join(&s.id);
            mkdir(&dir)?;
            save_matrix(&dir.join(format!("layer_{}.mcta", l + 1)), img.as_array())?;
        }
        images.push(path);
        trace.extend(out.rows);
    }
    if !trace.is_empty() {
        write_csv(&mdir.join(TRACE_CSV), &trace)?;
    }
    Ok(ReconReport {
        method_dir: mdir,
        trace,
        images,
    })
}

#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub metrics: Vec<MetricsRow>,
    pub curve: Vec<CurveRow>,
    /// Human-readable notes on absent traces or samples.
    pub missing: Vec<String>,
    pub panels: Vec<PathBuf>,
}

impl Summary {
    pub fn row(&self, method: &str) -> Option<&MetricsRow> {
        self.metrics.iter().find(|r| r.method == method)
    }
}

fn summarize_values(method: &str, values: &[f64]) -> Option<MetricsRow> {
    mean_std(values).map(|(mean, std)| MetricsRow {
        method: method.to_string(),
        mean_rmse_hu: mean,
        std_rmse_hu: std,
        n: values.len(),
    })
}

/// Per-method final-layer statistics from traces.
pub fn summarize_traces(traces: &BTreeMap<String, Vec<TraceRow>>) -> (Vec<MetricsRow>, Vec<CurveRow>, Vec<String>) {
    let mut metrics = Vec::new();
    let mut curve = Vec::new();
    let mut missing = Vec::new();
    let all_ids: BTreeSet<&str> = traces.values().flatten().map(|r| r.sample_id.as_str()).collect();

    // FBP input error: layer 0, identical across methods; take the first trace that has it
    let mut fbp: BTreeMap<&str, f64> = BTreeMap::new();
    for rows in traces.values() {
        for r in rows.iter().filter(|r| r.layer == 0) {
            fbp.entry(r.sample_id.as_str()).or_insert(r.rmse_hu);
        }
    }
    if let Some(row) = summarize_values(FBP_METHOD, &fbp.values().copied().collect::<Vec<_>>()) {
        metrics.push(row);
    }

    for (method, rows) in traces {
        let mut per_sample: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
        for r in rows {
            per_sample.entry(r.sample_id.as_str()).or_default().insert(r.layer, r.rmse_hu);
        }
        for id in &all_ids {
            if !per_sample.contains_key(id) {
                missing.push(format!("{method}: no trace for sample {id}"));
            }
        }
        let finals: Vec<f64> = per_sample
            .values()
            .filter_map(|layers| layers.iter().next_back().map(|(_, &v)| v))
            .collect();
        if let Some(row) = summarize_values(method, &finals) {
            metrics.push(row);
        }
        let mut by_layer: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for layers in per_sample.values() {
            for (&l, &v) in layers {
                by_layer.entry(l).or_default().push(v);
            }
        }
        for (l, values) in by_layer {
            let (mean, _) = mean_std(&values).expect("nonempty by construction");
            curve.push(CurveRow {
                method: method.clone(),
                layer: l,
                mean_rmse_hu: mean,
                n: values.len(),
            });
        }
    }
    (metrics, curve, missing)
}

fn read_window(method_dir: &Path) -> Option<Window> {
    let bytes = std::fs::read(method_dir.join("config.json")).ok()?;
    let cfg: ExperimentConfig = serde_json::from_slice(&bytes).ok()?;
    Some(cfg.eval.window)
}

/// Write `metrics.csv`, `curve.csv` and PNG panels for every method in `run_dir`.
///
/// Methods whose directory lacks a trace are listed in [`Summary::missing`]
/// and left out of the tables.
pub fn evaluate(run_dir: &Path) -> Result<Summary> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut method_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(run_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && name.parse::<Variant>().is_ok() {
            method_dirs.push((name, entry.path()));
        }
    }
    method_dirs.sort();
    let mut traces = BTreeMap::new();
    let mut missing = Vec::new();
    let mut window = None;
    for (name, dir) in &method_dirs {
        let path = dir.join(TRACE_CSV);
        if path.is_file() {
            traces.insert(name.clone(), read_csv::<TraceRow>(&path)?);
            window = window.or_else(|| read_window(dir));
        } else {
            missing.push(format!("{name}: no {TRACE_CSV}"));
        }
    }
    if traces.is_empty() {
        return Err(Error::Data(format!("no traces found under {}", run_dir.display())));
    }
    let (metrics, curve, more) = summarize_traces(&traces);
    missing.extend(more);
    write_csv(&run_dir.join(METRICS_CSV), &metrics)?;
    write_csv(&run_dir.join(CURVE_CSV), &curve)?;

    let window = window.unwrap_or_default();
    let panels_dir = run_dir.join("panels");
    let ids: BTreeSet<String> = traces.values().flatten().map(|r| r.sample_id.clone()).collect();
    let mut panels = Vec::new();
    for id in &ids {
        let inputs = run_dir.join("inputs");
        let mut tiles = Vec::new();
        for path in [
            inputs.join(format!("{id}_reference.mcta")),
            inputs.join(format!("{id}_fbp.mcta")),
        ]
        .into_iter()
        .chain(method_dirs.iter().map(|(_, d)| d.join("images").join(format!("{id}.mcta"))))
        {
            if path.is_file() {
                tiles.push(Image::new(load_matrix(&path, None)?));
            }
        }
        if tiles.is_empty() {
            continue;
        }
        let refs: Vec<&Image> = tiles.iter().collect();
        mkdir(&panels_dir)?;
        let path = panels_dir.join(format!("{id}.png"));
        export_image(&hstack(&refs)?, &path, window)?;
        panels.push(path);
    }
    Ok(Summary {
        metrics,
        curve,
        missing,
        panels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(layer: usize, id: &str, v: f64) -> TraceRow {
        TraceRow {
            layer,
            sample_id: id.into(),
            rmse_hu: v,
        }
    }

    #[test]
    fn summary_statistics() {
        let mut traces = BTreeMap::new();
        traces.insert(
            "simplecnn".to_string(),
            vec![row(0, "a", 100.0), row(1, "a", 10.0), row(0, "b", 200.0), row(1, "b", 20.0)],
        );
        let (metrics, curve, missing) = summarize_traces(&traces);
        assert!(missing.is_empty());
        assert_eq!(metrics[0].method, "fbp");
        assert_eq!((metrics[0].mean_rmse_hu, metrics[0].std_rmse_hu), (150.0, 50.0));
        assert_eq!((metrics[1].mean_rmse_hu, metrics[1].std_rmse_hu, metrics[1].n), (15.0, 5.0, 2));
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[1].mean_rmse_hu, 15.0);
    }

    #[test]
    fn single_sample_has_zero_std() {
        let mut traces = BTreeMap::new();
        traces.insert("dn-rsn".to_string(), vec![row(0, "a", 50.0), row(3, "a", 7.0)]);
        let (metrics, _, _) = summarize_traces(&traces);
        assert_eq!(metrics[1].std_rmse_hu, 0.0);
        assert_eq!(metrics[1].mean_rmse_hu, 7.0);
    }

    #[test]
    fn missing_samples_listed() {
        let mut traces = BTreeMap::new();
        traces.insert("simplecnn".to_string(), vec![row(1, "a", 1.0), row(1, "b", 2.0)]);
        traces.insert("dn-rsn".to_string(), vec![row(1, "a", 1.0)]);
        let (_, _, missing) = summarize_traces(&traces);
        assert_eq!(missing, vec!["dn-rsn: no trace for sample b".to_string()]);
    }

    #[test]
    fn metrics_header() {
        let bytes = to_csv(&[MetricsRow {
            method: "fbp".into(),
            mean_rmse_hu: 1.5,
            std_rmse_hu: 0.0,
            n: 1,
        }])
        .unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,mean_rmse_hu,std_rmse_hu,n");
    }
}
