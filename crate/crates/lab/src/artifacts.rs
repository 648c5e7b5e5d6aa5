use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use fracnet_core::operatormodel::{DeepONetModel, Domain, SensorLayout};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::experiment::{FieldLattice, LossRow, OrderRecovery, RunOutput};

pub const LOSS_HISTORY: &str = "loss_history.csv";
pub const FIELD_TRUE: &str = "field_true.csv";
pub const FIELD_PRED: &str = "field_pred.csv";
pub const FIELD_ABS_ERR: &str = "field_abs_err.csv";
pub const REPORT: &str = "report.json";
pub const HEATMAP: &str = "heatmap.svg";
pub const ORDER: &str = "order_recovery.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const MANIFEST: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub x: f64,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct FdRow {
    x: f64,
    t: f64,
    u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct OrderRow {
    x: f64,
    t: f64,
    #[serde(rename = "true")]
    truth: f64,
    estimate: f64,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> LabError + '_ {
    move |source| LabError::Csv { path: path.to_path_buf(), source }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), LabError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(LabError::io(path))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, LabError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

pub fn write_field_csv(path: &Path, x: &[f64], t: &[f64], values: &[f64]) -> Result<(), LabError> {
    write_rows(path, x.iter().zip(t).zip(values).map(|((&x, &t), &value)| FieldRow { x, t, value }))
}

pub fn read_field_csv(path: &Path) -> Result<Vec<FieldRow>, LabError> {
    read_rows(path)
}

/// A finite-difference field with header `x,t,u`.
pub fn write_fd_csv(path: &Path, x: &[f64], t: &[f64], u: &[f64]) -> Result<(), LabError> {
    write_rows(path, x.iter().zip(t).zip(u).map(|((&x, &t), &u)| FdRow { x, t, u }))
}

pub fn read_fd_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>, LabError> {
    Ok(read_rows::<FdRow>(path)?.into_iter().map(|r| (r.x, r.t, r.u)).collect())
}

pub fn write_loss_history(path: &Path, rows: &[LossRow]) -> Result<(), LabError> {
    write_rows(path, rows)
}

pub fn read_loss_history(path: &Path) -> Result<Vec<LossRow>, LabError> {
    read_rows(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| LabError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(LabError::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LabError> {
    let text = fs::read_to_string(path).map_err(LabError::io(path))?;
    serde_json::from_str(&text).map_err(|source| LabError::Json { path: path.to_path_buf(), source })
}

fn write_order_csv(path: &Path, o: &OrderRecovery) -> Result<(), LabError> {
    let rows = (0..o.t.len()).map(|k| OrderRow { x: o.x[k], t: o.t[k], truth: o.truth[k], estimate: o.estimate[k] });
    write_rows(path, rows)
}

/// Writes every artifact of a run into `dir` (created if missing) and returns the paths.
pub fn export_artifacts(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    fs::create_dir_all(dir).map_err(LabError::io(dir))?;
    let f = &out.field;
    let path = |name: &str| dir.join(name);
    write_loss_history(&path(LOSS_HISTORY), &out.report.loss_history)?;
    write_field_csv(&path(FIELD_TRUE), &f.x, &f.t, &f.truth)?;
    write_field_csv(&path(FIELD_PRED), &f.x, &f.t, &f.pred)?;
    write_field_csv(&path(FIELD_ABS_ERR), &f.x, &f.t, &f.abs_err())?;
    write_json(&path(REPORT), &out.report)?;
    fs::write(path(HEATMAP), heatmap_svg(f, &f.abs_err(), "|pred - true|")).map_err(LabError::io(path(HEATMAP)))?;
    let mut written: Vec<PathBuf> =
        [LOSS_HISTORY, FIELD_TRUE, FIELD_PRED, FIELD_ABS_ERR, REPORT, HEATMAP].iter().map(|n| path(n)).collect();
    if let Some(o) = &out.order {
        write_order_csv(&path(ORDER), o)?;
        written.push(path(ORDER));
    }
    written.extend(save_model(&out.model, &out.samples, &out.report.config, dir)?);
    Ok(written)
}

/// Piecewise-linear ramp from dark blue through teal to yellow.
fn color(v: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 3] = [(68.0, 1.0, 84.0), (33.0, 145.0, 140.0), (253.0, 231.0, 37.0)];
    let v = v.clamp(0.0, 1.0) * 2.0;
    let k = (v.floor() as usize).min(1);
    let s = v - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let mix = |p: f64, q: f64| (p + s * (q - p)).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heat map of `values` over the lattice of `field`, `x` to the right and `t` upward.
pub fn heatmap_svg(field: &FieldLattice, values: &[f64], title: &str) -> String {
    let nx = field.t.iter().take_while(|&&t| t == field.t[0]).count().max(1);
    let nt = (values.len() / nx).max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (left, top, pw, ph) = (70.0, 40.0, 480.0, 360.0);
    let (cw, ch) = (pw / nx as f64, ph / nt as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="680" height="480" viewBox="0 0 680 480" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="680" height="480" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, title);
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for n in 0..nt {
        for i in 0..nx {
            let Some(&v) = values.get(n * nx + i) else { continue };
            let (r, g, b) = color((v - lo) / span);
            let _ = writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="rgb({r},{g},{b})"/>"#,
                left + i as f64 * cw,
                top + ph - (n + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let (x0, x1) = (field.x.first().copied().unwrap_or(0.0), field.x[..nx.min(field.x.len())].last().copied().unwrap_or(0.0));
    let (t0, t1) = (field.t.first().copied().unwrap_or(0.0), field.t.last().copied().unwrap_or(0.0));
    let bottom = top + ph;
    let _ = writeln!(s, r#"<text x="{left}" y="{}" text-anchor="middle">{x0:.3}</text>"#, bottom + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x1:.3}</text>"#, left + pw, bottom + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">x</text>"#, left + pw / 2.0, bottom + 32.0);
    let _ = writeln!(s, r#"<text x="{}" y="{bottom}" text-anchor="end">{t0:.3}</text>"#, left - 6.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t1:.3}</text>"#, left - 6.0, top + 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">t</text>"#, left - 40.0, top + ph / 2.0);
    let bar = left + pw + 30.0;
    for k in 0..64 {
        let (r, g, b) = color(k as f64 / 63.0);
        let _ = writeln!(
            s,
            r#"<rect x="{bar}" y="{:.3}" width="18" height="{:.3}" fill="rgb({r},{g},{b})"/>"#,
            bottom - (k + 1) as f64 * ph / 64.0,
            ph / 64.0 + 0.05
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" class="max">max = {hi:.4e}</text>"#, bar - 10.0, top - 6.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" class="min">min = {lo:.4e}</text>"#, bar - 10.0, bottom + 16.0);
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    dtype: String,
    count: usize,
    /// `(rows, cols)` of every weight matrix, branch layers first; each is followed by its bias.
    branch: Vec<(usize, usize)>,
    trunk: Vec<(usize, usize)>,
}

/// Flat parameter vector as a JSON header line followed by little-endian `f64`s.
pub fn write_checkpoint(path: &Path, model: &DeepONetModel) -> Result<(), LabError> {
    let flat = model.flatten();
    let header = CheckpointHeader {
        dtype: "f64le".into(),
        count: flat.len(),
        branch: model.branch_config.layer_shapes(),
        trunk: model.trunk_config.layer_shapes(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|source| LabError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    bytes.reserve(8 * flat.len());
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(LabError::io(path))?;
    file.write_all(&bytes).map_err(LabError::io(path))
}

/// Reads a checkpoint into `model`, whose architecture must match the header.
pub fn read_checkpoint(path: &Path, model: &mut DeepONetModel) -> Result<(), LabError> {
    let malformed = |reason: &str| LabError::Malformed { path: path.to_path_buf(), reason: reason.into() };
    let mut r = BufReader::new(fs::File::open(path).map_err(LabError::io(path))?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(LabError::io(path))?;
    let header: CheckpointHeader =
        serde_json::from_str(&line).map_err(|source| LabError::Json { path: path.to_path_buf(), source })?;
    if header.dtype != "f64le"
        || header.branch != model.branch_config.layer_shapes()
        || header.trunk != model.trunk_config.layer_shapes()
    {
        return Err(malformed("checkpoint shapes do not match the model"));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(LabError::io(path))?;
    if body.len() != 8 * header.count {
        return Err(malformed("parameter count does not match the header"));
    }
    let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    model.assign(&flat).map_err(|_| malformed("parameter count does not match the model"))
}

/// What is needed to rebuild a trained model without rerunning the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub experiment: String,
    pub checkpoint: String,
    pub spatial_dim: usize,
    pub length: f64,
    pub horizon: f64,
    pub sensor_dim: usize,
    pub sensors: Vec<f64>,
    pub branch_input: Vec<f64>,
    pub width: usize,
    pub depth: usize,
    pub latent: usize,
    pub config: ExperimentConfig,
}

pub fn save_model(
    model: &DeepONetModel,
    samples: &[f64],
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>, LabError> {
    let ckpt = dir.join(CHECKPOINT);
    write_checkpoint(&ckpt, model)?;
    let s = &model.sensors;
    let manifest = ModelManifest {
        experiment: config.experiment.clone(),
        checkpoint: CHECKPOINT.into(),
        spatial_dim: model.domain.spatial_dim,
        length: model.domain.length,
        horizon: model.domain.horizon,
        sensor_dim: s.dim(),
        sensors: (0..s.len()).flat_map(|k| s.point(k).to_vec()).collect(),
        branch_input: samples.to_vec(),
        width: model.trunk_config.width,
        depth: model.trunk_config.depth,
        latent: model.trunk_config.output_dim,
        config: config.clone(),
    };
    let man = dir.join(MANIFEST);
    write_json(&man, &manifest)?;
    Ok(vec![ckpt, man])
}

/// Rebuilds a saved model and its branch input from `dir`.
pub fn load_model(dir: &Path) -> Result<(DeepONetModel, Vec<f64>, ModelManifest), LabError> {
    let m: ModelManifest = read_json(&dir.join(MANIFEST))?;
    let sensors = SensorLayout::from_points(m.sensor_dim, m.sensors.clone())?;
    let domain = Domain { spatial_dim: m.spatial_dim, length: m.length, horizon: m.horizon };
    let mut model = DeepONetModel::new(sensors, domain, m.width, m.depth, m.latent, 0)?;
    read_checkpoint(&dir.join(&m.checkpoint), &mut model)?;
    Ok((model, m.branch_input.clone(), m))
}
