//! Residual-stream feature overlap.
//!
//! Channel `i` of a captured `[B, C, H, W]` map is one feature vector `X_i`
//! flattened over batch and space. With `X̂_i = X_i / ‖X_i‖` the overlap
//! matrix is `O_ij = X̂_i · X̂_j`, i.e. cosine similarity. Channels with zero
//! norm get a zero row and column and are flagged degenerate.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_tensors;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vessel::Model;

pub const HIST_BINS: usize = 40;
pub const HIST_WIDTH: f64 = 0.05;
pub const HIGH_OVERLAP: f64 = 0.5;
pub const EVAL_BATCH: EvalBatch = EvalBatch { seed: 0, size: 512 };

/// The fixed, seed-selected set of test images every compared run sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBatch {
    pub seed: u64,
    pub size: usize,
}

impl EvalBatch {
    pub fn indices(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        idx.truncate(self.size.min(n));
        idx
    }
}

#[derive(Debug, Clone)]
pub struct FeatureCapture {
    pub run_id: String,
    pub layer: String,
    pub tensor: Tensor<f32>,
    pub batch: EvalBatch,
}

fn layer_name(prefix: &str) -> String {
    prefix.trim_end_matches('.').to_string()
}

/// Eval-mode post-residual output of every identity block, in network order.
pub fn capture(model: &mut Model<f32>, x: &Tensor<f32>, run_id: &str, batch: EvalBatch) -> Result<Vec<FeatureCapture>> {
    let mut tape = Tape::new();
    let vars = model.store.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let mut caps = Vec::new();
    model.forward_capture(&mut tape, &vars, xv, Mode::Eval, Some(&mut caps))?;
    Ok(model
        .blocks()
        .zip(caps)
        .map(|(b, v)| FeatureCapture {
            run_id: run_id.to_string(),
            layer: layer_name(&b.prefix),
            tensor: tape.value(v).clone(),
            batch,
        })
        .collect())
}

/// Write captures in the checkpoint container, one tensor per layer.
pub fn dump_captures(caps: &[FeatureCapture], path: &Path) -> Result<()> {
    let named: Vec<(String, Tensor<f32>)> = caps.iter().map(|c| (c.layer.clone(), c.tensor.clone())).collect();
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(f, &named)
}

/// Running `Σ_k X_ik X_jk` over samples, accumulated in f64 in sample order
/// so that chunked and whole-batch feeding agree bitwise.
#[derive(Debug, Clone)]
pub struct Gram {
    channels: usize,
    sums: Vec<f64>,
}

impl Gram {
    pub fn new(channels: usize) -> Self {
        Gram {
            channels,
            sums: vec![0.0; channels * channels],
        }
    }

    pub fn add(&mut self, x: &Tensor<f32>) -> Result<()> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::shape(
                "overlap",
                format!("expected {} channels, got {s:?}", self.channels),
            ));
        }
        let c = self.channels;
        let inner: usize = s[2..].iter().product();
        let mut sample = vec![0f64; c * inner];
        for img in x.data().chunks(c * inner) {
            for (d, &v) in sample.iter_mut().zip(img) {
                *d = v as f64;
            }
            for i in 0..c {
                let xi = &sample[i * inner..][..inner];
                for j in i..c {
                    let xj = &sample[j * inner..][..inner];
                    let dot: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
                    self.sums[i * c + j] += dot;
                }
            }
        }
        Ok(())
    }

    pub fn overlap(&self) -> OverlapMatrix {
        let c = self.channels;
        let norms: Vec<f64> = (0..c).map(|i| self.sums[i * c + i].sqrt()).collect();
        let degenerate: Vec<bool> = norms.iter().map(|&n| !(n > 0.0 && n.is_finite())).collect();
        let mut data = vec![0.0; c * c];
        for i in 0..c {
            if degenerate[i] {
                continue;
            }
            data[i * c + i] = 1.0;
            for j in i + 1..c {
                if degenerate[j] {
                    continue;
                }
                let o = (self.sums[i * c + j] / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                data[i * c + j] = o;
                data[j * c + i] = o;
            }
        }
        OverlapMatrix {
            channels: c,
            data,
            degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub channels: usize,
    /// Row-major `C×C`.
    pub data: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl OverlapMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.channels + j]
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    /// Off-diagonal entries `O_ij`, `i < j`, row by row.
    pub fn pairs(&self) -> impl Iterator<Item = f64> + '_ {
        let c = self.channels;
        (0..c).flat_map(move |i| (i + 1..c).map(move |j| self.get(i, j)))
    }
}

pub fn overlap_matrix(f: &FeatureCapture) -> Result<OverlapMatrix> {
    let c = *f
        .tensor
        .shape()
        .get(1)
        .ok_or_else(|| Error::shape("overlap", "rank < 2"))?;
    let mut g = Gram::new(c);
    g.add(&f.tensor)?;
    Ok(g.overlap())
}

/// Overlap of explicit feature vectors, one per channel.
pub fn overlap_of_vectors(features: &[Vec<f64>]) -> OverlapMatrix {
    let c = features.len();
    let n = features.first().map_or(0, Vec::len);
    let mut g = Gram::new(c);
    for i in 0..c {
        for j in i..c {
            g.sums[i * c + j] = (0..n).map(|k| features[i][k] * features[j][k]).sum();
        }
    }
    g.overlap()
}

pub fn hist_bin(o: f64) -> usize {
    (((o + 1.0) / HIST_WIDTH).floor().max(0.0) as usize).min(HIST_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: String,
    pub channels: usize,
    pub mean_abs_offdiag: f64,
    pub mean_angle_deg: f64,
    pub frac_gt_0p5: f64,
    pub degenerate_channels: usize,
    pub histogram: Vec<u64>,
}

pub fn summarize(layer: &str, o: &OverlapMatrix) -> LayerStats {
    let mut histogram = vec![0u64; HIST_BINS];
    let (mut abs_sum, mut angle_sum, mut high, mut n) = (0.0, 0.0, 0usize, 0usize);
    for v in o.pairs() {
        abs_sum += v.abs();
        angle_sum += v.clamp(-1.0, 1.0).acos().to_degrees();
        if v.abs() > HIGH_OVERLAP {
            high += 1;
        }
        histogram[hist_bin(v)] += 1;
        n += 1;
    }
    let denom = n.max(1) as f64;
    LayerStats {
        layer: layer.to_string(),
        channels: o.channels,
        mean_abs_offdiag: abs_sum / denom,
        mean_angle_deg: if n == 0 { 0.0 } else { angle_sum / denom },
        frac_gt_0p5: high as f64 / denom,
        degenerate_channels: o.degenerate_count(),
        histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportMeta {
    pub block: String,
    pub norm: String,
    pub solu: bool,
    pub params: usize,
    pub eval_seed: u64,
    pub eval_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceReport {
    pub meta: ReportMeta,
    pub layers: Vec<LayerStats>,
}

impl InterferenceReport {
    pub fn mean_abs_offdiag(&self) -> f64 {
        self.layers.iter().map(|l| l.mean_abs_offdiag).sum::<f64>() / self.layers.len().max(1) as f64
    }
}

/// Streamed capture → overlap → summarize for every identity block, fed in
/// chunks of `chunk` images.
pub fn analyze_model(
    model: &mut Model<f32>,
    data: &Dataset,
    batch: EvalBatch,
    chunk: usize,
) -> Result<(InterferenceReport, Vec<OverlapMatrix>)> {
    let idx = batch.indices(data.len());
    if idx.is_empty() {
        return Err(Error::config("evaluation batch is empty"));
    }
    let mut grams: Vec<Gram> = model.blocks().map(|b| Gram::new(b.channels())).collect();
    let names: Vec<String> = model.blocks().map(|b| layer_name(&b.prefix)).collect();
    for part in idx.chunks(chunk.max(1)) {
        let (x, _) = data.gather(part)?;
        for (g, cap) in grams.iter_mut().zip(capture(model, &x, "", batch)?) {
            g.add(&cap.tensor)?;
        }
    }
    let overlaps: Vec<OverlapMatrix> = grams.iter().map(Gram::overlap).collect();
    let layers = names.iter().zip(&overlaps).map(|(n, o)| summarize(n, o)).collect();
    let cfg = &model.config;
    let meta = ReportMeta {
        block: cfg.block.kind.to_string(),
        norm: cfg.block.norm.to_string(),
        solu: cfg.block.solu,
        params: model.param_count(),
        eval_seed: batch.seed,
        eval_size: idx.len(),
    };
    Ok((InterferenceReport { meta, layers }, overlaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    AMoreAligned,
    BMoreAligned,
    Equal,
}

impl Verdict {
    fn of(delta: f64) -> Self {
        if delta > 0.0 {
            Verdict::BMoreAligned
        } else if delta < 0.0 {
            Verdict::AMoreAligned
        } else {
            Verdict::Equal
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::AMoreAligned => "A more aligned",
            Verdict::BMoreAligned => "B more aligned",
            Verdict::Equal => "equal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDelta {
    pub layer: String,
    /// `b − a`.
    pub delta_mean_abs: f64,
    pub delta_frac_gt_0p5: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub layers: Vec<LayerDelta>,
    pub mean_abs_a: f64,
    pub mean_abs_b: f64,
    pub verdict: Verdict,
}

pub fn compare(a: &InterferenceReport, b: &InterferenceReport) -> Result<ComparisonReport> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::Mismatch(format!(
            "{} layers vs {} layers",
            a.layers.len(),
            b.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(a.layers.len());
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        if la.layer != lb.layer || la.channels != lb.channels {
            return Err(Error::Mismatch(format!(
                "layer {} ({} channels) vs {} ({} channels)",
                la.layer, la.channels, lb.layer, lb.channels
            )));
        }
        let d = lb.mean_abs_offdiag - la.mean_abs_offdiag;
        layers.push(LayerDelta {
            layer: la.layer.clone(),
            delta_mean_abs: d,
            delta_frac_gt_0p5: lb.frac_gt_0p5 - la.frac_gt_0p5,
            verdict: Verdict::of(d),
        });
    }
    let (ma, mb) = (a.mean_abs_offdiag(), b.mean_abs_offdiag());
    Ok(ComparisonReport {
        layers,
        mean_abs_a: ma,
        mean_abs_b: mb,
        verdict: Verdict::of(mb - ma),
    })
}

pub const LAYER_STATS_HEADER: &str = "layer,C,mean_abs_offdiag,mean_angle_deg,frac_gt_0p5,degenerate_channels";
pub const HISTOGRAM_HEADER: &str = "layer,bin,lower,upper,count";

pub fn layer_stats_csv(layers: &[LayerStats]) -> String {
    let mut s = String::from(LAYER_STATS_HEADER);
    s.push('\n');
    for l in layers {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{}",
            l.layer, l.channels, l.mean_abs_offdiag, l.mean_angle_deg, l.frac_gt_0p5, l.degenerate_channels
        );
    }
    s
}

pub fn histograms_csv(layers: &[LayerStats]) -> String {
    let mut s = String::from(HISTOGRAM_HEADER);
    s.push('\n');
    for l in layers {
        for (b, count) in l.histogram.iter().enumerate() {
            let lo = -1.0 + b as f64 * HIST_WIDTH;
            let _ = writeln!(s, "{},{b},{lo:.2},{:.2},{count}", l.layer, lo + HIST_WIDTH);
        }
    }
    s
}

pub fn comparison_csv(c: &ComparisonReport) -> String {
    let mut s = String::from("layer,delta_mean_abs_offdiag,delta_frac_gt_0p5,verdict\n");
    for l in &c.layers {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{}",
            l.layer, l.delta_mean_abs, l.delta_frac_gt_0p5, l.verdict
        );
    }
    s
}

/// Write `layer_stats.csv`, `histograms.csv` and `meta.toml` into `dir`.
pub fn export_report(report: &InterferenceReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("layer_stats.csv"), layer_stats_csv(&report.layers))?;
    std::fs::write(dir.join("histograms.csv"), histograms_csv(&report.layers))?;
    let meta = toml::to_string(&report.meta).map_err(|e| Error::config(e.to_string()))?;
    std::fs::write(dir.join("meta.toml"), meta)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct StatsRow {
    layer: String,
    #[serde(rename = "C")]
    channels: usize,
    mean_abs_offdiag: f64,
    mean_angle_deg: f64,
    frac_gt_0p5: f64,
    degenerate_channels: usize,
}

#[derive(Debug, Deserialize)]
struct HistRow {
    layer: String,
    bin: usize,
    count: u64,
}

/// Read back a directory written by [`export_report`].
pub fn import_report(dir: &Path) -> Result<InterferenceReport> {
    let mut layers = Vec::new();
    for row in csv::Reader::from_path(dir.join("layer_stats.csv"))?.deserialize() {
        let r: StatsRow = row?;
        layers.push(LayerStats {
            layer: r.layer,
            channels: r.channels,
            mean_abs_offdiag: r.mean_abs_offdiag,
            mean_angle_deg: r.mean_angle_deg,
            frac_gt_0p5: r.frac_gt_0p5,
            degenerate_channels: r.degenerate_channels,
            histogram: vec![0; HIST_BINS],
        });
    }
    let hist_path = dir.join("histograms.csv");
    if hist_path.exists() {
        for row in csv::Reader::from_path(hist_path)?.deserialize() {
            let r: HistRow = row?;
            let l = layers
                .iter_mut()
                .find(|l| l.layer == r.layer)
                .ok_or_else(|| Error::Mismatch(format!("histogram for unknown layer {}", r.layer)))?;
            if r.bin >= HIST_BINS {
                return Err(Error::Mismatch(format!("histogram bin {} out of range", r.bin)));
            }
            l.histogram[r.bin] = r.count;
        }
    }
    let meta_path = dir.join("meta.toml");
    let meta = if meta_path.exists() {
        toml::from_str(&std::fs::read_to_string(meta_path)?).map_err(|e| Error::config(e.to_string()))?
    } else {
        ReportMeta::default()
    };
    Ok(InterferenceReport { meta, layers })
}
