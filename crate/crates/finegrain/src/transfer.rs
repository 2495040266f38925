//! Frozen-backbone transfer benchmark: 12-vectors-per-second feature
//! extraction, three probe heads, k-shot episodes, and Student-t confidence
//! intervals over repeated runs.

use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::seeds;
use crate::stats;
use crate::training::ToyDataset;
use crate::videoio::{self, Mode};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use tapegrad::layers::{Linear, LstmCell};
use tapegrad::{Adam, ParamStore, Session};

/// A frozen feature extractor: consumes `clip_len` frames at 12 fps and
/// yields one feature vector.
pub trait Backbone {
    fn identity(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn clip_len(&self) -> usize;
    fn extract(&mut self, frames: &[Array3<u8>]) -> Result<Vec<f64>>;
    /// Content hash of all parameters; must be unchanged by benchmarking.
    fn params_hash(&self) -> String;
}

/// Trained joint-model encoder as a frozen backbone (consumes whole
/// 48-frame clips, i.e. 4 seconds at 12 fps).
pub struct EncoderBackbone {
    name: String,
    model: JointModel,
}

impl EncoderBackbone {
    pub fn from_checkpoint(name: &str, path: &Path) -> Result<Self> {
        Ok(EncoderBackbone { name: name.to_string(), model: JointModel::load(path)? })
    }

    pub fn from_model(name: &str, model: JointModel) -> Self {
        EncoderBackbone { name: name.to_string(), model }
    }
}

impl Backbone for EncoderBackbone {
    fn identity(&self) -> &str {
        &self.name
    }

    fn feature_dim(&self) -> usize {
        self.model.config.encoder.embedding_dim()
    }

    fn clip_len(&self) -> usize {
        videoio::CLIP_FRAMES
    }

    fn extract(&mut self, frames: &[Array3<u8>]) -> Result<Vec<f64>> {
        let clip = videoio::preprocess_frames(frames, Mode::Eval, 0)?;
        let feats = self.model.extract_features(std::slice::from_ref(&clip))?;
        Ok(feats.into_iter().next().expect("one clip in, one vector out"))
    }

    fn params_hash(&self) -> String {
        self.model.params_hash()
    }
}

/// Parameter-free baseline backbone: per-cell color means plus motion
/// energy over a grid. `clip_len` of 1 makes it a per-frame extractor.
pub struct PixelGridBackbone {
    name: String,
    clip_len: usize,
    grid: usize,
}

impl PixelGridBackbone {
    pub fn new(name: &str, clip_len: usize, grid: usize) -> Self {
        PixelGridBackbone { name: name.to_string(), clip_len, grid }
    }
}

impl Backbone for PixelGridBackbone {
    fn identity(&self) -> &str {
        &self.name
    }

    fn feature_dim(&self) -> usize {
        self.grid * self.grid * 4
    }

    fn clip_len(&self) -> usize {
        self.clip_len
    }

    fn extract(&mut self, frames: &[Array3<u8>]) -> Result<Vec<f64>> {
        if frames.is_empty() {
            return Err(Error::Shape("empty clip".into()));
        }
        let (h, w, _) = frames[0].dim();
        let g = self.grid;
        let mut out = vec![0.0; g * g * 4];
        let cells = |y: usize, x: usize| (y * g / h).min(g - 1) * g + (x * g / w).min(g - 1);
        for (fi, frame) in frames.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let c = cells(y, x);
                    for k in 0..3 {
                        out[c * 4 + k] += frame[[y, x, k]] as f64 / 255.0;
                    }
                    if fi > 0 {
                        let d = (0..3)
                            .map(|k| (frame[[y, x, k]] as f64 - frames[fi - 1][[y, x, k]] as f64).abs())
                            .sum::<f64>();
                        out[c * 4 + 3] += d / 255.0;
                    }
                }
            }
        }
        let norm = (frames.len() * h * w / (g * g)) as f64;
        for v in &mut out {
            *v /= norm;
        }
        Ok(out)
    }

    fn params_hash(&self) -> String {
        format!("pixelgrid:{}:{}:{}", self.name, self.clip_len, self.grid)
    }
}

/// Splits a 12-fps video into consecutive non-overlapping `clip_len`-frame
/// clips, replicating the clip-level feature across its frames, so every
/// input frame yields exactly one vector (12 per second). The trailing
/// remainder is padded by last-frame replication and truncated back.
pub fn extract_feature_sequence(backbone: &mut dyn Backbone, frames: &[Array3<u8>]) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::Shape("cannot extract features from zero frames".into()));
    }
    let cl = backbone.clip_len().max(1);
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(cl) {
        let feat = if chunk.len() == cl {
            backbone.extract(chunk)?
        } else {
            let mut padded = chunk.to_vec();
            while padded.len() < cl {
                padded.push(chunk.last().unwrap().clone());
            }
            backbone.extract(&padded)?
        };
        for _ in 0..chunk.len() {
            out.push(feat.clone());
        }
    }
    debug_assert_eq!(out.len(), frames.len());
    Ok(out)
}

/// Probe heads over frozen features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Logistic,
    Mlp512,
    Bilstm128,
}

impl HeadKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(HeadKind::Logistic),
            "mlp512" => Ok(HeadKind::Mlp512),
            "bilstm128" => Ok(HeadKind::Bilstm128),
            other => Err(Error::Config(format!(
                "unknown head '{other}' (expected logistic | mlp512 | bilstm128)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Logistic => "logistic",
            HeadKind::Mlp512 => "mlp512",
            HeadKind::Bilstm128 => "bilstm128",
        }
    }
}

enum HeadParams {
    Affine { linear: Linear },
    Mlp { hidden: Linear, out: Linear },
    Bilstm { fwd: LstmCell, bwd: LstmCell, out: Linear },
}

/// A trained transfer head.
pub struct TrainedHead {
    kind: HeadKind,
    store: ParamStore,
    params: HeadParams,
    classes: usize,
}

const MLP_HIDDEN: usize = 512;
const BILSTM_HIDDEN: usize = 128;

fn head_params(kind: HeadKind, store: &mut ParamStore, rng: &mut rand_chacha::ChaCha20Rng, dim: usize, classes: usize) -> HeadParams {
    match kind {
        HeadKind::Logistic => HeadParams::Affine { linear: Linear::new(store, "head", rng, dim, classes) },
        HeadKind::Mlp512 => HeadParams::Mlp {
            hidden: Linear::new(store, "head.hidden", rng, dim, MLP_HIDDEN),
            out: Linear::new(store, "head.out", rng, MLP_HIDDEN, classes),
        },
        HeadKind::Bilstm128 => HeadParams::Bilstm {
            fwd: LstmCell::new(store, "head.fwd", rng, dim, BILSTM_HIDDEN),
            bwd: LstmCell::new(store, "head.bwd", rng, dim, BILSTM_HIDDEN),
            out: Linear::new(store, "head.out", rng, 2 * BILSTM_HIDDEN, classes),
        },
    }
}

impl TrainedHead {
    /// Per-video logits.
    fn logits(&mut self, seqs: &[&Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
        let dim = seqs[0][0].len();
        match &self.params {
            HeadParams::Affine { linear } => {
                let mut out = Vec::with_capacity(seqs.len());
                for seq in seqs {
                    let x = flatten(seq, dim);
                    let mut s = Session::inference(&mut self.store);
                    let xv = s.leaf(x);
                    let logit = linear.forward(&mut s, xv);
                    let probs = s.tape.softmax(logit);
                    out.push(mean_rows(s.tape.value(probs)));
                }
                out
            }
            HeadParams::Mlp { hidden, out: proj } => {
                let mut out = Vec::with_capacity(seqs.len());
                for seq in seqs {
                    let x = flatten(seq, dim);
                    let mut s = Session::inference(&mut self.store);
                    let xv = s.leaf(x);
                    let hmid = hidden.forward(&mut s, xv);
                    let hmid = s.tape.relu(hmid);
                    let logit = proj.forward(&mut s, hmid);
                    let probs = s.tape.softmax(logit);
                    out.push(mean_rows(s.tape.value(probs)));
                }
                out
            }
            HeadParams::Bilstm { fwd, bwd, out: proj } => {
                let mut out = Vec::with_capacity(seqs.len());
                for seq in seqs {
                    let mut s = Session::inference(&mut self.store);
                    let final_h = bilstm_final(&mut s, fwd, bwd, seq, dim);
                    let logit = proj.forward(&mut s, final_h);
                    let row = s.tape.value(logit);
                    out.push(row.iter().copied().collect());
                }
                out
            }
        }
    }

    pub fn predict(&mut self, seqs: &[&Vec<Vec<f64>>]) -> Vec<usize> {
        self.logits(seqs).into_iter().map(|row| argmax(&row)).collect()
    }

    pub fn accuracy(&mut self, data: &[(&Vec<Vec<f64>>, usize)]) -> f64 {
        let seqs: Vec<&Vec<Vec<f64>>> = data.iter().map(|(s, _)| *s).collect();
        let preds = self.predict(&seqs);
        let hits = preds.iter().zip(data).filter(|(p, (_, l))| *p == l).count();
        hits as f64 / data.len().max(1) as f64
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

fn flatten(seq: &[Vec<f64>], dim: usize) -> tapegrad::Arr {
    ndarray::Array2::from_shape_vec((seq.len(), dim), seq.iter().flatten().copied().collect())
        .expect("ragged feature sequence")
        .into_dyn()
}

fn mean_rows(a: &tapegrad::Arr) -> Vec<f64> {
    let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let m = a2.mean_axis(ndarray::Axis(0)).unwrap();
    m.to_vec()
}

fn bilstm_final(
    s: &mut Session,
    fwd: &LstmCell,
    bwd: &LstmCell,
    seq: &[Vec<f64>],
    dim: usize,
) -> tapegrad::Var {
    let steps: Vec<tapegrad::Var> = seq
        .iter()
        .map(|v| s.leaf(ndarray::Array2::from_shape_vec((1, dim), v.clone()).unwrap().into_dyn()))
        .collect();
    let h0 = s.leaf(tapegrad::init::zeros(&[1, BILSTM_HIDDEN]));
    let c0 = s.leaf(tapegrad::init::zeros(&[1, BILSTM_HIDDEN]));
    let f = fwd.run(s, &steps, h0, c0);
    let rev: Vec<tapegrad::Var> = steps.iter().rev().copied().collect();
    let h0b = s.leaf(tapegrad::init::zeros(&[1, BILSTM_HIDDEN]));
    let c0b = s.leaf(tapegrad::init::zeros(&[1, BILSTM_HIDDEN]));
    let b = bwd.run(s, &rev, h0b, c0b);
    s.tape.concat(1, &[*f.last().unwrap(), *b.last().unwrap()])
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Trains a probe head on per-video feature sequences with Adam; when every
/// class has at least two samples, one per class is held out for early
/// stopping, otherwise a fixed budget is used.
pub fn fit_transfer_head(
    train: &[(Vec<Vec<f64>>, usize)],
    kind: HeadKind,
    classes: usize,
    seed: u64,
) -> Result<TrainedHead> {
    if train.is_empty() {
        return Err(Error::Config("transfer head needs at least one training sample".into()));
    }
    let mut per_class = vec![0usize; classes];
    for (_, y) in train {
        if *y >= classes {
            return Err(Error::Label(format!("label {y} outside {classes} classes")));
        }
        per_class[*y] += 1;
    }
    if per_class.iter().any(|&c| c == 0) {
        return Err(Error::Label("a class has zero training samples".into()));
    }
    let dim = train[0].0[0].len();

    // optional held-out split: one sample per class
    let can_hold_out = per_class.iter().all(|&c| c >= 2);
    let mut hold_rng = seeds::rng(seed, &[0x401d]);
    let mut held = vec![false; train.len()];
    if can_hold_out {
        use rand::seq::IndexedRandom;
        for c in 0..classes {
            let members: Vec<usize> = (0..train.len()).filter(|&i| train[i].1 == c).collect();
            let pick = *members.choose(&mut hold_rng).unwrap();
            held[pick] = true;
        }
    }

    let mut store = ParamStore::new();
    let mut rng = seeds::rng(seed, &[0x6ead]);
    let params = head_params(kind, &mut store, &mut rng, dim, classes);
    let mut head = TrainedHead { kind, store, params, classes };
    let mut adam = Adam::new(0.01);

    let epochs = match kind {
        HeadKind::Bilstm128 => 150,
        _ => 300,
    };
    let mut best_val = f64::NEG_INFINITY;
    let mut best_snapshot: Option<Vec<tapegrad::Arr>> = None;
    let mut stale = 0;
    for epoch in 0..epochs {
        match &head.params {
            HeadParams::Affine { linear } => {
                let (x, y) = per_timestep_batch(train, &held, dim);
                let mut s = Session::train(&mut head.store);
                let xv = s.leaf(x);
                let logits = linear.forward(&mut s, xv);
                step_ce(&mut s, logits, &y);
                drop(s);
                adam.step(&mut head.store);
            }
            HeadParams::Mlp { hidden, out } => {
                let (x, y) = per_timestep_batch(train, &held, dim);
                let mut s = Session::train(&mut head.store);
                let xv = s.leaf(x);
                let mid = hidden.forward(&mut s, xv);
                let mid = s.tape.relu(mid);
                let logits = out.forward(&mut s, mid);
                step_ce(&mut s, logits, &y);
                drop(s);
                adam.step(&mut head.store);
            }
            HeadParams::Bilstm { fwd, bwd, out } => {
                // per-sequence pass; gradients accumulate over the epoch
                let mut s = Session::train(&mut head.store);
                let mut losses = Vec::new();
                let mut count = 0.0;
                for (i, (seq, label)) in train.iter().enumerate() {
                    if held[i] {
                        continue;
                    }
                    let final_h = bilstm_final(&mut s, fwd, bwd, seq, dim);
                    let logits = out.forward(&mut s, final_h);
                    let ls = s.tape.log_softmax(logits);
                    let picked = s.tape.gather_rows(ls, &[*label]);
                    losses.push(s.tape.sum_all(picked));
                    count += 1.0;
                }
                let mut total = losses[0];
                for l in &losses[1..] {
                    total = s.tape.add(total, *l);
                }
                let loss = s.tape.scale(total, -1.0 / count);
                s.backward(loss);
                drop(s);
                adam.step(&mut head.store);
            }
        }
        if can_hold_out && epoch % 5 == 4 {
            let val: Vec<(&Vec<Vec<f64>>, usize)> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| held[*i])
                .map(|(_, (s, y))| (s, *y))
                .collect();
            let acc = head.accuracy(&val);
            if acc > best_val {
                best_val = acc;
                best_snapshot = Some(head.store.ids().map(|id| head.store.value(id).clone()).collect());
                stale = 0;
            } else {
                stale += 1;
                if stale >= 6 {
                    break;
                }
            }
        }
    }
    if let Some(snapshot) = best_snapshot {
        for (id, value) in head.store.ids().collect::<Vec<_>>().into_iter().zip(snapshot) {
            head.store.set_value(id, value);
        }
    }
    Ok(head)
}

fn per_timestep_batch(train: &[(Vec<Vec<f64>>, usize)], held: &[bool], dim: usize) -> (tapegrad::Arr, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, (seq, y)) in train.iter().enumerate() {
        if held[i] {
            continue;
        }
        for v in seq {
            rows.extend_from_slice(v);
            labels.push(*y);
        }
    }
    let x = ndarray::Array2::from_shape_vec((labels.len(), dim), rows).unwrap().into_dyn();
    (x, labels)
}

fn step_ce(s: &mut Session, logits: tapegrad::Var, labels: &[usize]) {
    let ls = s.tape.log_softmax(logits);
    let picked = s.tape.gather_rows(ls, labels);
    let total = s.tape.sum_all(picked);
    let loss = s.tape.scale(total, -1.0 / labels.len() as f64);
    s.backward(loss);
}

/// Shot count per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shots {
    K(usize),
    Full,
}

impl Shots {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Shots::Full);
        }
        s.parse::<usize>()
            .map(Shots::K)
            .map_err(|_| Error::Config(format!("bad shots value '{s}' (number or 'full')")))
    }

    pub fn label(&self) -> String {
        match self {
            Shots::K(k) => format!("{k}-shot"),
            Shots::Full => "full".to_string(),
        }
    }
}

/// Episode layout: which shot levels, how many runs, master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub shots: Vec<Shots>,
    pub runs: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec { shots: vec![Shots::K(1), Shots::K(5), Shots::Full], runs: 10, seed: 0 }
    }
}

/// Seeded per-class draw of `shots` train samples; the test set is the
/// manifest's fixed test split. Draws differ across `run_index` but are
/// reproducible.
pub fn sample_episode(
    dataset: &ToyDataset,
    shots: Shots,
    run_index: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    let train = dataset.split_ids("train")?;
    let test = dataset.split_ids("test")?;
    let k = match shots {
        Shots::Full => return Ok((train, test)),
        Shots::K(k) => k,
    };
    let classes = dataset.manifest.category_count;
    let mut picked = Vec::new();
    let mut rng = seeds::rng(seed, &[0xe215, run_index as u64]);
    use rand::seq::SliceRandom;
    for c in 0..classes {
        let mut members: Vec<&String> = train
            .iter()
            .filter(|id| dataset.manifest.episode(id).map(|e| e.category == c).unwrap_or(false))
            .collect();
        if members.len() < k {
            return Err(Error::Config(format!(
                "class {c} has {} train samples, cannot draw {k} shots",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        picked.extend(members.into_iter().take(k).cloned());
    }
    Ok((picked, test))
}

/// One benchmark cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub backbone: String,
    pub head: String,
    pub shots: String,
    pub runs: usize,
    pub mean: f64,
    pub ci95: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<BenchmarkCell>,
    pub warnings: Vec<String>,
    pub backbone_hashes: BTreeMap<String, String>,
}

impl BenchmarkReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }

    /// Plain-text table, one row per cell.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:<10} {:<8} {:>8} {:>8}\n", "backbone", "head", "shots", "mean", "ci95"));
        for c in &self.cells {
            out.push_str(&format!(
                "{:<24} {:<10} {:<8} {:>8.4} {:>8.4}\n",
                c.backbone, c.head, c.shots, c.mean, c.ci95
            ));
        }
        out
    }
}

/// Full cartesian benchmark: (backbone x head x shots) x runs. Features per
/// (backbone, video) are extracted once and cached.
pub fn run_benchmark(
    backbones: &mut [Box<dyn Backbone>],
    heads: &[HeadKind],
    spec: &EpisodeSpec,
    dataset: &ToyDataset,
) -> Result<BenchmarkReport> {
    if spec.runs == 0 {
        return Err(Error::Config("benchmark needs at least one run".into()));
    }
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    let mut backbone_hashes = BTreeMap::new();

    for backbone in backbones.iter_mut() {
        let hash_before = backbone.params_hash();
        let mut features: HashMap<String, Arc<Vec<Vec<f64>>>> = HashMap::new();
        let mut feature_of = |id: &str, bb: &mut dyn Backbone, ds: &ToyDataset| -> Result<Arc<Vec<Vec<f64>>>> {
            if let Some(hit) = features.get(id) {
                return Ok(Arc::clone(hit));
            }
            let frames = ds.frames(id)?;
            let seq = Arc::new(extract_feature_sequence(bb, &frames)?);
            features.insert(id.to_string(), Arc::clone(&seq));
            Ok(seq)
        };

        for &head in heads {
            for &shots in &spec.shots {
                let mut scores = Vec::with_capacity(spec.runs);
                for run in 0..spec.runs {
                    let (train_ids, test_ids) = sample_episode(dataset, shots, run, spec.seed)?;
                    let mut train = Vec::with_capacity(train_ids.len());
                    for id in &train_ids {
                        let seq = feature_of(id, backbone.as_mut(), dataset)?;
                        let label = dataset.manifest.episode(id).expect("episode exists").category;
                        train.push(((*seq).clone(), label));
                    }
                    let head_seed = seeds::derive(spec.seed, &[0xbe9c, run as u64, head as u64]);
                    let mut trained = fit_transfer_head(&train, head, dataset.manifest.category_count, head_seed)?;
                    let mut test = Vec::with_capacity(test_ids.len());
                    let mut test_feats = Vec::with_capacity(test_ids.len());
                    for id in &test_ids {
                        test_feats.push(feature_of(id, backbone.as_mut(), dataset)?);
                        test.push(dataset.manifest.episode(id).expect("episode exists").category);
                    }
                    let data: Vec<(&Vec<Vec<f64>>, usize)> =
                        test_feats.iter().map(|f| &**f).zip(test.iter().copied()).collect();
                    scores.push(trained.accuracy(&data));
                }
                let (mean, ci95) = stats::mean_and_ci95(&scores);
                cells.push(BenchmarkCell {
                    backbone: backbone.identity().to_string(),
                    head: head.name().to_string(),
                    shots: shots.label(),
                    runs: spec.runs,
                    mean,
                    ci95,
                    scores,
                });
            }
        }
        let hash_after = backbone.params_hash();
        if hash_before != hash_after {
            return Err(Error::Other(format!(
                "backbone '{}' parameters changed during benchmarking",
                backbone.identity()
            )));
        }
        backbone_hashes.insert(backbone.identity().to_string(), hash_after);
    }

    // flag 5-shot means below 1-shot means
    for b in cells.iter().map(|c| c.backbone.clone()).collect::<std::collections::BTreeSet<_>>() {
        for h in heads {
            let find = |s: &str| {
                cells
                    .iter()
                    .find(|c| c.backbone == b && c.head == h.name() && c.shots == s)
                    .map(|c| c.mean)
            };
            if let (Some(one), Some(five)) = (find("1-shot"), find("5-shot")) {
                if five < one {
                    warnings.push(format!(
                        "{b}/{}: 5-shot mean {five:.4} below 1-shot mean {one:.4}",
                        h.name()
                    ));
                }
            }
        }
    }

    Ok(BenchmarkReport { cells, warnings, backbone_hashes })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct CountingBackbone {
        dim: usize,
        clip_len: usize,
    }

    impl Backbone for CountingBackbone {
        fn identity(&self) -> &str {
            "counting"
        }
        fn feature_dim(&self) -> usize {
            self.dim
        }
        fn clip_len(&self) -> usize {
            self.clip_len
        }
        fn extract(&mut self, frames: &[Array3<u8>]) -> Result<Vec<f64>> {
            Ok(vec![frames.len() as f64; self.dim])
        }
        fn params_hash(&self) -> String {
            "fixed".into()
        }
    }

    fn frames(n: usize) -> Vec<Array3<u8>> {
        (0..n).map(|i| Array3::from_elem((4, 4, 3), i as u8)).collect()
    }

    #[test]
    fn feature_rate_law() {
        // 12 fps: vector count equals frame count for any clip_len
        for clip_len in [1usize, 16] {
            for secs in [1usize, 4, 10] {
                let n = 12 * secs;
                let mut bb = CountingBackbone { dim: 3, clip_len };
                let seq = extract_feature_sequence(&mut bb, &frames(n)).unwrap();
                assert_eq!(seq.len(), n, "clip_len {clip_len}, {secs}s");
            }
        }
    }

    #[test]
    fn trailing_remainder_is_padded_then_truncated() {
        let mut bb = CountingBackbone { dim: 1, clip_len: 16 };
        let seq = extract_feature_sequence(&mut bb, &frames(50)).unwrap();
        assert_eq!(seq.len(), 50);
        // the last two vectors come from the padded final clip
        assert_eq!(seq[49][0], 16.0);
        let mut bb1 = CountingBackbone { dim: 1, clip_len: 1 };
        let seq = extract_feature_sequence(&mut bb1, &frames(5)).unwrap();
        assert_eq!(seq.len(), 5);
        assert!(seq.iter().all(|v| v[0] == 1.0));
    }

    #[test]
    fn zero_frames_error() {
        let mut bb = CountingBackbone { dim: 1, clip_len: 4 };
        assert!(extract_feature_sequence(&mut bb, &[]).is_err());
    }

    #[test]
    fn linearly_separable_features_reach_full_accuracy() {
        // constant per class, distinct across classes
        let anchors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut train = Vec::new();
        for c in 0..3usize {
            for _ in 0..3 {
                let v = vec![anchors[c].to_vec(); 6];
                train.push((v, c));
            }
        }
        let mut head = fit_transfer_head(&train, HeadKind::Logistic, 3, 7).unwrap();
        let data: Vec<(&Vec<Vec<f64>>, usize)> = train.iter().map(|(s, y)| (s, *y)).collect();
        assert_eq!(head.accuracy(&data), 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut train = Vec::new();
        for c in 0..2usize {
            for r in 0..4 {
                let v: Vec<Vec<f64>> = (0..5)
                    .map(|t| vec![(c as f64) + 0.1 * t as f64, r as f64 * 0.01])
                    .collect();
                train.push((v, c));
            }
        }
        let data: Vec<(&Vec<Vec<f64>>, usize)> = train.iter().map(|(s, y)| (s, *y)).collect();
        let a = fit_transfer_head(&train, HeadKind::Mlp512, 2, 42).unwrap().accuracy(&data);
        let b = fit_transfer_head(&train, HeadKind::Mlp512, 2, 42).unwrap().accuracy(&data);
        assert_eq!(a, b);
    }

    #[test]
    fn missing_class_errors() {
        let train = vec![(vec![vec![0.0; 2]; 3], 0usize)];
        assert!(fit_transfer_head(&train, HeadKind::Logistic, 2, 1).is_err());
    }

    #[test]
    fn order_only_fixture_separates_bilstm_from_logistic() {
        // same multiset of feature vectors per video; classes differ only
        // in temporal order
        let base: Vec<Vec<f64>> = (0..8).map(|t| vec![(t as f64) / 8.0, (8.0 - t as f64) / 8.0]).collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for rep in 0..6 {
            let mut fwd = base.clone();
            let mut rev: Vec<Vec<f64>> = base.iter().rev().cloned().collect();
            // tiny per-sample perturbation, same for both classes
            for v in fwd.iter_mut().chain(rev.iter_mut()) {
                v[0] += rep as f64 * 1e-3;
            }
            if rep < 4 {
                train.push((fwd, 0usize));
                train.push((rev, 1usize));
            } else {
                test.push((fwd, 0usize));
                test.push((rev, 1usize));
            }
        }
        let data: Vec<(&Vec<Vec<f64>>, usize)> = test.iter().map(|(s, y)| (s, *y)).collect();
        let mut logistic = fit_transfer_head(&train, HeadKind::Logistic, 2, 3).unwrap();
        let mut bilstm = fit_transfer_head(&train, HeadKind::Bilstm128, 2, 3).unwrap();
        let acc_log = logistic.accuracy(&data);
        let acc_lstm = bilstm.accuracy(&data);
        assert!(
            acc_lstm >= acc_log + 0.2,
            "bilstm {acc_lstm} should beat logistic {acc_log} by 20 points on order-only data"
        );
    }
}
