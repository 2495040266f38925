//! The shared video encoder: parallel 2D and 3D convolutional channels,
//! concatenated per timestep and aggregated by a 2-layer bidirectional LSTM
//! whose outputs are averaged into the encoding `h`.
//!
//! Channel widths ramp up block by block to the configured count; every
//! block halves the spatial resolution, and the final two 3D blocks also
//! halve time (so 48 input frames become 12 aggregator steps). The 2D
//! channel is aligned to the same step count by non-overlapping temporal
//! averaging.

use crate::error::{Error, Result};
use crate::videoio::VideoClip;
use ndarray::{Array4, Array5};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::layers::{BatchNorm, Conv2d, Conv3d, LstmCell};
use tapegrad::{ParamStore, Session, Var};

/// Architecture knobs; `M(f3-f2)` in the benchmark naming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub channels_3d: usize,
    pub channels_2d: usize,
    pub blocks: usize,
    pub lstm_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { channels_3d: 256, channels_2d: 256, blocks: 5, lstm_hidden: 256 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels_3d + self.channels_2d == 0 {
            return Err(Error::Config("both encoder channels have width 0".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.lstm_hidden == 0 {
            return Err(Error::Config("lstm_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Output width of the encoding `h`.
    pub fn embedding_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    /// Aggregator steps for `t` input frames: the final two 3D blocks (or
    /// all blocks when fewer) stride time by 2.
    pub fn t_prime(&self, t: usize) -> usize {
        let mut out = t;
        for b in 0..self.blocks {
            if self.temporal_stride(b) == 2 {
                out = tapegrad_out_len(out, 2);
            }
        }
        out
    }

    fn temporal_stride(&self, block: usize) -> usize {
        if block + 2 >= self.blocks {
            2
        } else {
            1
        }
    }

    /// Per-block output widths: doubling up to the configured channel count
    /// at the last block.
    pub fn block_widths(&self, target: usize) -> Vec<usize> {
        (0..self.blocks)
            .map(|i| (target >> (self.blocks - 1 - i)).max(2).min(target))
            .collect()
    }

    /// Total scalar parameter count for this config (classifier/decoder not
    /// included); reported in training logs.
    pub fn param_count(&self) -> usize {
        let mut store = ParamStore::new();
        let mut rng = crate::seeds::rng(0, &[0]);
        let _ = Encoder::new(&mut store, "enc", &mut rng, self.clone());
        store.num_scalar_params()
    }
}

fn tapegrad_out_len(len: usize, stride: usize) -> usize {
    (len + 2 - 3) / stride + 1
}

struct Block3d {
    conv: Conv3d,
    bn: BatchNorm,
}

struct Block2d {
    conv: Conv2d,
    bn: BatchNorm,
}

/// Everything the encoder exposes about one forward pass.
pub struct Encoded {
    /// The video encoding, `(N, D)`.
    pub h: Var,
    /// Last 3D block activation `(N, F3, T', h', w')`, the saliency target.
    pub target_3d: Option<Var>,
    /// Last 2D block activation `(N*T, F2, h', w')`, the saliency fallback.
    pub target_2d: Option<Var>,
    pub t_prime: usize,
}

pub struct Encoder {
    pub config: EncoderConfig,
    blocks3d: Vec<Block3d>,
    blocks2d: Vec<Block2d>,
    lstm_fwd: Vec<LstmCell>,
    lstm_bwd: Vec<LstmCell>,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, scope: &str, rng: &mut R, config: EncoderConfig) -> Self {
        let mut blocks3d = Vec::new();
        if config.channels_3d > 0 {
            let widths = config.block_widths(config.channels_3d);
            let mut in_ch = 3;
            for (i, &w) in widths.iter().enumerate() {
                let stride = (config.temporal_stride(i), 2, 2);
                blocks3d.push(Block3d {
                    conv: Conv3d::new(store, &format!("{scope}.c3d.{i}.conv"), rng, in_ch, w, stride),
                    bn: BatchNorm::new(store, &format!("{scope}.c3d.{i}.bn"), w),
                });
                in_ch = w;
            }
        }
        let mut blocks2d = Vec::new();
        if config.channels_2d > 0 {
            let widths = config.block_widths(config.channels_2d);
            let mut in_ch = 3;
            for (i, &w) in widths.iter().enumerate() {
                blocks2d.push(Block2d {
                    conv: Conv2d::new(store, &format!("{scope}.c2d.{i}.conv"), rng, in_ch, w, 2),
                    bn: BatchNorm::new(store, &format!("{scope}.c2d.{i}.bn"), w),
                });
                in_ch = w;
            }
        }
        let feat = config.channels_3d + config.channels_2d;
        let h = config.lstm_hidden;
        let mut lstm_fwd = Vec::new();
        let mut lstm_bwd = Vec::new();
        for layer in 0..2 {
            let in_dim = if layer == 0 { feat } else { 2 * h };
            lstm_fwd.push(LstmCell::new(store, &format!("{scope}.lstm.{layer}.fwd"), rng, in_dim, h));
            lstm_bwd.push(LstmCell::new(store, &format!("{scope}.lstm.{layer}.bwd"), rng, in_dim, h));
        }
        Encoder { config, blocks3d, blocks2d, lstm_fwd, lstm_bwd }
    }

    /// Stacks clips into the `(N, C, T, H, W)` batch the 3D channel eats.
    pub fn batch_cthw(clips: &[VideoClip]) -> Result<Array5<f64>> {
        if clips.is_empty() {
            return Err(Error::Shape("empty clip batch".into()));
        }
        let (t, h, w) = clips[0].dims();
        let n = clips.len();
        let mut out = Array5::<f64>::zeros((n, 3, t, h, w));
        let plane = h * w;
        let dst = out.as_slice_mut().expect("fresh array is standard");
        for (i, clip) in clips.iter().enumerate() {
            if clip.dims() != (t, h, w) {
                return Err(Error::Shape("clips in one batch must share dimensions".into()));
            }
            let src = clip.data().as_slice().expect("clip is standard layout");
            // (T,H,W,3) -> (3,T,H,W)
            for c in 0..3 {
                let base = (i * 3 + c) * t * plane;
                for ti in 0..t {
                    let drow = &mut dst[base + ti * plane..base + (ti + 1) * plane];
                    let srow = &src[ti * plane * 3..(ti + 1) * plane * 3];
                    for (p, d) in drow.iter_mut().enumerate() {
                        *d = srow[p * 3 + c];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reorders a `(N, C, T, H, W)` batch into per-frame `(N*T, C, H, W)`
    /// layout for the 2D channel via contiguous plane copies.
    fn batch_frames(batch: &Array5<f64>) -> Array4<f64> {
        let (n, c, t, h, w) = batch.dim();
        let plane = h * w;
        let src = batch.as_slice().expect("batch is standard layout");
        let mut out = Array4::<f64>::zeros((n * t, c, h, w));
        let dst = out.as_slice_mut().expect("fresh array is standard");
        for ni in 0..n {
            for ci in 0..c {
                for ti in 0..t {
                    let s = ((ni * c + ci) * t + ti) * plane;
                    let d = ((ni * t + ti) * c + ci) * plane;
                    dst[d..d + plane].copy_from_slice(&src[s..s + plane]);
                }
            }
        }
        out
    }

    /// Spatiotemporal channel: `(N, C, T, H, W)` leaf in, `(N, T', F3)`
    /// features out, plus the final block activation.
    pub fn forward_3d(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        if self.blocks3d.is_empty() {
            return Err(Error::Config("3D channel disabled (width 0)".into()));
        }
        let mut cur = x;
        for block in &self.blocks3d {
            cur = block.conv.forward(s, cur);
            cur = block.bn.forward(s, cur);
            cur = s.tape.relu(cur);
        }
        let pooled = s.tape.global_avg_pool_hw3(cur); // (N, T', F3)
        Ok((pooled, cur))
    }

    /// Per-frame channel: takes the `(N*T, C, H, W)` leaf, returns
    /// `(N, T', F2)` features (temporally averaged onto the 3D grid) plus
    /// the final block activation.
    pub fn forward_2d(&self, s: &mut Session, x_frames: Var, n: usize, t: usize) -> Result<(Var, Var)> {
        if self.blocks2d.is_empty() {
            return Err(Error::Config("2D channel disabled (width 0)".into()));
        }
        let mut cur = x_frames;
        for block in &self.blocks2d {
            cur = block.conv.forward(s, cur);
            cur = block.bn.forward(s, cur);
            cur = s.tape.relu(cur);
        }
        let pooled = s.tape.global_avg_pool_hw(cur); // (N*T, F2)
        let f2 = self.config.channels_2d;
        let seq = s.tape.reshape(pooled, &[n, t, f2]);
        let t_prime = self.config.t_prime(t);
        if t % t_prime != 0 {
            return Err(Error::Shape(format!(
                "cannot align 2D features: {t} frames onto {t_prime} steps"
            )));
        }
        let aligned = s.tape.avg_pool_time(seq, t / t_prime);
        Ok((aligned, cur))
    }

    /// Concatenated per-step features through the 2-layer bidirectional
    /// LSTM, averaged over steps into `h`.
    pub fn aggregate_temporal(&self, s: &mut Session, features: Var) -> Var {
        let shape = s.tape.value(features).shape().to_vec();
        let (_n, t_prime) = (shape[0], shape[1]);
        let n = shape[0];
        let hdim = self.config.lstm_hidden;
        let mut steps: Vec<Var> = (0..t_prime).map(|t| s.tape.index_axis(features, 1, t)).collect();
        for layer in 0..2 {
            let zeros_h = s.leaf(tapegrad::init::zeros(&[n, hdim]));
            let zeros_c = s.leaf(tapegrad::init::zeros(&[n, hdim]));
            let fwd = self.lstm_fwd[layer].run(s, &steps, zeros_h, zeros_c);
            let rev_steps: Vec<Var> = steps.iter().rev().copied().collect();
            let zeros_h2 = s.leaf(tapegrad::init::zeros(&[n, hdim]));
            let zeros_c2 = s.leaf(tapegrad::init::zeros(&[n, hdim]));
            let bwd = self.lstm_bwd[layer].run(s, &rev_steps, zeros_h2, zeros_c2);
            steps = (0..t_prime)
                .map(|t| s.tape.concat(1, &[fwd[t], bwd[t_prime - 1 - t]]))
                .collect();
        }
        let stacked = s.tape.stack_new_axis(1, &steps); // (N, T', 2H)
        s.tape.mean_axis(stacked, 1)
    }

    /// Full encoder over a prepared batch.
    pub fn encode_batch(&self, s: &mut Session, batch: &Array5<f64>) -> Result<Encoded> {
        self.config.validate()?;
        let (n, _c, t, _h, _w) = batch.dim();
        let t_prime = self.config.t_prime(t);

        let mut parts: Vec<Var> = Vec::new();
        let mut target_3d = None;
        let mut target_2d = None;
        if !self.blocks2d.is_empty() {
            let frames = Self::batch_frames(batch);
            let leaf = s.leaf(frames.into_dyn());
            let (seq, act) = self.forward_2d(s, leaf, n, t)?;
            parts.push(seq);
            target_2d = Some(act);
        }
        if !self.blocks3d.is_empty() {
            let leaf = s.leaf(batch.clone().into_dyn());
            let (seq, act) = self.forward_3d(s, leaf)?;
            parts.push(seq);
            target_3d = Some(act);
        }
        let features = if parts.len() == 2 {
            s.tape.concat(2, &[parts[0], parts[1]])
        } else {
            parts[0]
        };
        let h = self.aggregate_temporal(s, features);
        Ok(Encoded { h, target_3d, target_2d, t_prime })
    }

    /// Convenience wrapper over [`Encoder::encode_batch`] for clip slices.
    pub fn encode_clips(&self, s: &mut Session, clips: &[VideoClip]) -> Result<Encoded> {
        let batch = Self::batch_cthw(clips)?;
        self.encode_batch(s, &batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use ndarray::Array4 as NdArray4;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig { channels_3d: 4, channels_2d: 4, blocks: 2, lstm_hidden: 8 }
    }

    fn random_clip(t: usize, hw: usize, seed: u64) -> VideoClip {
        let mut rng = seeds::rng(seed, &[0xc11b]);
        let data = NdArray4::from_shape_simple_fn((t, hw, hw, 3), || rng.random_range(0.0..1.0));
        VideoClip::from_array(data).unwrap()
    }

    #[test]
    fn config_arithmetic() {
        let c = EncoderConfig::default();
        assert_eq!(c.embedding_dim(), 512);
        assert_eq!(c.t_prime(48), 12);
        assert_eq!(c.block_widths(256), vec![16, 32, 64, 128, 256]);
        let tiny = tiny_config();
        assert_eq!(tiny.t_prime(8), 2);
        assert_eq!(tiny.block_widths(4), vec![2, 4]);
        assert!(EncoderConfig { channels_3d: 0, channels_2d: 0, ..tiny }.validate().is_err());
    }

    #[test]
    fn output_shapes_and_determinism() {
        let cfg = tiny_config();
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(1, &[1]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg.clone());
        let clip = random_clip(8, 8, 3);
        let run = |store: &mut ParamStore| {
            let mut s = Session::inference(store);
            let out = enc.encode_clips(&mut s, std::slice::from_ref(&clip)).unwrap();
            (s.tape.value(out.h).clone(), out.t_prime)
        };
        let (h1, tp) = run(&mut store);
        let (h2, _) = run(&mut store);
        assert_eq!(tp, 2);
        assert_eq!(h1.shape(), &[1, 16]);
        assert_eq!(h1, h2, "eval encoding must be deterministic");
        assert!(h1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_shape_t_prime_is_twelve() {
        // batch shape arithmetic at the real pipeline size, tiny widths
        let cfg = EncoderConfig { channels_3d: 2, channels_2d: 2, blocks: 5, lstm_hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(2, &[2]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg.clone());
        let clip = random_clip(48, 96, 9);
        let mut s = Session::inference(&mut store);
        let batch = Encoder::batch_cthw(std::slice::from_ref(&clip)).unwrap();
        let (seq, act) = {
            let leaf = s.leaf(batch.clone().into_dyn());
            enc.forward_3d(&mut s, leaf).unwrap()
        };
        assert_eq!(s.tape.value(seq).shape(), &[1, 12, 2]);
        assert_eq!(s.tape.value(act).shape(), &[1, 2, 12, 3, 3]);
    }

    #[test]
    fn two_d_features_are_frame_local_and_reverse_with_frames() {
        let cfg = EncoderConfig { channels_3d: 0, channels_2d: 4, blocks: 2, lstm_hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(3, &[3]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg);
        let clip = random_clip(8, 8, 5);
        let batch = Encoder::batch_cthw(std::slice::from_ref(&clip)).unwrap();
        let reversed = {
            let mut r = batch.clone();
            r.invert_axis(Axis(2));
            r
        };
        let run = |store: &mut ParamStore, b: &Array5<f64>| {
            let (n, _, t, h, w) = b.dim();
            let mut s = Session::inference(store);
            let frames: Array4<f64> = b
                .view()
                .permuted_axes([0, 2, 1, 3, 4])
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((n * t, 3, h, w))
                .unwrap();
            let leaf = s.leaf(frames.into_dyn());
            let (seq, _) = enc.forward_2d(&mut s, leaf, n, t).unwrap();
            s.tape.value(seq).clone()
        };
        let fwd = run(&mut store, &batch);
        let bwd = run(&mut store, &reversed);
        // frame reversal reverses whole pooling windows; with T=8 onto
        // T'=2 the two pooled steps swap exactly
        let fwd3 = fwd.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let bwd3 = bwd.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        for f in 0..fwd3.dim().2 {
            assert!((fwd3[[0, 0, f]] - bwd3[[0, 1, f]]).abs() < 1e-12);
            assert!((fwd3[[0, 1, f]] - bwd3[[0, 0, f]]).abs() < 1e-12);
        }
    }

    #[test]
    fn three_d_is_time_direction_sensitive() {
        let cfg = EncoderConfig { channels_3d: 4, channels_2d: 0, blocks: 2, lstm_hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(4, &[4]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg);
        let clip = random_clip(8, 8, 6);
        let batch = Encoder::batch_cthw(std::slice::from_ref(&clip)).unwrap();
        let mut reversed = batch.clone();
        reversed.invert_axis(Axis(2));
        let run = |store: &mut ParamStore, b: &Array5<f64>| {
            let mut s = Session::inference(store);
            let leaf = s.leaf(b.clone().into_dyn());
            let (seq, _) = enc.forward_3d(&mut s, leaf).unwrap();
            s.tape.value(seq).clone()
        };
        let fwd = run(&mut store, &batch);
        let mut bwd = run(&mut store, &reversed);
        bwd.invert_axis(Axis(1));
        let diff = (&fwd - &bwd).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(diff > 1e-6, "3D features should not be merely reversed under time reversal");
    }

    #[test]
    fn temporally_constant_clip_gives_equal_3d_steps() {
        let cfg = EncoderConfig { channels_3d: 4, channels_2d: 0, blocks: 2, lstm_hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(5, &[5]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg);
        let mut rng2 = seeds::rng(6, &[6]);
        let frame = ndarray::Array3::from_shape_simple_fn((8, 8, 3), || rng2.random_range(0.0..1.0));
        let mut data = NdArray4::<f64>::zeros((8, 8, 8, 3));
        for t in 0..8 {
            data.index_axis_mut(Axis(0), t).assign(&frame);
        }
        let clip = VideoClip::from_array(data).unwrap();
        let batch = Encoder::batch_cthw(std::slice::from_ref(&clip)).unwrap();
        let mut s = Session::inference(&mut store);
        let leaf = s.leaf(batch.into_dyn());
        let (seq, _) = enc.forward_3d(&mut s, leaf).unwrap();
        let v = s.tape.value(seq);
        let v3 = v.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        for f in 0..v3.dim().2 {
            assert!(
                (v3[[0, 0, f]] - v3[[0, 1, f]]).abs() < 1e-9,
                "constant clip must give equal per-step features"
            );
        }
    }

    #[test]
    fn aggregate_single_step_equals_lstm_output() {
        let cfg = EncoderConfig { channels_3d: 4, channels_2d: 0, blocks: 2, lstm_hidden: 8 };
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(7, &[7]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg);
        let mut s = Session::inference(&mut store);
        let feats = tapegrad::init::uniform(&mut seeds::rng(8, &[8]), &[2, 1, 4], 1.0);
        let leaf = s.leaf(feats);
        let h = enc.aggregate_temporal(&mut s, leaf);
        // mean over a single step is that step
        assert_eq!(s.tape.value(h).shape(), &[2, 16]);
        assert!(s.tape.value(h).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn permuting_steps_changes_h() {
        let cfg = EncoderConfig { channels_3d: 4, channels_2d: 0, blocks: 2, lstm_hidden: 8 };
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(9, &[9]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg);
        let feats = tapegrad::init::uniform(&mut seeds::rng(10, &[10]), &[1, 4, 4], 1.0);
        let mut permuted = feats.clone();
        permuted.invert_axis(Axis(1));
        let permuted = permuted.as_standard_layout().to_owned();
        let run = |store: &mut ParamStore, f: &tapegrad::Arr| {
            let mut s = Session::inference(store);
            let leaf = s.leaf(f.clone());
            let h = enc.aggregate_temporal(&mut s, leaf);
            s.tape.value(h).clone()
        };
        let a = run(&mut store, &feats);
        let b = run(&mut store, &permuted);
        let diff = (&a - &b).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(diff > 1e-9, "step order must matter to the aggregator");
    }

    #[test]
    fn batch_invariance_in_eval() {
        let cfg = tiny_config();
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(11, &[11]);
        let enc = Encoder::new(&mut store, "enc", &mut rng, cfg);
        let a = random_clip(8, 8, 21);
        let b = random_clip(8, 8, 22);
        let solo = {
            let mut s = Session::inference(&mut store);
            let out = enc.encode_clips(&mut s, std::slice::from_ref(&a)).unwrap();
            s.tape.value(out.h).clone()
        };
        let pair = {
            let mut s = Session::inference(&mut store);
            let out = enc.encode_clips(&mut s, &[a.clone(), b]).unwrap();
            s.tape.value(out.h).clone()
        };
        let solo_row = solo.index_axis(Axis(0), 0);
        let pair_row = pair.index_axis(Axis(0), 0);
        for (x, y) in solo_row.iter().zip(pair_row.iter()) {
            assert!((x - y).abs() < 1e-12, "eval encoding must not depend on batch companions");
        }
    }
}
