//! Gradient-weighted class-activation saliency extended to video, for
//! classifier classes and for individual caption tokens.
//!
//! The objective is the pre-softmax class score (or the token
//! log-probability); channel weights are the global average of its gradient
//! over the target layer's space-time map, and the saliency volume is the
//! ReLU of the weighted activation sum, max-normalized.

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::videoio::VideoClip;
use ndarray::{Array3, Ix4, Ix5};
use std::path::Path;
use tapegrad::{Arr, Session};

/// Which layer produced the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetLayer {
    /// Last 3D convolutional block (temporally sensitive), the default.
    Conv3d,
    /// Per-frame fallback from the last 2D block when the 3D channel is
    /// disabled; disclosed in the output metadata.
    Conv2dFallback,
}

/// Nonnegative saliency over the target layer's space-time grid,
/// max-normalized to 1 when nonzero.
#[derive(Debug, Clone)]
pub struct SaliencyVolume {
    pub values: Array3<f64>, // (T', h', w')
    pub layer: TargetLayer,
}

impl SaliencyVolume {
    fn from_weighted(activation: &Arr, grad: &Arr, layer: TargetLayer) -> Result<Self> {
        // expected shape: (1, C, T', h', w') or (T, C, h', w') for the 2D
        // fallback (batch of frames)
        let (values, layer) = match activation.ndim() {
            5 => {
                let a = activation.view().into_dimensionality::<Ix5>().unwrap();
                let g = grad.view().into_dimensionality::<Ix5>().unwrap();
                let (_, c, t, h, w) = a.dim();
                let count = (t * h * w) as f64;
                let mut out = Array3::<f64>::zeros((t, h, w));
                let a0 = a.index_axis(ndarray::Axis(0), 0);
                let g0 = g.index_axis(ndarray::Axis(0), 0);
                for ch in 0..c {
                    let weight = g0.index_axis(ndarray::Axis(0), ch).sum() / count;
                    let amap = a0.index_axis(ndarray::Axis(0), ch);
                    out.zip_mut_with(&amap, |o, &av| *o += weight * av);
                }
                (out, layer)
            }
            4 => {
                let a = activation.view().into_dimensionality::<Ix4>().unwrap();
                let g = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (t, c, h, w) = a.dim();
                let count = (t * h * w) as f64;
                let mut out = Array3::<f64>::zeros((t, h, w));
                for ch in 0..c {
                    let weight = g.index_axis(ndarray::Axis(1), ch).sum() / count;
                    let amap = a.index_axis(ndarray::Axis(1), ch);
                    out.zip_mut_with(&amap, |o, &av| *o += weight * av);
                }
                (out, TargetLayer::Conv2dFallback)
            }
            d => return Err(Error::Shape(format!("unexpected target activation rank {d}"))),
        };
        let mut values = values.mapv(|v| v.max(0.0));
        let max = values.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            values.mapv_inplace(|v| v / max);
        }
        Ok(SaliencyVolume { values, layer })
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Trilinear upsampling to an overlay grid (cell-center aligned).
    pub fn upsample(&self, t2: usize, h2: usize, w2: usize) -> Array3<f64> {
        let (t, h, w) = self.values.dim();
        let mut out = Array3::<f64>::zeros((t2, h2, w2));
        let scale = |o: usize, from: usize, to: usize| -> (usize, usize, f64) {
            if from == 1 {
                return (0, 0, 0.0);
            }
            let f = ((o as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, (from - 1) as f64);
            let i0 = f.floor() as usize;
            let i1 = (i0 + 1).min(from - 1);
            (i0, i1, f - i0 as f64)
        };
        for ot in 0..t2 {
            let (t0, t1, wt) = scale(ot, t, t2);
            for oy in 0..h2 {
                let (y0, y1, wy) = scale(oy, h, h2);
                for ox in 0..w2 {
                    let (x0, x1, wx) = scale(ox, w, w2);
                    let c00 = self.values[[t0, y0, x0]] * (1.0 - wx) + self.values[[t0, y0, x1]] * wx;
                    let c01 = self.values[[t0, y1, x0]] * (1.0 - wx) + self.values[[t0, y1, x1]] * wx;
                    let c10 = self.values[[t1, y0, x0]] * (1.0 - wx) + self.values[[t1, y0, x1]] * wx;
                    let c11 = self.values[[t1, y1, x0]] * (1.0 - wx) + self.values[[t1, y1, x1]] * wx;
                    let c0 = c00 * (1.0 - wy) + c01 * wy;
                    let c1 = c10 * (1.0 - wy) + c11 * wy;
                    out[[ot, oy, ox]] = c0 * (1.0 - wt) + c1 * wt;
                }
            }
        }
        out
    }

    /// Portable array export: NPY v1.0, C-order float64.
    pub fn save_npy(&self, path: &Path) -> Result<()> {
        let (t, h, w) = self.values.dim();
        let header_body = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({t}, {h}, {w}), }}");
        let mut header = header_body.into_bytes();
        // pad with spaces so magic + header length is a multiple of 64
        let base = 10 + header.len() + 1;
        let pad = (64 - base % 64) % 64;
        header.extend(std::iter::repeat_n(b' ', pad));
        header.push(b'\n');
        let mut out = Vec::with_capacity(10 + header.len() + self.values.len() * 8);
        out.extend_from_slice(b"\x93NUMPY\x01\x00");
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn saliency_target(
    s: &Session,
    out: &crate::encoder::Encoded,
) -> Result<(tapegrad::Var, TargetLayer)> {
    if let Some(t) = out.target_3d {
        let _ = s;
        Ok((t, TargetLayer::Conv3d))
    } else if let Some(t) = out.target_2d {
        Ok((t, TargetLayer::Conv2dFallback))
    } else {
        Err(Error::Config("model exposes no convolutional target layer".into()))
    }
}

/// Saliency for a classifier class on one clip.
pub fn grad_cam_class(model: &mut JointModel, clip: &VideoClip, class_id: usize) -> Result<SaliencyVolume> {
    if class_id >= model.classifier.classes {
        return Err(Error::Label(format!(
            "class id {class_id} outside {} classes",
            model.classifier.classes
        )));
    }
    let classes = model.classifier.classes;
    let mut s = Session::eval(&mut model.store);
    let out = model.encoder.encode_clips(&mut s, std::slice::from_ref(clip))?;
    let (target, layer) = saliency_target(&s, &out)?;
    let logits = model.classifier.logits(&mut s, out.h);
    debug_assert_eq!(s.tape.value(logits).shape(), &[1, classes]);
    let picked = s.tape.gather_rows(logits, &[class_id]);
    let score = s.tape.sum_all(picked);
    let grads = s.backward_keeping(score, &[target]);
    let activation = s.tape.value(target).clone();
    let zero;
    let grad = match grads.get(target) {
        Some(g) => g,
        None => {
            zero = Arr::zeros(activation.raw_dim());
            &zero
        }
    };
    SaliencyVolume::from_weighted(&activation, grad, layer)
}

/// Saliency for the caption token at `position` under teacher forcing.
pub fn grad_cam_token(
    model: &mut JointModel,
    clip: &VideoClip,
    caption: &TokenSequence,
    position: usize,
) -> Result<SaliencyVolume> {
    if model.decoder.is_none() {
        return Err(Error::Config("model has no caption decoder".into()));
    }
    let mut s = Session::eval(&mut model.store);
    let out = model.encoder.encode_clips(&mut s, std::slice::from_ref(clip))?;
    let (target, layer) = saliency_target(&s, &out)?;
    let decoder = model.decoder.as_ref().expect("checked above");
    let objective = decoder.token_logprob(&mut s, out.h, caption, position)?;
    let grads = s.backward_keeping(objective, &[target]);
    let activation = s.tape.value(target).clone();
    let zero;
    let grad = match grads.get(target) {
        Some(g) => g,
        None => {
            zero = Arr::zeros(activation.raw_dim());
            &zero
        }
    };
    SaliencyVolume::from_weighted(&activation, grad, layer)
}

/// Alpha-blended heat overlay on a subsampled frame grid, written as one
/// PNG. A zero volume reproduces the raw frames.
pub fn render_saliency_overlay(clip: &VideoClip, volume: &SaliencyVolume, path: &Path) -> Result<()> {
    let (t, h, w) = clip.dims();
    let up = volume.upsample(t, h, w);
    let cols = 4usize;
    let rows = 2usize;
    let count = cols * rows;
    let step = (t as f64 / count as f64).max(1.0);
    let mut canvas = image::RgbImage::new((w * cols) as u32, (h * rows) as u32);
    let data = clip.data();
    for cell in 0..count {
        let ti = ((cell as f64 * step) as usize).min(t - 1);
        let (gy, gx) = (cell / cols, cell % cols);
        for y in 0..h {
            for x in 0..w {
                let heat = up[[ti, y, x]].clamp(0.0, 1.0);
                let alpha = 0.55 * heat;
                // red-yellow ramp
                let hr = 255.0;
                let hg = 190.0 * heat;
                let hb = 30.0 * (1.0 - heat);
                let px = |c: usize| data[[ti, y, x, c]] * 255.0;
                let blend = |base: f64, heatc: f64| (base * (1.0 - alpha) + heatc * alpha).round().clamp(0.0, 255.0) as u8;
                canvas.put_pixel(
                    (gx * w + x) as u32,
                    (gy * h + y) as u32,
                    image::Rgb([blend(px(0), hr), blend(px(1), hg), blend(px(2), hb)]),
                );
            }
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    canvas
        .save(path)
        .map_err(|e| Error::Other(format!("saving {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, BOS, EOS, PAD};
    use crate::encoder::EncoderConfig;
    use crate::model::{DecoderSpec, ModelConfig};
    use crate::seeds;
    use ndarray::Array4;
    use rand::Rng;

    fn tiny_model(with_decoder: bool, f3: usize, f2: usize) -> JointModel {
        let vocab = build_vocabulary(&[vec!["moving".into(), "square".into()]], 1);
        JointModel::new(ModelConfig {
            encoder: EncoderConfig { channels_3d: f3, channels_2d: f2, blocks: 2, lstm_hidden: 6 },
            classes: 4,
            decoder: with_decoder.then(|| DecoderSpec {
                embed_dim: 5,
                hidden: 6,
                max_len: 8,
                vocab: vocab.tokens().to_vec(),
            }),
            hierarchy: None,
            group_count: None,
            init_seed: 3,
        })
        .unwrap()
    }

    fn random_clip(seed: u64) -> VideoClip {
        let mut rng = seeds::rng(seed, &[0xc1]);
        VideoClip::from_array(Array4::from_shape_simple_fn((8, 8, 8, 3), || rng.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn constant_score_gives_zero_volume() {
        let mut model = tiny_model(false, 4, 0);
        // zero classifier weights: every logit constant in the activations
        let w = model.store.id_of("classifier.w").unwrap();
        model.store.set_value(w, tapegrad::init::zeros(&[12, 4]));
        let clip = random_clip(1);
        let vol = grad_cam_class(&mut model, &clip, 2).unwrap();
        assert!(vol.is_zero());
        assert_eq!(vol.layer, TargetLayer::Conv3d);
    }

    #[test]
    fn volumes_are_normalized_and_shaped() {
        let mut model = tiny_model(false, 4, 4);
        let clip = random_clip(2);
        let vol = grad_cam_class(&mut model, &clip, 0).unwrap();
        let max = vol.values.iter().cloned().fold(0.0f64, f64::max);
        assert!(vol.values.iter().all(|&v| v >= 0.0));
        assert!(max <= 1.0 + 1e-12);
        // blocks=2 on 8x8x8 input: T'=2, spatial 2x2
        assert_eq!(vol.values.dim(), (2, 2, 2));
    }

    #[test]
    fn logit_shift_invariance() {
        let mut model = tiny_model(false, 4, 0);
        let clip = random_clip(3);
        let before = grad_cam_class(&mut model, &clip, 1).unwrap();
        let b = model.store.id_of("classifier.b").unwrap();
        let shifted = model.store.value(b) + 5.0;
        model.store.set_value(b, shifted);
        let after = grad_cam_class(&mut model, &clip, 1).unwrap();
        let diff = (&before.values - &after.values)
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-9, "bias shift must not change saliency, diff {diff}");
    }

    #[test]
    fn fallback_to_2d_when_no_3d_channel() {
        let mut model = tiny_model(false, 0, 4);
        let clip = random_clip(4);
        let vol = grad_cam_class(&mut model, &clip, 0).unwrap();
        assert_eq!(vol.layer, TargetLayer::Conv2dFallback);
        assert_eq!(vol.values.dim(), (8, 2, 2), "per-frame fallback keeps T frames");
    }

    #[test]
    fn token_positions_validate_and_differ() {
        let mut model = tiny_model(true, 4, 0);
        let clip = random_clip(5);
        let mut v = vec![BOS, 4, 5, EOS];
        v.resize(10, PAD);
        let seq = TokenSequence::new(v).unwrap();
        let v1 = grad_cam_token(&mut model, &clip, &seq, 1).unwrap();
        let v2 = grad_cam_token(&mut model, &clip, &seq, 2).unwrap();
        assert!(grad_cam_token(&mut model, &clip, &seq, 5).is_err(), "PAD position");
        let diff = (&v1.values - &v2.values).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(diff > 1e-9, "different token positions should generically differ");
    }

    #[test]
    fn upsample_preserves_argmax_cell() {
        let mut values = Array3::<f64>::zeros((2, 3, 3));
        values[[1, 2, 0]] = 1.0;
        let vol = SaliencyVolume { values, layer: TargetLayer::Conv3d };
        let up = vol.upsample(8, 12, 12);
        let mut best = (0, 0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for t in 0..8 {
            for y in 0..12 {
                for x in 0..12 {
                    if up[[t, y, x]] > best_v {
                        best_v = up[[t, y, x]];
                        best = (t, y, x);
                    }
                }
            }
        }
        // source cell (1,2,0) covers t in 4..8, y in 8..12, x in 0..4
        assert!(best.0 >= 4, "argmax t {} outside source cell", best.0);
        assert!(best.1 >= 8);
        assert!(best.2 < 4);
    }

    #[test]
    fn overlay_of_zero_volume_is_raw_frames() {
        let dir = tempfile::tempdir().unwrap();
        let clip = random_clip(6);
        let (t, h, w) = clip.dims();
        let vol = SaliencyVolume { values: Array3::zeros((2, 2, 2)), layer: TargetLayer::Conv3d };
        let path = dir.path().join("overlay.png");
        render_saliency_overlay(&clip, &vol, &path).unwrap();
        let img = image::open(&path).unwrap().into_rgb8();
        assert_eq!(img.dimensions(), ((w * 4) as u32, (h * 2) as u32));
        // first tile equals the raw first frame
        let data = clip.data();
        for y in 0..h {
            for x in 0..w {
                let px = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    let raw = (data[[0, y, x, c]] * 255.0).round() as i32;
                    assert!((px[c] as i32 - raw).abs() <= 1);
                }
            }
        }
        let _ = t;
    }

    #[test]
    fn npy_export_has_magic_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let vol = SaliencyVolume { values: Array3::from_elem((2, 3, 4), 0.5), layer: TargetLayer::Conv3d };
        let path = dir.path().join("vol.npy");
        vol.save_npy(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!(bytes.len(), 10 + header_len + 2 * 3 * 4 * 8);
        let header = std::str::from_utf8(&bytes[10..10 + header_len]).unwrap();
        assert!(header.contains("(2, 3, 4)"));
    }
}
