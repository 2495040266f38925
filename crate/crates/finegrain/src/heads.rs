//! Classifier and caption decoder over the shared encoding, plus the
//! weighted joint loss.

use crate::corpus::{TokenSequence, BOS, EOS, PAD};
use crate::error::{Error, Result};
use ndarray::{Array1, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::layers::{Embedding, Linear, LstmCell};
use tapegrad::{ParamStore, Session, Var};

/// Classification/captioning mix: `loss = lambda * cls + (1 - lambda) * cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    lambda: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
            return Err(Error::Config(format!("lambda must lie in [0,1], got {lambda}")));
        }
        Ok(LossWeights { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Exact weighted sum of the two losses.
pub fn joint_loss(s: &mut Session, cls_loss: Var, cap_loss: Var, weights: LossWeights) -> Var {
    let a = s.tape.scale(cls_loss, weights.lambda());
    let b = s.tape.scale(cap_loss, 1.0 - weights.lambda());
    s.tape.add(a, b)
}

/// Affine + softmax over the encoding.
pub struct ClassifierHead {
    linear: Linear,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new<R: Rng>(store: &mut ParamStore, scope: &str, rng: &mut R, dim: usize, classes: usize) -> Self {
        ClassifierHead { linear: Linear::new(store, scope, rng, dim, classes), classes }
    }

    pub fn logits(&self, s: &mut Session, h: Var) -> Var {
        self.linear.forward(s, h)
    }

    /// Class probabilities `(N, K)`; rows sum to 1.
    pub fn classify(&self, s: &mut Session, h: Var) -> Var {
        let logits = self.logits(s, h);
        s.tape.softmax(logits)
    }

    /// Mean cross-entropy against integer labels.
    pub fn cross_entropy(&self, s: &mut Session, h: Var, labels: &[usize]) -> Var {
        let logits = self.logits(s, h);
        let ls = s.tape.log_softmax(logits);
        let picked = s.tape.gather_rows(ls, labels);
        let total = s.tape.sum_all(picked);
        s.tape.scale(total, -1.0 / labels.len() as f64)
    }
}

/// Decoder sizes; the conditioning projection turns `h` into the initial
/// hidden and cell states of both layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
}

/// Two-layer unidirectional LSTM over token embeddings, conditioned on `h`
/// through its initial states, with an untied output projection.
pub struct CaptionDecoder {
    pub config: DecoderConfig,
    embedding: Embedding,
    cells: [LstmCell; 2],
    init_proj: Linear,
    out_proj: Linear,
}

/// Greedy decode of one sequence: tokens plus the log-probability of each
/// emitted token (EOS included when produced).
#[derive(Debug, Clone)]
pub struct DecodedCaption {
    pub sequence: TokenSequence,
    pub token_logprobs: Vec<(usize, f64)>,
}

impl CaptionDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, scope: &str, rng: &mut R, enc_dim: usize, config: DecoderConfig) -> Self {
        let embedding = Embedding::new(store, &format!("{scope}.embed"), rng, config.vocab_size, config.embed_dim);
        let cells = [
            LstmCell::new(store, &format!("{scope}.lstm.0"), rng, config.embed_dim, config.hidden),
            LstmCell::new(store, &format!("{scope}.lstm.1"), rng, config.hidden, config.hidden),
        ];
        let init_proj = Linear::new(store, &format!("{scope}.init"), rng, enc_dim, 4 * config.hidden);
        let out_proj = Linear::new(store, &format!("{scope}.proj"), rng, config.hidden, config.vocab_size);
        CaptionDecoder { config, embedding, cells, init_proj, out_proj }
    }

    /// Initial `(h, c)` pairs for both layers from the encoding.
    fn initial_states(&self, s: &mut Session, h: Var) -> [(Var, Var); 2] {
        let hd = self.config.hidden;
        let proj = self.init_proj.forward(s, h); // (N, 4H)
        let proj = s.tape.tanh(proj);
        let h1 = s.tape.narrow(proj, 1, 0, hd);
        let c1 = s.tape.narrow(proj, 1, hd, hd);
        let h2 = s.tape.narrow(proj, 1, 2 * hd, hd);
        let c2 = s.tape.narrow(proj, 1, 3 * hd, hd);
        [(h1, c1), (h2, c2)]
    }

    /// One decoder step from token embeddings `(N, E)`.
    fn step(&self, s: &mut Session, x: Var, states: &mut [(Var, Var); 2]) -> Var {
        let (h1, c1) = self.cells[0].step(s, x, states[0].0, states[0].1);
        states[0] = (h1, c1);
        let (h2, c2) = self.cells[1].step(s, h1, states[1].0, states[1].1);
        states[1] = (h2, c2);
        self.out_proj.forward(s, h2) // (N, V)
    }

    /// Teacher-forced negative log-likelihood, summed over scored positions
    /// (BOS-conditioned first step through EOS; PAD positions excluded) and
    /// averaged over the batch.
    pub fn caption_nll(&self, s: &mut Session, h: Var, targets: &[TokenSequence]) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Shape("caption_nll over an empty batch".into()));
        }
        let n = targets.len();
        let len = targets[0].len();
        for t in targets {
            if t.len() != len {
                return Err(Error::Shape("caption batch must share storage length".into()));
            }
            for &i in t.indices() {
                if i >= self.config.vocab_size {
                    return Err(Error::Validation {
                        video_id: String::new(),
                        message: format!("token index {i} outside vocabulary of {}", self.config.vocab_size),
                    });
                }
            }
        }
        let mut states = self.initial_states(s, h);
        let mut total: Option<Var> = None;
        for p in 0..len - 1 {
            let inputs: Vec<usize> = targets.iter().map(|t| t.indices()[p]).collect();
            let outputs: Vec<usize> = targets.iter().map(|t| t.indices()[p + 1]).collect();
            let mask: Vec<f64> = outputs.iter().map(|&o| if o == PAD { 0.0 } else { 1.0 }).collect();
            if mask.iter().all(|&m| m == 0.0) {
                break; // every sequence is past its EOS
            }
            let emb = self.embedding.forward(s, &inputs);
            let logits = self.step(s, emb, &mut states);
            let ls = s.tape.log_softmax(logits);
            let picked = s.tape.gather_rows(ls, &outputs);
            let masked = s.tape.mul_const(picked, Array1::from_vec(mask).into_dyn());
            let step_sum = s.tape.sum_all(masked);
            total = Some(match total {
                Some(t) => s.tape.add(t, step_sum),
                None => step_sum,
            });
        }
        let total = total.expect("at least one scored position");
        Ok(s.tape.scale(total, -1.0 / n as f64))
    }

    /// Greedy decoding: feeds back the argmax token (ties to the lowest
    /// index), stops at EOS or `max_len` content tokens.
    pub fn decode_greedy(&self, s: &mut Session, h: Var) -> Vec<DecodedCaption> {
        let n = s.tape.value(h).shape()[0];
        let max_len = self.config.max_len;
        let mut states = self.initial_states(s, h);
        let mut current = vec![BOS; n];
        let mut done = vec![false; n];
        let mut emitted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for _ in 0..max_len + 1 {
            if done.iter().all(|&d| d) {
                break;
            }
            let emb = self.embedding.forward(s, &current);
            let logits = self.step(s, emb, &mut states);
            let ls = s.tape.log_softmax(logits);
            let lsv = s.tape.value(ls);
            let ls2 = lsv.view().into_dimensionality::<Ix2>().unwrap();
            for i in 0..n {
                if done[i] {
                    continue;
                }
                let row = ls2.row(i);
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (j, &v) in row.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                if best == EOS || emitted[i].len() >= max_len {
                    emitted[i].push((EOS, if best == EOS { best_v } else { row[EOS] }));
                    done[i] = true;
                    current[i] = EOS;
                } else {
                    emitted[i].push((best, best_v));
                    current[i] = best;
                }
            }
        }
        emitted
            .into_iter()
            .map(|toks| {
                let mut indices = vec![BOS];
                let mut logprobs = Vec::new();
                for (tok, lp) in toks {
                    indices.push(tok);
                    logprobs.push((tok, lp));
                    if tok == EOS {
                        break;
                    }
                }
                if *indices.last().unwrap() != EOS {
                    indices.push(EOS);
                }
                indices.resize(self.config.max_len + 2, PAD);
                DecodedCaption {
                    sequence: TokenSequence::new(indices).expect("constructed layout is valid"),
                    token_logprobs: logprobs,
                }
            })
            .collect()
    }

    /// Log-probability of the token at `position` of a teacher-forced pass;
    /// the per-token saliency objective.
    pub fn token_logprob(&self, s: &mut Session, h: Var, target: &TokenSequence, position: usize) -> Result<Var> {
        if position == 0 || position >= target.len() {
            return Err(Error::Validation {
                video_id: String::new(),
                message: format!("position {position} outside the scored range"),
            });
        }
        let tok = target.indices()[position];
        if tok == PAD {
            return Err(Error::Validation {
                video_id: String::new(),
                message: format!("position {position} points at PAD"),
            });
        }
        let mut states = self.initial_states(s, h);
        let mut out = None;
        for p in 0..position {
            let input = vec![target.indices()[p]];
            let emb = self.embedding.forward(s, &input);
            let logits = self.step(s, emb, &mut states);
            if p + 1 == position {
                let ls = s.tape.log_softmax(logits);
                out = Some(s.tape.gather_rows(ls, &[tok]));
            }
        }
        let picked = out.expect("position reached");
        Ok(s.tape.sum_all(picked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use tapegrad::init;

    #[test]
    fn loss_weights_validate() {
        assert!(LossWeights::new(0.0).is_ok());
        assert!(LossWeights::new(1.0).is_ok());
        assert!(LossWeights::new(-0.1).is_err());
        assert!(LossWeights::new(1.1).is_err());
        assert!(LossWeights::new(f64::NAN).is_err());
    }

    #[test]
    fn joint_loss_endpoints_and_mix() {
        let mut store = ParamStore::new();
        let mut s = Session::eval(&mut store);
        let cls = s.leaf(init::full(&[], 2.0));
        let cap = s.leaf(init::full(&[], 3.0));
        let l1 = joint_loss(&mut s, cls, cap, LossWeights::new(1.0).unwrap());
        assert_eq!(s.tape.scalar(l1), 2.0);
        let l0 = joint_loss(&mut s, cls, cap, LossWeights::new(0.0).unwrap());
        assert_eq!(s.tape.scalar(l0), 3.0);
        let lm = joint_loss(&mut s, cls, cap, LossWeights::new(0.1).unwrap());
        assert!((s.tape.scalar(lm) - 2.9).abs() < 1e-12);
    }

    #[test]
    fn classify_zero_weights_is_uniform_and_shift_invariant() {
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(1, &[1]);
        let head = ClassifierHead::new(&mut store, "cls", &mut rng, 6, 4);
        // zero the projection
        store.set_value(head.linear.w, init::zeros(&[6, 4]));
        store.set_value(head.linear.b, init::zeros(&[4]));
        let h = init::uniform(&mut rng, &[2, 6], 1.0);
        let probs = {
            let mut s = Session::eval(&mut store);
            let hv = s.leaf(h.clone());
            let p = head.classify(&mut s, hv);
            s.tape.value(p).clone()
        };
        for &p in probs.iter() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        // shifting every logit by a constant (bias) leaves probabilities
        store.set_value(head.linear.b, init::full(&[4], 3.7));
        let shifted = {
            let mut s = Session::eval(&mut store);
            let hv = s.leaf(h);
            let p = head.classify(&mut s, hv);
            s.tape.value(p).clone()
        };
        for (a, b) in probs.iter().zip(shifted.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_hand_softmax_values() {
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(2, &[2]);
        let head = ClassifierHead::new(&mut store, "cls", &mut rng, 4, 4);
        // identity projection (input = logits), zero bias
        let mut w = init::zeros(&[4, 4]);
        for i in 0..4 {
            w[[i, i]] = 1.0;
        }
        store.set_value(head.linear.w, w);
        store.set_value(head.linear.b, init::zeros(&[4]));
        let logits = ndarray::arr2(&[[0.1f64.ln(), 0.2f64.ln(), 0.3f64.ln(), 0.4f64.ln()]]).into_dyn();
        let mut s = Session::eval(&mut store);
        let hv = s.leaf(logits);
        let p = head.classify(&mut s, hv);
        let pv = s.tape.value(p);
        let expect = [0.1, 0.2, 0.3, 0.4];
        for (got, want) in pv.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_sums_to_one_over_random_trials() {
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(3, &[3]);
        let head = ClassifierHead::new(&mut store, "cls", &mut rng, 5, 7);
        for trial in 0..1000 {
            let h = init::uniform(&mut seeds::rng(4, &[trial]), &[1, 5], 3.0);
            let mut s = Session::inference(&mut store);
            let hv = s.leaf(h);
            let p = head.classify(&mut s, hv);
            let sum: f64 = s.tape.value(p).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "trial {trial}: probs sum to {sum}");
        }
    }

    fn tiny_decoder(store: &mut ParamStore, vocab: usize) -> CaptionDecoder {
        let mut rng = seeds::rng(5, &[5]);
        CaptionDecoder::new(
            store,
            "dec",
            &mut rng,
            6,
            DecoderConfig { vocab_size: vocab, embed_dim: 4, hidden: 5, max_len: 14 },
        )
    }

    #[test]
    fn uniform_decoder_nll_is_positions_times_log_vocab() {
        let mut store = ParamStore::new();
        let dec = tiny_decoder(&mut store, 100);
        // zero output projection -> uniform distribution each step
        store.set_value(dec.out_proj.w, init::zeros(&[5, 100]));
        store.set_value(dec.out_proj.b, init::zeros(&[100]));
        // 4 content tokens + EOS = 5 scored positions
        let seq = TokenSequence::new({
            let mut v = vec![BOS, 7, 8, 9, 10, EOS];
            v.resize(16, PAD);
            v
        })
        .unwrap();
        let mut s = Session::eval(&mut store);
        let h = s.leaf(init::zeros(&[1, 6]));
        let nll = dec.caption_nll(&mut s, h, &[seq]).unwrap();
        let got = s.tape.scalar(nll);
        let expect = 5.0 * (100.0f64).ln();
        assert!((got - expect).abs() < 1e-9, "got {got}, expect {expect}");
    }

    #[test]
    fn nll_ignores_pad_region() {
        let mut store = ParamStore::new();
        let dec = tiny_decoder(&mut store, 12);
        let mut a = vec![BOS, 5, 6, EOS];
        a.resize(16, PAD);
        let seq_a = TokenSequence::new(a).unwrap();
        let h = init::uniform(&mut seeds::rng(6, &[6]), &[1, 6], 1.0);
        let run = |store: &mut ParamStore, seq: &TokenSequence| {
            let mut s = Session::eval(store);
            let hv = s.leaf(h.clone());
            let nll = dec.caption_nll(&mut s, hv, std::slice::from_ref(seq)).unwrap();
            s.tape.scalar(nll)
        };
        let base = run(&mut store, &seq_a);
        // the PAD tail cannot influence the loss: compare against a
        // same-content sequence with shorter storage
        let mut b = vec![BOS, 5, 6, EOS];
        b.resize(9, PAD);
        let seq_b = TokenSequence::new(b).unwrap();
        let shorter = run(&mut store, &seq_b);
        assert!((base - shorter).abs() < 1e-12);
    }

    #[test]
    fn greedy_decode_stops_and_feeds_back_its_own_tokens() {
        let mut store = ParamStore::new();
        let dec = tiny_decoder(&mut store, 12);
        // bias the projection so EOS dominates at the first step
        let mut b = init::zeros(&[12]);
        b[[EOS]] = 50.0;
        store.set_value(dec.out_proj.b, b);
        store.set_value(dec.out_proj.w, init::zeros(&[5, 12]));
        let mut s = Session::inference(&mut store);
        let h = s.leaf(init::zeros(&[2, 6]));
        let out = dec.decode_greedy(&mut s, h);
        assert_eq!(out.len(), 2);
        for d in &out {
            assert_eq!(d.sequence.content_len(), 0, "caption should be empty");
            assert_eq!(d.sequence.len(), 16);
            assert_eq!(d.token_logprobs.len(), 1);
            assert_eq!(d.token_logprobs[0].0, EOS);
        }
    }

    #[test]
    fn greedy_decode_never_exceeds_max_len() {
        let mut store = ParamStore::new();
        let dec = tiny_decoder(&mut store, 12);
        // bias a non-EOS token so decoding runs to the cap
        let mut b = init::zeros(&[12]);
        b[[7]] = 50.0;
        store.set_value(dec.out_proj.b, b);
        store.set_value(dec.out_proj.w, init::zeros(&[5, 12]));
        let mut s = Session::inference(&mut store);
        let h = s.leaf(init::zeros(&[1, 6]));
        let out = dec.decode_greedy(&mut s, h);
        assert_eq!(out[0].sequence.content_len(), 14);
        assert_eq!(out[0].sequence.len(), 16);
    }

    #[test]
    fn greedy_decode_deterministic() {
        let mut store = ParamStore::new();
        let dec = tiny_decoder(&mut store, 12);
        let h = init::uniform(&mut seeds::rng(7, &[7]), &[1, 6], 1.0);
        let run = |store: &mut ParamStore| {
            let mut s = Session::inference(store);
            let hv = s.leaf(h.clone());
            dec.decode_greedy(&mut s, hv)[0].sequence.clone()
        };
        assert_eq!(run(&mut store), run(&mut store));
    }

    #[test]
    fn token_logprob_positions() {
        let mut store = ParamStore::new();
        let dec = tiny_decoder(&mut store, 12);
        let mut v = vec![BOS, 5, 6, EOS];
        v.resize(16, PAD);
        let seq = TokenSequence::new(v).unwrap();
        let h = init::uniform(&mut seeds::rng(8, &[8]), &[1, 6], 1.0);
        let mut s = Session::eval(&mut store);
        let hv = s.leaf(h);
        assert!(dec.token_logprob(&mut s, hv, &seq, 1).is_ok());
        assert!(dec.token_logprob(&mut s, hv, &seq, 0).is_err());
        assert!(dec.token_logprob(&mut s, hv, &seq, 7).is_err(), "PAD position must error");
    }
}
