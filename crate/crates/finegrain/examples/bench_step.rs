//! Times one training step at toy scale; used to budget epochs.

use finegrain::corpus::{build_vocabulary, encode_tokens};
use finegrain::encoder::EncoderConfig;
use finegrain::model::{DecoderSpec, JointModel, ModelConfig};
use finegrain::training::train_step;
use finegrain::videoio::VideoClip;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let batch: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let f: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let hidden: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(48);

    let vocab = build_vocabulary(
        &[(0..30).map(|i| format!("w{i}")).collect::<Vec<_>>()],
        1,
    );
    let config = ModelConfig {
        encoder: EncoderConfig { channels_3d: f, channels_2d: f, blocks: 5, lstm_hidden: hidden },
        classes: 8,
        decoder: Some(DecoderSpec {
            embed_dim: 32,
            hidden: 64,
            max_len: 14,
            vocab: vocab.tokens().to_vec(),
        }),
        hierarchy: None,
        group_count: None,
        init_seed: 1,
    };
    let mut model = JointModel::new(config).unwrap();
    println!("params: {}", model.store.num_scalar_params());

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let clips: Vec<VideoClip> = (0..batch)
        .map(|_| {
            let data = ndarray::Array4::from_shape_simple_fn((48, 96, 96, 3), || rng.random_range(0.0..1.0));
            VideoClip::from_array(data).unwrap()
        })
        .collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % 8).collect();
    let toks: Vec<String> = ["moving", "w3", "from", "w5", "to", "w7"].iter().map(|s| s.to_string()).collect();
    let captions: Vec<_> = (0..batch).map(|_| encode_tokens(&toks, &vocab, 14)).collect();

    let mut adam = tapegrad::Adam::new(0.001);
    for step in 0..4 {
        let t0 = Instant::now();
        let loss = train_step(&mut model, &clips, &labels, Some(&captions), 0.5, &mut adam, 5.0).unwrap();
        println!(
            "step {step}: loss {loss:.4}  {:.2}s  ({:.0} ms/clip)",
            t0.elapsed().as_secs_f64(),
            t0.elapsed().as_secs_f64() * 1000.0 / batch as f64
        );
    }
}
