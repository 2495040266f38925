//! Coarse component timing for the toy-scale forward/backward.

use finegrain::encoder::{Encoder, EncoderConfig};
use finegrain::videoio::VideoClip;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::time::Instant;
use tapegrad::{ParamStore, Session};

fn main() {
    let batch: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let f: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let clips: Vec<VideoClip> = (0..batch)
        .map(|_| {
            let data = ndarray::Array4::from_shape_simple_fn((48, 96, 96, 3), || rng.random_range(0.0..1.0));
            VideoClip::from_array(data).unwrap()
        })
        .collect();

    for (name, f3, f2) in [("3d-only", f, 0), ("2d-only", 0, f), ("both", f, f)] {
        let cfg = EncoderConfig { channels_3d: f3, channels_2d: f2, blocks: 5, lstm_hidden: 48 };
        let mut store = ParamStore::new();
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let enc = Encoder::new(&mut store, "enc", &mut r, cfg);

        let t0 = Instant::now();
        let batch_arr = Encoder::batch_cthw(&clips).unwrap();
        let t_batch = t0.elapsed();

        let t0 = Instant::now();
        let mut s = Session::train(&mut store);
        let out = enc.encode_batch(&mut s, &batch_arr).unwrap();
        let t_fwd = t0.elapsed();

        let t0 = Instant::now();
        let loss = s.tape.mean_all(out.h);
        s.backward(loss);
        let t_bwd = t0.elapsed();
        drop(s);
        println!(
            "{name:8} batch {:.2}s  fwd {:.2}s  bwd {:.2}s",
            t_batch.as_secs_f64(),
            t_fwd.as_secs_f64(),
            t_bwd.as_secs_f64()
        );
    }
}
