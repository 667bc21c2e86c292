//! Rough throughput probe for the forward/backward pipeline at default scale.
use mixseg_core::nn::*;
use mixseg_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let config = NetworkConfig::default_for(3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(&mut rng, &config).unwrap();
    let image = Tensor::from_vec(&[64, 64, 3], (0..64 * 64 * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();

    // warm up
    let (_, _logits, _) = forward_cached(&params, &config, &image).unwrap();

    let n = 50;
    let t0 = Instant::now();
    for _ in 0..n {
        let (_l, _p) = forward(&params, &config, &image).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / n as f64;

    let t0 = Instant::now();
    let mut caches = Vec::new();
    for _ in 0..n {
        let (c, l, _p) = forward_cached(&params, &config, &image).unwrap();
        caches.push((c, l));
    }
    let fwd_cached = t0.elapsed().as_secs_f64() / n as f64;

    let up = Tensor::full(&[64, 64, 6], 0.01);
    let t0 = Instant::now();
    for (c, _l) in &caches {
        let _g = backward(&params, &config, c, &up).unwrap();
    }
    let bwd = t0.elapsed().as_secs_f64() / n as f64;

    let iter_cost = 4.0 * fwd + 4.0 * fwd_cached + 4.0 * bwd;
    println!("forward:        {:8.3} ms  (~{:.1} GFLOP/s)", fwd * 1e3, 48.4e-3 / fwd);
    println!("forward cached: {:8.3} ms", fwd_cached * 1e3);
    println!("backward:       {:8.3} ms  (~{:.1} GFLOP/s)", bwd * 1e3, 93.0e-3 / bwd);
    println!("est. train iteration (4 teacher fwd + 4 student fwd+bwd): {:.1} ms", iter_cost * 1e3);
    println!("est. 4000-iter run: {:.1} s", iter_cost * 4000.0);
}
