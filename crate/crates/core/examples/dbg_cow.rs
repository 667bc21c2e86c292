use mixseg_core::mixing::gaussian_blur;
use mixseg_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 64 * 64;
    let field = Tensor::from_vec(&[64, 64, 1], (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
    for sigma in [16.0, 64.0] {
        let smooth = gaussian_blur(&field, sigma);
        let mn = smooth.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = smooth.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut max_dj: f64 = 0.0;
        let mut max_di: f64 = 0.0;
        for i in 0..64 {
            for j in 0..63 {
                max_dj = max_dj.max((smooth.at3(i, j + 1, 0) - smooth.at3(i, j, 0)).abs());
            }
        }
        for i in 0..63 {
            for j in 0..64 {
                max_di = max_di.max((smooth.at3(i + 1, j, 0) - smooth.at3(i, j, 0)).abs());
            }
        }
        println!("sigma {sigma:5.1}: spread {:.3e}  max|dx| {:.3e}  max|dy| {:.3e}", mx - mn, max_dj, max_di);
    }
}
