//! Multi-seed experiment execution and the ablation arm matrix.
//!
//! Seeds and arms are independent runs with no shared mutable state, so they
//! execute on a small worker pool; `MIXSEG_THREADS` caps the parallelism.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::ExperimentReport;
use crate::scenes::ExperimentData;
use crate::trainer::run_experiment;

/// Worker count: `MIXSEG_THREADS` if set, else the machine's parallelism,
/// never more than the number of jobs.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("MIXSEG_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1);
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    cap.unwrap_or(hw).clamp(1, jobs.max(1))
}

/// Apply `f` to every item on a fixed-size worker pool, preserving order.
pub fn parallel_map<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<U>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= items.len() {
                    break;
                }
                let out = f(&items[idx]);
                results.lock().expect("result lock")[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

/// Run one configuration for every seed, in parallel.
pub fn run_seeds(config: &ExperimentConfig, data: &ExperimentData, arm: &str) -> Result<ExperimentReport> {
    config.validate()?;
    let net = config.to_net_config();
    let workers = worker_count(config.seeds.len());
    let runs = parallel_map(&config.seeds, workers, |&seed| {
        run_experiment(&config.to_train_config(seed), &net, data)
    });
    let series = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        arm: arm.to_string(),
        series,
        config_snapshot: config.to_text(),
    })
}

fn crop_for(base: &ExperimentConfig) -> usize {
    if base.crop_size > 0 {
        base.crop_size
    } else {
        // three quarters of the short side
        (base.height.min(base.width) * 3) / 4
    }
}

/// The ablation matrix: the default arm, the baseline, alternative masks,
/// alternative unsupervised weightings, the squared-error loss, no
/// pseudo-labelling, random crops, extra photometric augmentation, and a
/// doubled training budget (with its own baseline).
pub fn ablation_arms(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    use crate::trainer::{LossKind, MixStrategy, WeightScheme};
    let mut arms = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        arms.push((name.to_string(), c));
    };
    push("baseline", &|c| c.mix_strategy = MixStrategy::None);
    push("classmix", &|_| {});
    push("cowmix", &|c| c.mix_strategy = MixStrategy::CowMix);
    push("cutmix", &|c| c.mix_strategy = MixStrategy::CutMix);
    push("pixelwise_threshold", &|c| c.weight_scheme = WeightScheme::PixelwiseThreshold);
    push("sigmoid_rampup", &|c| c.weight_scheme = WeightScheme::SigmoidRampup);
    push("constant_weight", &|c| {
        c.weight_scheme = WeightScheme::Constant;
        c.constant_weight = 1.0;
    });
    push("squared_error", &|c| c.loss_kind = LossKind::SquaredError);
    push("no_pseudo_label", &|c| c.use_pseudo_label = false);
    push("random_crop_baseline", &|c| {
        c.mix_strategy = MixStrategy::None;
        c.crop_size = crop_for(base);
    });
    push("random_crop", &|c| c.crop_size = crop_for(base));
    push("extra_augment", &|c| c.extra_augment = true);
    push("long_baseline", &|c| {
        c.mix_strategy = MixStrategy::None;
        c.iterations = base.iterations * 2;
    });
    push("long_training", &|c| c.iterations = base.iterations * 2);
    arms
}

/// Run the whole ablation matrix; parallelism spans (arm, seed) pairs.
pub fn run_ablation(base: &ExperimentConfig, data: &ExperimentData) -> Result<Vec<ExperimentReport>> {
    let arms = ablation_arms(base);
    let jobs: Vec<(usize, u64)> = arms
        .iter()
        .enumerate()
        .flat_map(|(i, (_, c))| c.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let workers = worker_count(jobs.len());
    let nets: Vec<_> = arms.iter().map(|(_, c)| c.to_net_config()).collect();
    let runs = parallel_map(&jobs, workers, |&(arm_idx, seed)| {
        let (_, config) = &arms[arm_idx];
        run_experiment(&config.to_train_config(seed), &nets[arm_idx], data)
    });

    let mut reports: Vec<ExperimentReport> = arms
        .iter()
        .map(|(name, c)| ExperimentReport {
            arm: name.clone(),
            series: Vec::new(),
            config_snapshot: c.to_text(),
        })
        .collect();
    for ((arm_idx, _), run) in jobs.into_iter().zip(runs) {
        reports[arm_idx].series.push(run?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::generate_data;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..17).collect();
        let out = parallel_map(&items, 3, |&x| x * x);
        assert_eq!(out, items.iter().map(|&x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn worker_count_honors_env_cap() {
        std::env::set_var("MIXSEG_THREADS", "1");
        assert_eq!(worker_count(8), 1);
        std::env::remove_var("MIXSEG_THREADS");
        assert!(worker_count(8) >= 1);
        assert_eq!(worker_count(0), 1);
    }

    #[test]
    fn ablation_matrix_covers_the_method_variants() {
        let base = ExperimentConfig::default();
        let arms = ablation_arms(&base);
        let names: Vec<&str> = arms.iter().map(|(n, _)| n.as_str()).collect();
        for want in [
            "classmix",
            "cutmix",
            "cowmix",
            "pixelwise_threshold",
            "sigmoid_rampup",
            "constant_weight",
            "squared_error",
            "no_pseudo_label",
            "baseline",
        ] {
            assert!(names.contains(&want), "missing arm {want}");
        }
        let long = arms.iter().find(|(n, _)| n == "long_training").unwrap();
        assert_eq!(long.1.iterations, base.iterations * 2);
        let crop = arms.iter().find(|(n, _)| n == "random_crop").unwrap();
        assert_eq!(crop.1.crop_size, 48);
    }

    #[test]
    fn run_seeds_is_deterministic_across_calls() {
        let mut config = ExperimentConfig::default();
        config.height = 32;
        config.width = 32;
        config.classes = 3;
        config.train_scenes = 10;
        config.eval_scenes = 3;
        config.labelled_fraction = 0.5;
        config.hidden_widths = vec![4];
        config.iterations = 6;
        config.eval_interval = 3;
        config.seeds = vec![0, 1];
        let data = generate_data(&config.to_scene_config(), 10, 3, 0.5, config.data_seed).unwrap();
        let a = run_seeds(&config, &data, "test").unwrap();
        let b = run_seeds(&config, &data, "test").unwrap();
        for (sa, sb) in a.series.iter().zip(&b.series) {
            assert_eq!(sa.seed, sb.seed);
            for (pa, pb) in sa.points.iter().zip(&sb.points) {
                assert_eq!(pa.miou.to_bits(), pb.miou.to_bits());
            }
        }
    }
}
