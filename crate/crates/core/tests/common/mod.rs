#![allow(dead_code)]

pub mod criteria;
pub mod gradcheck;

use autoweight::data::{generate, DatasetSpec, Splits, SplitSizes};
use autoweight::episode::EpisodeConfig;
use autoweight::nn::ClassifierSpec;
use autoweight::search::SearchConfig;
use autoweight::strategy::StrategyConfig;

pub const NOISY_CONFIG: &str = include_str!("../../../../configs/noisy_blobs.json");
pub const IMBALANCED_CONFIG: &str = include_str!("../../../../configs/imbalanced_blobs.json");
pub const SMOKE_CONFIG: &str = include_str!("../../../../configs/smoke.json");

pub fn config_from(json: &str) -> SearchConfig {
    serde_json::from_str(json).expect("bundled config parses")
}

pub fn small_dataset(seed: u64, noise: f64) -> DatasetSpec {
    let mut d = DatasetSpec::blobs(
        4,
        SplitSizes {
            train: 40,
            val: 15,
            test: 15,
        },
        seed,
    );
    d.noise_rate = noise;
    d
}

pub fn small_data(seed: u64, noise: f64) -> Splits {
    generate(&small_dataset(seed, noise)).unwrap()
}

/// Six stages of five steps, two of them warmup.
pub fn small_episode() -> EpisodeConfig {
    EpisodeConfig {
        stages: 6,
        steps_per_stage: 5,
        batch_size: 16,
        warmup_stages: 2,
        lr_decay_stages: vec![5],
        classifier: ClassifierSpec {
            input_dim: 2,
            hidden: vec![8],
            class_count: 4,
        },
        ..EpisodeConfig::default()
    }
}

pub fn small_strategy() -> StrategyConfig {
    StrategyConfig {
        embedding_dim: 4,
        hidden: vec![16, 16, 8],
        batch_size: 8,
        epochs: 2,
        buffer_capacity: 64,
        ..StrategyConfig::default()
    }
}

pub fn small_search(workers: usize, rounds: usize) -> SearchConfig {
    SearchConfig {
        workers,
        rounds,
        seed: 5,
        dataset: small_dataset(3, 0.3),
        episode: small_episode(),
        strategy: small_strategy(),
        eval_episodes: 2,
        ..SearchConfig::desk_default()
    }
}
