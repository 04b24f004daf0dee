pub mod egg_train;
pub mod es_bench;
pub mod microbench;
pub mod pop_trend;
pub mod rank_decay;
pub mod rank_law;
pub mod score_plot;
pub mod tune_threshold;
