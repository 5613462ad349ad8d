//! Hypergraph transformer: attention pooling in both directions, a dense
//! prediction head, binary cross-entropy, exact gradients and training.

pub mod adam;
mod checkpoint;
mod forward;
mod params;
mod pool;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_json, load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{backward, bce_loss, forward, ForwardCache, ForwardOutput};
pub use params::{HeadParams, LayerParams, ModelConfig, ModelParams, PoolParams, PredictionHead};
pub use pool::{attention_pool, attention_pool_with_weights, pool_sets, pool_sets_backward, weight_sums, PoolCache};
pub use train::{train, write_history, HistoryRow, TrainConfig, TrainOutput};
