//! Server-side round machinery: weighted averaging, change scoring, block
//! grouping and selection, and the targeted application of an aggregate.

mod aggregate;
mod plan;
mod schedule;
mod score;

pub use aggregate::{aggregate, client_weights};
pub use plan::{apply_update, blocks_to_select, plan_update, Strategy, UpdatePlan};
pub use schedule::{advance_portion, PortionScheduleState, PLATEAU_ROUNDS, PORTION_LEVELS};
pub use score::{
    block_scores, group_blocks, layer_score, layer_scores, select_blocks, structure, BlockGroup,
    BlockScore, LayerScore, TensorMeta,
};
