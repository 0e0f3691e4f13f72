//! Layer stacks, presets, optimizers and parameter files.

mod checkpoint;
mod layer;
mod optim;
mod presets;
mod stack;

pub use checkpoint::{decode, encode, read_checkpoint, read_checkpoint_as, write_checkpoint, AnyTensor, CHECKPOINT_MAGIC};
pub use layer::{ActShape, AxisField, LayerSpec, PoolKind, ReceptiveField, Rect};
pub use optim::{Optimizer, OptimizerKind};
pub use presets::{build_preset, preset_specs, PRESETS, SEQ_CHANNELS, SEQ_GROUPS};
pub use stack::{grouped_softmax, BnState, LayerCost, LayerStack, Mode, Param, StackOutput, BN_EPS, BN_MOMENTUM};

#[cfg(test)]
mod tests;
