//! Training objective and the single-scene trainer.

pub mod check;
pub mod losses;
pub mod train;

pub use check::{composed_gradcheck, toy_config, COMPOSED_STEP};
pub use losses::{
    downsample_gt, frame_loss, route, soft_dice, total_loss, total_loss_var, FrameLoss,
    LossBreakdown, LossWeights,
};
pub use train::{
    clip_loss, curve_csv, loss_and_grads, overfit_train, train, CurvePoint, Example, TrainConfig,
    TrainOutput,
};
