//! Dual-task episodic training on the labelled source scene.

mod heads;
mod losses;
mod train;

pub use heads::Heads;
pub use losses::{loss_cl, loss_de, total_loss};
pub use train::{class_priors, draw_episode, episode_objective, meta_train_run, EpisodeLoss, LossRecord, SourceDomain, TrainConfig};
