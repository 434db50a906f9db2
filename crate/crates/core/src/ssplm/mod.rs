//! Pseudo-labelling from prototype similarity and test-time adaptation of
//! the adapter and detection head on the unlabelled target scene.

mod augment;
mod losses;
mod pseudo;
mod tta;

pub use augment::{apply_transform, augment, draw_transform, AugmentConfig, Transform};
pub use losses::{loss_self, loss_wbce, wbce_weights};
pub use pseudo::{select_pseudo_labels, PseudoLabelSets};
pub use tta::{
    FROZEN_DURING_TTA,
    detection_map, min_max_normalize, similarity_map, tta_adapt, HeadInit, TtaConfig, TtaOutcome, TtaRecord,
};
