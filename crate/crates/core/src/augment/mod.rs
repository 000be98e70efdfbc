//! Input transformations for both branches and the maps that relate
//! augmented time to target time.

mod align;
mod masking;
mod specaug;
mod warp;
mod wsola;

pub use align::{align_index, alignment_map, AlignmentMap, Tempo};
pub use masking::{apply_masks, sample_masks, MaskPlan};
pub use specaug::{spec_augment, SpecAugmentConfig};
pub use warp::{apply_warp, interpolate_frame, sample_warp, tempo_features, WarpFunction};
pub use wsola::{wsola_stretch, UniformTempoConfig};
