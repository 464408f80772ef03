//! Seeded synthetic data: class-conditional embedding bags on an ordered
//! melanocytic continuum, reviewer discordance, and synthetic slide images.

mod bags;
mod reviews;
mod slides;

pub use bags::{
    gen_dataset, gen_specimen, split_counts, LabShift, PrototypeSet, SynthParams,
};
pub use reviews::{
    apply_consensus_filter, review_bags, simulate_reviews, ConsensusSets, ReviewedBag,
    ReviewerKernel,
};
pub use slides::{gen_synthetic_slide, SlideOptions, SyntheticSlide, TissueShape, INK_COLORS};
