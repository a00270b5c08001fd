//! Sparse-view reconstruction: the seeded attention-fusion backend producing
//! triplanes, and the silhouette carving backend producing SDF grids.

pub mod carve;
pub mod learned;

pub use carve::{carve, visual_hull, CarveConfig, Silhouette};
pub use learned::{
    reconstruct_learned, tokenize_views, Branch, ForwardTrace, LearnedBackend, ReconDims, ReconModel, Token,
    TokenSequence,
};

#[cfg(test)]
mod tests;
