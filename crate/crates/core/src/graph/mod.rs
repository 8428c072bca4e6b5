//! Scene graph over objects, the layout and directed relations, with the
//! message-passing refinement network and its trainer.
//!
//! Node slots: objects `0..N`, layout at `N`. Relation `(i, j)` from source
//! `i` to destination `j` lives in column `i·(N+1) + j` of the relation
//! matrix; diagonal columns exist for dense indexing and never exchange
//! messages.

mod checkpoint;
mod features;
mod network;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use features::{assemble_features, FeatureBundle, FeatureDims, OBJECT_LAYOUT_RELATION_VALUE, RELATION_FEATURE_DIM};
pub use network::{
    decode_residuals, message_pass, GraphTensors, MessageWeights, Network, NetworkOutput, SgcnConfig,
    SgcnWeights,
};
pub use train::{evaluate_loss, refine, train_sgcn, StepRecord, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::losses::LossError;
use crate::scene::{SceneError, SceneState};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("scene graph needs at least one object")]
    NoObjects,
    #[error("{node}: {detail}")]
    Feature { node: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("training needs at least one scene")]
    NoTrainingData,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        /// Weights before the failing step.
        last_good: Box<SgcnWeights>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Slot layout of one scene's graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneGraphSpec {
    pub n_objects: usize,
}

impl SceneGraphSpec {
    pub fn node_count(&self) -> usize {
        self.n_objects + 1
    }

    pub fn layout_index(&self) -> usize {
        self.n_objects
    }

    pub fn relation_count(&self) -> usize {
        self.node_count() * self.node_count()
    }

    pub fn relation_index(&self, source: usize, dest: usize) -> usize {
        source * self.node_count() + dest
    }

    /// Directed relations between distinct nodes, in column order.
    pub fn active_relations(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.node_count();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// Directed relations between two distinct objects, in column order.
    pub fn object_relations(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_objects;
        self.active_relations().filter(move |&(i, j)| i < n && j < n)
    }
}

pub fn build_graph(scene: &SceneState) -> Result<SceneGraphSpec, GraphError> {
    if scene.objects.is_empty() {
        return Err(GraphError::NoObjects);
    }
    Ok(SceneGraphSpec {
        n_objects: scene.objects.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_counts() {
        let s = SceneGraphSpec { n_objects: 2 };
        assert_eq!(s.node_count(), 3);
        assert_eq!(s.relation_count(), 9);
        assert_eq!(s.active_relations().count(), 6);
        assert_eq!(s.object_relations().count(), 2);
        let one = SceneGraphSpec { n_objects: 1 };
        assert_eq!(one.active_relations().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert_eq!(one.object_relations().count(), 0);
    }

    #[test]
    fn relation_columns_follow_source_major_order() {
        let s = SceneGraphSpec { n_objects: 3 };
        let cols: Vec<usize> = s.active_relations().map(|(i, j)| s.relation_index(i, j)).collect();
        assert!(cols.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.relation_index(2, 3), 11);
    }
}
