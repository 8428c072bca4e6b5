//! Differentiable refinement of indoor scenes built from local implicit
//! shapes.

pub mod fit;
pub mod gradcheck;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod ldif;
pub mod losses;
pub mod mesher;
pub mod metrics;
pub mod optim;
pub mod scene;
pub mod tensor;
