//! Reverse-mode autodiff, parameter storage, small MLPs, and Adam.

pub mod adam;
pub mod encoding;
pub mod mlp;
pub mod params;
pub mod shape;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{Activation, Mlp, MlpArch, MlpInit};
pub use params::{ParamEntry, ParamId, ParamSet};
pub use shape::Shape;
pub use tape::{ElemOp, NodeId, Tape, Var};
