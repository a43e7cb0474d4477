//! Group-equivariant convolutions with equivariant channel and spatial
//! attention on the roto-translation groups `Z^2 ⋊ H`, `H ∈ {C1, C2, C4, D4}`.

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod gconv;
pub mod group;
pub mod io;
pub mod nn;
pub mod ops;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
pub use gconv::{FeatureMapG, GConvLayer, IntermediateResponses};
pub use group::{FiniteGroup, GroupName};
pub use tensor::{DType, Element, Tensor};
