//! Geodesic ray tracing inside the eight Thurston geometries and their
//! compact quotients.

pub mod bench;
pub mod bundled;
pub mod config;
pub mod error;
pub mod geometry;
pub mod quotient;
pub mod render;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{GeodesicWalker, GeometryKind, IntegratorSettings, Representation};
pub use tensor::Real;

pub type Vec3 = tensor::Vec3<f64>;
pub type Vec4 = tensor::Vec4<f64>;
pub type Mat4 = tensor::Mat4<f64>;
pub type Geometry = geometry::GeometryModel<f64>;
pub type GeodesicState = geometry::GeodesicState<f64>;
