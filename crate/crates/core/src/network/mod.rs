//! Architecture descriptions, the default network, and parameter storage.

mod io;
mod model;
mod spec;

pub(crate) use io::write_atomic;
pub use io::{from_bytes, load, save, to_bytes, MAGIC, VERSION};
pub use model::{argmax_rows, param_names, param_shapes, Gradients, LayerParams, Network};
pub use spec::{micronnet_default, Activation, ArchitectureSpec, ItemShape, LayerShape, LayerSpec};
