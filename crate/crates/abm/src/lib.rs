//! Agent-based simulators: an off-lattice biphasic tumour growth model and
//! a hexagonal-lattice cell invasion model.

pub mod bvcbm;
pub mod delaunay;
pub mod invasion;
