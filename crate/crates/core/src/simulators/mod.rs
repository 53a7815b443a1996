//! Seeded generators for synthetic observational studies with known effects.

pub mod binary;
pub mod drug;
pub mod spatial;

pub use binary::{simulate_binary_confounder, BinarySimulation};
pub use drug::{simulate_drug, DrugSimConfig, DrugSimulation, DrugVariant};
pub use spatial::{simulate_spatial_gwas, GwasDataset, SpatialGwasConfig};
