pub mod address;
pub mod cache;
pub mod device;
pub mod error;
pub mod hotness;
pub mod lru;
pub mod mtl;
pub mod physmem;
pub mod protection;
pub mod registry;
pub mod system;
pub mod translation;

pub use address::{AddressingMode, SizeClass, VbiAddress, Vbuid};
pub use error::{LifecycleError, MtlError, OutOfMemory};
pub use mtl::{Mtl, MtlConfig, Outcome};
pub use physmem::{FrameId, PhysicalMemory, RegionKind};
pub use protection::{AccessKind, ClientId, Fault, Perms, ProtectionUnit};
pub use registry::{Props, StructureKind, VbRegistry};
pub use system::VbiSystem;
