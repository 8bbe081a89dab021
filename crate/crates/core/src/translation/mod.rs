pub mod radix;
pub mod tlb;
pub mod x86;

pub use radix::{MetaArena, PageWalkCache, RadixTable, WalkPath, depth_for};
pub use tlb::{PageSize, Tlb, TlbGeometry, TlbHierarchy, TlbLevel};
pub use x86::{X86Mmu, X86Mode, X86Translation};
