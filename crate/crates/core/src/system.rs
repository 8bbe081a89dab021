//! OS-facing VB lifecycle on top of the protection unit, the VB registry and
//! the memory translation layer.

use crate::address::{AddressingMode, Vbuid};
use crate::error::{LifecycleError, MtlError};
use crate::mtl::{Mtl, MtlConfig};
use crate::physmem::PhysicalMemory;
use crate::protection::{ClientId, Perms, ProtectionUnit};
use crate::registry::{Props, VbRegistry};

#[derive(Debug, Clone)]
pub struct VbiSystem {
    pub protection: ProtectionUnit,
    pub registry: VbRegistry,
    pub mtl: Mtl,
}

impl VbiSystem {
    pub fn new(mode: AddressingMode, config: MtlConfig, mem: PhysicalMemory) -> Self {
        VbiSystem {
            protection: ProtectionUnit::new(mode),
            registry: VbRegistry::new(mode),
            mtl: Mtl::new(mode, config, mem),
        }
    }

    pub fn mode(&self) -> AddressingMode {
        self.registry.mode()
    }

    pub fn request_vb(&mut self, client: ClientId, size: u64, props: Props) -> Result<(usize, Vbuid), LifecycleError> {
        self.registry.request_vb(&mut self.protection, client, size, props)
    }

    pub fn enable_vb(&mut self, vbuid: Vbuid, props: Props) -> Result<(), LifecycleError> {
        self.registry.enable_vb(vbuid, props)
    }

    pub fn attach(&mut self, client: ClientId, vbuid: Vbuid, perms: Perms) -> Result<usize, LifecycleError> {
        self.protection.attach(&mut self.registry, client, vbuid, perms)
    }

    pub fn detach(&mut self, client: ClientId, vbuid: Vbuid) -> Result<(), LifecycleError> {
        self.protection.detach(&mut self.registry, client, vbuid)
    }

    /// Frees the VB's memory and queues the scrub of its `cached_lines`
    /// cache lines. Returns the frame references dropped.
    pub fn disable_vb(&mut self, vbuid: Vbuid, cached_lines: u64) -> Result<u64, LifecycleError> {
        let entry = self.registry.entry(vbuid).ok_or(LifecycleError::NotEnabled(vbuid))?;
        if entry.ref_count > 0 {
            return Err(LifecycleError::StillReferenced(vbuid, entry.ref_count));
        }
        let freed = self.mtl.release_vb(&mut self.registry, vbuid);
        self.registry.disable_vb(vbuid, cached_lines)?;
        Ok(freed)
    }

    pub fn clone_vb(&mut self, src: Vbuid, dst: Vbuid) -> Result<(), MtlError> {
        self.mtl.clone_vb(&mut self.registry, src, dst)
    }

    /// Dirty lines of `src` must have been written back by the caller.
    pub fn promote_vb(&mut self, client: ClientId, src: Vbuid, dst: Vbuid) -> Result<usize, MtlError> {
        self.mtl.promote(&mut self.registry, &mut self.protection, client, src, dst)
    }
}
