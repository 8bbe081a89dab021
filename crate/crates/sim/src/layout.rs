//! Linear address layout that lets the x86-style baselines replay traces
//! written against CVT indices.
//!
//! A shadow protection unit and VB registry replay the lifecycle records.
//! The first time a client gains a VB (request, attach or promotion) the VB
//! gets the next range of that client's address space, packed from
//! `BASE_VA` at the VB's class size. Bases are aligned to the class size,
//! so a line's cache set is the same as under its VBI address.

use std::collections::BTreeMap;

use thiserror::Error;
use vbi_core::error::LifecycleError;
use vbi_core::{
    AccessKind, AddressingMode, ClientId, Fault, MtlConfig, MtlError, PhysicalMemory, Vbuid, VbiSystem,
};

use crate::trace::TraceEvent;

pub const BASE_VA: u64 = 0x10000;
/// Top of a 4-level, 48-bit canonical lower half.
pub const VA_LIMIT: u64 = 1 << 47;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("event {index}: {source}")]
    Lifecycle { index: usize, source: LifecycleError },
    #[error("event {index}: client {client} address space exhausted")]
    Exhausted { index: usize, client: ClientId },
}

fn lifecycle_of(e: MtlError) -> LifecycleError {
    match e {
        MtlError::Lifecycle(l) => l,
        MtlError::Disabled(v) => LifecycleError::NotEnabled(v),
        MtlError::OutOfMemory(_) => unreachable!("the shadow system never backs pages"),
    }
}

/// How one `MEM` record resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolved {
    Access { vbuid: Vbuid, offset: u64, va: u64 },
    Fault(Fault),
}

#[derive(Debug, Clone, Default)]
pub struct Layout {
    /// Base address of each (client, VB) range.
    pub bases: BTreeMap<(ClientId, Vbuid), u64>,
    /// One entry per trace event; `Some` for `MEM` records.
    pub accesses: Vec<Option<Resolved>>,
}

impl Layout {
    pub fn build(events: &[TraceEvent], align: u64) -> Result<Layout, LayoutError> {
        let mut shadow = VbiSystem::new(AddressingMode::Native, MtlConfig::default(), PhysicalMemory::single(2));
        let mut next: BTreeMap<ClientId, u64> = BTreeMap::new();
        let mut layout = Layout {
            bases: BTreeMap::new(),
            accesses: Vec::with_capacity(events.len()),
        };
        let mut place = |layout: &mut Layout, index: usize, client: ClientId, vbuid: Vbuid| {
            if layout.bases.contains_key(&(client, vbuid)) {
                return Ok(());
            }
            let cursor = next.entry(client).or_insert(BASE_VA);
            let base = cursor.next_multiple_of(align.max(vbuid.size_bytes()));
            let end = base
                .checked_add(vbuid.size_bytes())
                .filter(|&e| e <= VA_LIMIT)
                .ok_or(LayoutError::Exhausted { index, client })?;
            *cursor = end;
            layout.bases.insert((client, vbuid), base);
            Ok(())
        };
        for (index, ev) in events.iter().enumerate() {
            let life = |source: LifecycleError| LayoutError::Lifecycle { index, source };
            let mut resolved = None;
            match *ev {
                TraceEvent::Mem {
                    write,
                    client,
                    cvt_index,
                    offset,
                    ..
                } => {
                    let kind = if write { AccessKind::Write } else { AccessKind::Read };
                    resolved = Some(match shadow.protection.check_and_form_address(client, cvt_index, offset, kind) {
                        Ok(f) => Resolved::Access {
                            vbuid: f.vbuid,
                            offset,
                            va: layout.bases[&(client, f.vbuid)] + offset,
                        },
                        Err(fault) => Resolved::Fault(fault),
                    });
                }
                TraceEvent::Exec { .. } => {}
                TraceEvent::ReqVb { client, size, props } => {
                    let (_, v) = shadow.request_vb(client, size, props).map_err(life)?;
                    place(&mut layout, index, client, v)?;
                }
                TraceEvent::Enable { vbuid, props } => shadow.enable_vb(vbuid, props).map_err(life)?,
                TraceEvent::Disable { vbuid } => {
                    shadow.disable_vb(vbuid, 0).map_err(life)?;
                    shadow.registry.advance_scrub(u64::MAX);
                }
                TraceEvent::Attach { client, vbuid, perms } => {
                    shadow.attach(client, vbuid, perms).map_err(life)?;
                    place(&mut layout, index, client, vbuid)?;
                }
                TraceEvent::Detach { client, vbuid } => shadow.detach(client, vbuid).map_err(life)?,
                TraceEvent::Clone { src, dst } => shadow.clone_vb(src, dst).map_err(|e| life(lifecycle_of(e)))?,
                TraceEvent::Promote { client, src, dst } => {
                    shadow.promote_vb(client, src, dst).map_err(|e| life(lifecycle_of(e)))?;
                    place(&mut layout, index, client, dst)?;
                }
            }
            layout.accesses.push(resolved);
        }
        Ok(layout)
    }

    /// Clients owning an address space, in id order.
    pub fn clients(&self) -> Vec<ClientId> {
        let mut c: Vec<ClientId> = self.bases.keys().map(|k| k.0).collect();
        c.dedup();
        c
    }
}
