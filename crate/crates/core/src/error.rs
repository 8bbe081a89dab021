use thiserror::Error;

use crate::address::{AddressError, SizeClass, Vbuid};
use crate::protection::ClientId;

/// Violations of the VB lifecycle rules (enable/attach/detach/disable,
/// clone and promote preconditions).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("VB {0} is not enabled")]
    NotEnabled(Vbuid),
    #[error("VB {0} is already enabled")]
    AlreadyEnabled(Vbuid),
    #[error("VB {0} is still referenced by {1} client(s)")]
    StillReferenced(Vbuid, u32),
    #[error("VB {0} is waiting for its cache lines to be scrubbed")]
    ScrubPending(Vbuid),
    #[error("client {client} has no valid CVT entry for VB {vbuid}")]
    NotAttached { client: ClientId, vbuid: Vbuid },
    #[error("client {client} already holds VB {vbuid}")]
    AlreadyAttached { client: ClientId, vbuid: Vbuid },
    #[error("client {0} CVT is full")]
    CvtFull(ClientId),
    #[error("size class mismatch: {0} vs {1}")]
    ClassMismatch(SizeClass, SizeClass),
    #[error("promotion target class {target} is not larger than {from}")]
    NotLarger { from: SizeClass, target: SizeClass },
    #[error("VB {0} already has physical memory")]
    NotEmpty(Vbuid),
    #[error("size class {0} has no free VB")]
    ClassExhausted(SizeClass),
    #[error("VB {0} is outside the VM partition of this system")]
    WrongPartition(Vbuid),
    #[error(transparent)]
    Address(#[from] AddressError),
}

/// Physical memory could not satisfy a request even after every allocation
/// priority was tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("out of physical memory")]
pub struct OutOfMemory;

/// Errors raised by the memory translation layer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MtlError {
    #[error("translation requested for disabled VB {0}")]
    Disabled(Vbuid),
    #[error(transparent)]
    OutOfMemory(#[from] OutOfMemory),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}
