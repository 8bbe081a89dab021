//! VBI address codec.
//!
//! A VBI address is a plain 64-bit value laid out (MSB first) as
//!
//! ```text
//!  native:  | size_id:3 | vbid:(61 - offset_bits)     | offset:offset_bits |
//!  vm mode: | size_id:3 | vm_id:5 | vbid:(56 - off)   | offset:offset_bits |
//! ```
//!
//! There are eight size classes, 4 KB through 128 TB, each 32x the previous
//! one, with `size_id` ascending by size (`100` is the 4 GB class).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const SIZE_CLASS_COUNT: usize = 8;
pub const SIZE_ID_BITS: u32 = 3;
pub const VM_ID_BITS: u32 = 5;
pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_BYTES: u64 = 1 << PAGE_SHIFT;
const CLASS_STEP_BITS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("requested size {0} exceeds the largest size class (128 TB)")]
    Capacity(u64),
    #[error("size id {0} is out of range 0..8")]
    InvalidSizeId(u8),
    #[error("offset {offset:#x} does not fit in a {class} block")]
    OffsetOverflow { offset: u64, class: SizeClass },
    #[error("vbid {vbid:#x} does not fit in {bits} bits")]
    VbidOverflow { vbid: u64, bits: u32 },
    #[error("vm id {0} does not fit in 5 bits")]
    VmIdOverflow(u8),
    #[error("vm id {vm_id:?} is not valid in {mode:?} mode")]
    ModeMismatch { vm_id: Option<u8>, mode: AddressingMode },
    #[error("malformed VB id `{0}`")]
    Malformed(String),
}

/// One of the eight VB size classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SizeClass(u8);

impl SizeClass {
    pub const ALL: [SizeClass; SIZE_CLASS_COUNT] = [
        SizeClass(0),
        SizeClass(1),
        SizeClass(2),
        SizeClass(3),
        SizeClass(4),
        SizeClass(5),
        SizeClass(6),
        SizeClass(7),
    ];
    pub const KB4: SizeClass = SizeClass(0);
    pub const KB128: SizeClass = SizeClass(1);
    pub const MB4: SizeClass = SizeClass(2);
    pub const MB128: SizeClass = SizeClass(3);
    pub const GB4: SizeClass = SizeClass(4);
    pub const GB128: SizeClass = SizeClass(5);
    pub const TB4: SizeClass = SizeClass(6);
    pub const TB128: SizeClass = SizeClass(7);

    pub fn new(size_id: u8) -> Result<Self, AddressError> {
        if (size_id as usize) < SIZE_CLASS_COUNT {
            Ok(SizeClass(size_id))
        } else {
            Err(AddressError::InvalidSizeId(size_id))
        }
    }

    pub const fn id(self) -> u8 {
        self.0
    }

    pub const fn offset_bits(self) -> u32 {
        PAGE_SHIFT + CLASS_STEP_BITS * self.0 as u32
    }

    pub const fn size_bytes(self) -> u64 {
        1 << self.offset_bits()
    }

    /// Number of 4 KB pages covered by one VB of this class.
    pub const fn pages(self) -> u64 {
        1 << (self.offset_bits() - PAGE_SHIFT)
    }

    pub const fn vbid_bits(self, mode: AddressingMode) -> u32 {
        64 - SIZE_ID_BITS - mode.vm_id_bits() - self.offset_bits()
    }

    pub fn max_vbid(self, mode: AddressingMode) -> u64 {
        (1u64 << self.vbid_bits(mode)) - 1
    }

    pub fn larger(self) -> Option<SizeClass> {
        (self.0 < 7).then(|| SizeClass(self.0 + 1))
    }

    /// Smallest class whose size is at least `requested` bytes.
    pub fn for_request(requested: u64) -> Result<SizeClass, AddressError> {
        class_for_request(requested)
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [&str; 8] = [
            "4KB", "128KB", "4MB", "128MB", "4GB", "128GB", "4TB", "128TB",
        ];
        f.write_str(NAMES[self.0 as usize])
    }
}

pub fn class_for_request(requested: u64) -> Result<SizeClass, AddressError> {
    SizeClass::ALL
        .into_iter()
        .find(|c| c.size_bytes() >= requested.max(1))
        .ok_or(AddressError::Capacity(requested))
}

/// Whether the VM ID field is carved out of the VBID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AddressingMode {
    #[default]
    Native,
    Vm,
}

impl AddressingMode {
    pub const fn vm_id_bits(self) -> u32 {
        match self {
            AddressingMode::Native => 0,
            AddressingMode::Vm => VM_ID_BITS,
        }
    }
}

/// System-wide VB identity: size class, VM ID (0 outside VM mode) and VBID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vbuid {
    pub class: SizeClass,
    pub vm_id: u8,
    pub vbid: u64,
}

impl Vbuid {
    pub const fn new(class: SizeClass, vbid: u64) -> Self {
        Vbuid {
            class,
            vm_id: 0,
            vbid,
        }
    }

    pub const fn with_vm(class: SizeClass, vm_id: u8, vbid: u64) -> Self {
        Vbuid { class, vm_id, vbid }
    }

    /// Dense 64-bit key, unique across classes and VMs. Used as a tag in
    /// lookup structures.
    pub const fn key(self) -> u64 {
        ((self.class.0 as u64) << 61) | ((self.vm_id as u64) << 56) | self.vbid
    }

    pub fn from_key(key: u64) -> Self {
        Vbuid {
            class: SizeClass((key >> 61) as u8),
            vm_id: ((key >> 56) & 0x1f) as u8,
            vbid: key & ((1 << 56) - 1),
        }
    }

    pub fn address(self, offset: u64, mode: AddressingMode) -> Result<VbiAddress, AddressError> {
        let vm = match mode {
            AddressingMode::Native if self.vm_id != 0 => {
                return Err(AddressError::ModeMismatch {
                    vm_id: Some(self.vm_id),
                    mode,
                });
            }
            AddressingMode::Native => None,
            AddressingMode::Vm => Some(self.vm_id),
        };
        encode(self.class, vm, self.vbid, offset, mode)
    }

    pub fn size_bytes(self) -> u64 {
        self.class.size_bytes()
    }
}

impl fmt::Display for Vbuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.vm_id == 0 {
            write!(f, "{}:{}", self.class.0, self.vbid)
        } else {
            write!(f, "{}:{}:{}", self.class.0, self.vm_id, self.vbid)
        }
    }
}

impl FromStr for Vbuid {
    type Err = AddressError;

    /// `size_id:vbid` or `size_id:vm_id:vbid`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddressError::Malformed(s.to_owned());
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<u64, AddressError> { parse_u64(p).ok_or_else(bad) };
        let (class, vm_id, vbid) = match parts.as_slice() {
            [c, v] => (num(c)?, 0, num(v)?),
            [c, m, v] => (num(c)?, num(m)?, num(v)?),
            _ => return Err(bad()),
        };
        let class = SizeClass::new(u8::try_from(class).map_err(|_| bad())?)?;
        let vm_id = u8::try_from(vm_id).map_err(|_| bad())?;
        if vm_id >= 1 << VM_ID_BITS {
            return Err(AddressError::VmIdOverflow(vm_id));
        }
        Ok(Vbuid { class, vm_id, vbid })
    }
}

/// Decimal or `0x`-prefixed hexadecimal.
pub fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VbiAddress(pub u64);

impl VbiAddress {
    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn class(self) -> SizeClass {
        SizeClass((self.0 >> (64 - SIZE_ID_BITS)) as u8)
    }

    pub fn decode(self, mode: AddressingMode) -> Decomposed {
        decode(self, mode)
    }

    pub fn vbuid(self, mode: AddressingMode) -> Vbuid {
        let d = decode(self, mode);
        Vbuid {
            class: d.class,
            vm_id: d.vm_id.unwrap_or(0),
            vbid: d.vbid,
        }
    }

    pub fn offset(self) -> u64 {
        self.0 & (self.class().size_bytes() - 1)
    }
}

impl fmt::Display for VbiAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

/// Field-wise view of a VBI address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposed {
    pub class: SizeClass,
    pub vm_id: Option<u8>,
    pub vbid: u64,
    pub offset: u64,
}

pub fn encode(
    class: SizeClass,
    vm_id: Option<u8>,
    vbid: u64,
    offset: u64,
    mode: AddressingMode,
) -> Result<VbiAddress, AddressError> {
    let offset_bits = class.offset_bits();
    if offset >= class.size_bytes() {
        return Err(AddressError::OffsetOverflow { offset, class });
    }
    let vbid_bits = class.vbid_bits(mode);
    if vbid >> vbid_bits != 0 {
        return Err(AddressError::VbidOverflow {
            vbid,
            bits: vbid_bits,
        });
    }
    let mut raw = (class.0 as u64) << (64 - SIZE_ID_BITS);
    match (mode, vm_id) {
        (AddressingMode::Native, None) => {}
        (AddressingMode::Vm, Some(vm)) => {
            if vm as u32 >= 1 << VM_ID_BITS {
                return Err(AddressError::VmIdOverflow(vm));
            }
            raw |= (vm as u64) << (64 - SIZE_ID_BITS - VM_ID_BITS);
        }
        (mode, vm_id) => return Err(AddressError::ModeMismatch { vm_id, mode }),
    }
    raw |= vbid << offset_bits;
    raw |= offset;
    Ok(VbiAddress(raw))
}

pub fn decode(addr: VbiAddress, mode: AddressingMode) -> Decomposed {
    let class = addr.class();
    let offset_bits = class.offset_bits();
    let vbid_bits = class.vbid_bits(mode);
    let vm_id = match mode {
        AddressingMode::Native => None,
        AddressingMode::Vm => Some(((addr.0 >> (64 - SIZE_ID_BITS - VM_ID_BITS)) & 0x1f) as u8),
    };
    Decomposed {
        class,
        vm_id,
        vbid: (addr.0 >> offset_bits) & ((1u64 << vbid_bits) - 1),
        offset: addr.0 & ((1u64 << offset_bits) - 1),
    }
}
