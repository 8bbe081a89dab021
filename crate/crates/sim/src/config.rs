//! Run configuration: scenario selection plus every hardware knob, loaded
//! from TOML. Missing keys take the defaults below.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vbi_core::cache::{CacheConfig, LevelConfig};
use vbi_core::device::{DeviceGeometry, Timing};
use vbi_core::hotness::PlacementPolicy;
use vbi_core::translation::TlbGeometry;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Native,
    Native2m,
    Virtual,
    Virtual2m,
    PerfectTlb,
    Vivt,
    Vbi1,
    Vbi2,
    VbiFull,
    HetPcmDram,
    HetTlDram,
}

impl Scenario {
    pub const ALL: [Scenario; 11] = [
        Scenario::Native,
        Scenario::Native2m,
        Scenario::Virtual,
        Scenario::Virtual2m,
        Scenario::PerfectTlb,
        Scenario::Vivt,
        Scenario::Vbi1,
        Scenario::Vbi2,
        Scenario::VbiFull,
        Scenario::HetPcmDram,
        Scenario::HetTlDram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Native => "native",
            Scenario::Native2m => "native2m",
            Scenario::Virtual => "virtual",
            Scenario::Virtual2m => "virtual2m",
            Scenario::PerfectTlb => "perfect_tlb",
            Scenario::Vivt => "vivt",
            Scenario::Vbi1 => "vbi1",
            Scenario::Vbi2 => "vbi2",
            Scenario::VbiFull => "vbifull",
            Scenario::HetPcmDram => "het_pcm_dram",
            Scenario::HetTlDram => "het_tldram",
        }
    }

    pub fn is_vbi(self) -> bool {
        matches!(
            self,
            Scenario::Vbi1 | Scenario::Vbi2 | Scenario::VbiFull | Scenario::HetPcmDram | Scenario::HetTlDram
        )
    }

    pub fn is_het(self) -> bool {
        matches!(self, Scenario::HetPcmDram | Scenario::HetTlDram)
    }

    /// Baselines that map memory with 2 MB pages.
    pub fn large_pages(self) -> bool {
        matches!(self, Scenario::Native2m | Scenario::Virtual2m)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreKnobs {
    /// Cycles per non-memory instruction.
    pub cpi: f64,
    pub outstanding_misses: usize,
    pub fault_cycles: u64,
    pub swap_in_cycles: u64,
    pub cvt_miss_cycles: u64,
    pub l2_tlb_cycles: u64,
    /// Instructions excluded from the reported counters.
    pub warmup_instructions: u64,
}

impl Default for CoreKnobs {
    fn default() -> Self {
        CoreKnobs {
            cpi: 0.25,
            outstanding_misses: 8,
            fault_cycles: 2000,
            swap_in_cycles: 2000,
            cvt_miss_cycles: 8,
            l2_tlb_cycles: 7,
            warmup_instructions: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelKnobs {
    pub size_bytes: u64,
    pub ways: usize,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheKnobs {
    pub l1: LevelKnobs,
    pub l2: LevelKnobs,
    pub l3: LevelKnobs,
}

impl Default for CacheKnobs {
    fn default() -> Self {
        let d = CacheConfig::default();
        let k = |l: &LevelConfig| LevelKnobs {
            size_bytes: l.size_bytes,
            ways: l.ways,
            latency: l.latency,
        };
        CacheKnobs {
            l1: k(&d.levels[0]),
            l2: k(&d.levels[1]),
            l3: k(&d.levels[2]),
        }
    }
}

impl CacheKnobs {
    pub fn to_config(&self) -> CacheConfig {
        CacheConfig {
            levels: [self.l1, self.l2, self.l3]
                .iter()
                .map(|l| LevelConfig {
                    size_bytes: l.size_bytes,
                    ways: l.ways,
                    latency: l.latency,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlbKnobs {
    pub l1_4k_entries: usize,
    pub l1_2m_entries: usize,
    pub l2_entries: usize,
    pub l2_ways: usize,
    pub pwc_entries: usize,
    pub vb_direct_entries: usize,
}

impl Default for TlbKnobs {
    fn default() -> Self {
        let g = TlbGeometry::default();
        TlbKnobs {
            l1_4k_entries: g.l1_4k_entries,
            l1_2m_entries: g.l1_2m_entries,
            l2_entries: g.l2_entries,
            l2_ways: g.l2_ways,
            pwc_entries: 32,
            vb_direct_entries: 32,
        }
    }
}

impl TlbKnobs {
    pub fn geometry(&self) -> TlbGeometry {
        TlbGeometry {
            l1_4k_entries: self.l1_4k_entries,
            l1_2m_entries: self.l1_2m_entries,
            l2_entries: self.l2_entries,
            l2_ways: self.l2_ways,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingKnobs {
    pub t_rcd: u64,
    pub t_rp: u64,
    pub t_rrd_act: u64,
    pub t_rrd_pre: u64,
    pub t_cl: u64,
    pub t_bl: u64,
}

impl From<Timing> for TimingKnobs {
    fn from(t: Timing) -> Self {
        TimingKnobs {
            t_rcd: t.t_rcd,
            t_rp: t.t_rp,
            t_rrd_act: t.t_rrd_act,
            t_rrd_pre: t.t_rrd_pre,
            t_cl: t.t_cl,
            t_bl: t.t_bl,
        }
    }
}

impl From<TimingKnobs> for Timing {
    fn from(t: TimingKnobs) -> Self {
        Timing {
            t_rcd: t.t_rcd,
            t_rp: t.t_rp,
            t_rrd_act: t.t_rrd_act,
            t_rrd_pre: t.t_rrd_pre,
            t_cl: t.t_cl,
            t_bl: t.t_bl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceKnobs {
    pub banks: usize,
    pub row_bytes: u64,
    pub dram: TimingKnobs,
    pub pcm: TimingKnobs,
    pub tl_fast: TimingKnobs,
}

impl Default for DeviceKnobs {
    fn default() -> Self {
        let g = DeviceGeometry::default();
        DeviceKnobs {
            banks: g.banks,
            row_bytes: g.row_bytes,
            dram: Timing::DRAM.into(),
            pcm: Timing::PCM.into(),
            tl_fast: Timing::TL_FAST.into(),
        }
    }
}

impl DeviceKnobs {
    pub fn geometry(&self) -> DeviceGeometry {
        DeviceGeometry {
            banks: self.banks,
            row_bytes: self.row_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryKnobs {
    pub pool_bytes: u64,
}

impl Default for MemoryKnobs {
    fn default() -> Self {
        MemoryKnobs { pool_bytes: 2 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeteroKnobs {
    pub policy: String,
    /// Share of the pool given to DRAM in the PCM-DRAM hybrid.
    pub pcm_dram_fast_fraction: f64,
    /// Share of the pool given to the near segment in TL-DRAM.
    pub tldram_fast_fraction: f64,
    pub epoch_cycles: u64,
    pub ls_headroom_frames: u64,
}

impl Default for HeteroKnobs {
    fn default() -> Self {
        HeteroKnobs {
            policy: "aware".into(),
            pcm_dram_fast_fraction: 0.25,
            tldram_fast_fraction: 0.125,
            epoch_cycles: 10_000_000,
            ls_headroom_frames: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbiKnobs {
    pub vit_cache_entries: usize,
    pub scrub_lines_per_cycle: u64,
}

impl Default for VbiKnobs {
    fn default() -> Self {
        VbiKnobs {
            vit_cache_entries: 64,
            scrub_lines_per_cycle: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub core: CoreKnobs,
    pub cache: CacheKnobs,
    pub tlb: TlbKnobs,
    pub device: DeviceKnobs,
    pub memory: MemoryKnobs,
    pub hetero: HeteroKnobs,
    pub vbi: VbiKnobs,
}

fn frac_ok(f: f64) -> bool {
    f > 0.0 && f < 1.0
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn policy(&self) -> Result<PlacementPolicy, ConfigError> {
        PlacementPolicy::parse(&self.hetero.policy)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown placement policy `{}`", self.hetero.policy)))
    }

    pub fn pool_frames(&self) -> u64 {
        self.memory.pool_bytes >> 12
    }

    /// CPI in thousandths of a cycle.
    pub fn cpi_milli(&self) -> u64 {
        (self.core.cpi * 1000.0).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.core.cpi.is_finite() && self.core.cpi > 0.0) {
            return bad("core.cpi must be positive");
        }
        if self.core.outstanding_misses == 0 {
            return bad("core.outstanding_misses must be at least 1");
        }
        for (name, l) in [("l1", self.cache.l1), ("l2", self.cache.l2), ("l3", self.cache.l3)] {
            let sets = l.size_bytes / 64 / l.ways.max(1) as u64;
            if l.ways == 0 || sets == 0 || !sets.is_power_of_two() || sets * 64 * l.ways as u64 != l.size_bytes {
                return Err(ConfigError::Invalid(format!(
                    "cache.{name}: size must be a power-of-two number of sets of `ways` 64-byte lines"
                )));
            }
        }
        let t = self.tlb;
        if t.l1_4k_entries == 0 || t.l1_2m_entries == 0 || t.l2_ways == 0 || !t.l2_entries.is_multiple_of(t.l2_ways) {
            return bad("tlb: entry counts must be positive and l2_entries a multiple of l2_ways");
        }
        if t.vb_direct_entries == 0 {
            return bad("tlb.vb_direct_entries must be positive");
        }
        if self.device.banks == 0 || !self.device.row_bytes.is_power_of_two() || self.device.row_bytes < 64 {
            return bad("device: banks must be positive and row_bytes a power of two of at least 64");
        }
        if self.pool_frames() < 2 {
            return bad("memory.pool_bytes must hold at least two 4 KB frames");
        }
        if !frac_ok(self.hetero.pcm_dram_fast_fraction) || !frac_ok(self.hetero.tldram_fast_fraction) {
            return bad("hetero fractions must lie strictly between 0 and 1");
        }
        if self.hetero.epoch_cycles == 0 {
            return bad("hetero.epoch_cycles must be positive");
        }
        if self.vbi.vit_cache_entries == 0 {
            return bad("vbi.vit_cache_entries must be positive");
        }
        self.policy()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let d = SimConfig::default();
        assert_eq!(SimConfig::from_toml(&d.to_toml()).unwrap(), d);
        assert_eq!(SimConfig::from_toml("").unwrap(), d);
        assert_eq!(d.cpi_milli(), 250);
        assert_eq!(d.pool_frames(), 1 << 19);
    }

    #[test]
    fn partial_and_invalid() {
        let c = SimConfig::from_toml("seed = 7\n[cache.l1]\nsize_bytes = 16384\nways = 4\nlatency = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.cache.l1.ways, 4);
        assert_eq!(c.cache.l2, SimConfig::default().cache.l2);
        assert!(SimConfig::from_toml("bogus = 1").is_err());
        assert!(SimConfig::from_toml("[core]\ncpi = 0").is_err());
        assert!(SimConfig::from_toml("[hetero]\npolicy = \"random\"").is_err());
        assert!(SimConfig::from_toml("[cache.l3]\nsize_bytes = 1000\nways = 16\nlatency = 31").is_err());
    }

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("enigma".parse::<Scenario>().is_err());
    }
}
