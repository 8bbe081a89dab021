//! Synthetic trace generators.
//!
//! A generator spec is a comma-separated `key=value` list, for example
//! `kind=skew,vbs=10,size=4M,accesses=100000,hot_frac=0.1,hot_prob=0.9`.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use vbi_core::{ClientId, Props};

use crate::trace::{TraceEvent, parse_size};

const LINE: u64 = 64;
const PAGE: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("generator spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Uniformly random VB and line.
    Uniform,
    /// `hot_prob` of the accesses go to the first `hot_frac` of the VBs.
    Skew,
    /// Line-by-line sweeps, one VB after another.
    Stream,
    /// A random cyclic permutation of lines, followed link by link.
    Chase,
    /// VB `i mod vbs` with a random line.
    RoundRobin,
    /// `accesses` reads of distinct never-written pages spread over `vbs`
    /// VBs, then `writes` writes to distinct pages of one extra VB.
    Split,
}

impl Kind {
    fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "uniform" => Kind::Uniform,
            "skew" => Kind::Skew,
            "stream" => Kind::Stream,
            "chase" => Kind::Chase,
            "roundrobin" => Kind::RoundRobin,
            "split" => Kind::Split,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Uniform => "uniform",
            Kind::Skew => "skew",
            Kind::Stream => "stream",
            Kind::Chase => "chase",
            Kind::RoundRobin => "roundrobin",
            Kind::Split => "split",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub kind: Kind,
    pub vbs: usize,
    /// Requested size of every VB in bytes.
    pub size: u64,
    /// Bytes of each VB actually touched (from offset 0).
    pub footprint: u64,
    pub accesses: u64,
    pub write_frac: f64,
    pub hot_frac: f64,
    pub hot_prob: f64,
    /// Mean non-memory instructions between accesses.
    pub icount: u64,
    /// Split only: distinct pages written.
    pub writes: u64,
    pub client: u16,
    /// Hot VBs of a skew trace are marked latency-sensitive.
    pub mark_hot: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            kind: Kind::Uniform,
            vbs: 8,
            size: 4 << 20,
            footprint: 0,
            accesses: 100_000,
            write_frac: 0.2,
            hot_frac: 0.1,
            hot_prob: 0.9,
            icount: 3,
            writes: 1000,
            client: 0,
            mark_hot: false,
        }
    }
}

impl FromStr for GenSpec {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = GenSpec::default();
        let mut seen = BTreeMap::new();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| GenError::Invalid(format!("`{pair}` is not key=value")))?;
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(GenError::Invalid(format!("duplicate key `{k}`")));
            }
            let bad = || GenError::Invalid(format!("bad value `{v}` for `{k}`"));
            let int = || v.parse::<u64>().map_err(|_| bad());
            let frac = || v.parse::<f64>().map_err(|_| bad());
            match k {
                "kind" => spec.kind = Kind::parse(v).ok_or_else(bad)?,
                "vbs" => spec.vbs = int()? as usize,
                "size" => spec.size = parse_size(v).ok_or_else(bad)?,
                "footprint" => spec.footprint = parse_size(v).ok_or_else(bad)?,
                "accesses" => spec.accesses = int()?,
                "write_frac" => spec.write_frac = frac()?,
                "hot_frac" => spec.hot_frac = frac()?,
                "hot_prob" => spec.hot_prob = frac()?,
                "icount" => spec.icount = int()?,
                "writes" => spec.writes = int()?,
                "client" => spec.client = v.parse().map_err(|_| bad())?,
                "mark_hot" => spec.mark_hot = v.parse().map_err(|_| bad())?,
                other => return Err(GenError::Invalid(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        for (name, f) in [
            ("write_frac", self.write_frac),
            ("hot_frac", self.hot_frac),
            ("hot_prob", self.hot_prob),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(GenError::Invalid(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        if self.vbs == 0 {
            return Err(GenError::Invalid("vbs must be at least 1".into()));
        }
        if self.size < LINE {
            return Err(GenError::Invalid("size must be at least one 64-byte line".into()));
        }
        if self.footprint > self.size {
            return Err(GenError::Invalid("footprint exceeds the VB size".into()));
        }
        if self.kind == Kind::Split {
            let pages = self.vbs as u64 * (self.size / PAGE);
            if self.accesses > pages || self.writes > self.size / PAGE {
                return Err(GenError::Invalid("split trace needs more pages than its VBs hold".into()));
            }
        }
        Ok(())
    }

    fn lines(&self) -> u64 {
        let fp = if self.footprint == 0 { self.size } else { self.footprint };
        (fp / LINE).max(1)
    }

    fn hot_vbs(&self) -> usize {
        ((self.vbs as f64 * self.hot_frac).ceil() as usize).clamp(1, self.vbs)
    }
}

struct Emitter {
    rng: ChaCha8Rng,
    client: ClientId,
    icount: u64,
    write_frac: f64,
    out: Vec<TraceEvent>,
}

impl Emitter {
    fn gap(&mut self) -> u64 {
        if self.icount == 0 { 0 } else { self.rng.random_range(0..=2 * self.icount) }
    }

    fn mem(&mut self, cvt_index: usize, offset: u64, write: Option<bool>) {
        let write = write.unwrap_or_else(|| self.rng.random::<f64>() < self.write_frac);
        let icount_delta = self.gap();
        self.out.push(TraceEvent::Mem {
            write,
            client: self.client,
            cvt_index,
            offset,
            icount_delta,
        });
    }

    fn word(&mut self) -> u64 {
        self.rng.random_range(0..LINE / 8) * 8
    }
}

/// Deterministic trace for (`spec`, `seed`), starting with one `REQVB` per
/// VB so CVT index `i` names the `i`-th VB.
pub fn generate(spec: &GenSpec, seed: u64) -> Result<Vec<TraceEvent>, GenError> {
    spec.validate()?;
    let mut e = Emitter {
        rng: ChaCha8Rng::seed_from_u64(seed),
        client: ClientId(spec.client),
        icount: spec.icount,
        write_frac: spec.write_frac,
        out: Vec::with_capacity(spec.accesses as usize + spec.vbs + 1),
    };
    let total_vbs = spec.vbs + (spec.kind == Kind::Split) as usize;
    let hot = spec.hot_vbs();
    for i in 0..total_vbs {
        let props = if spec.mark_hot && spec.kind == Kind::Skew && i < hot {
            Props::LATENCY_SENSITIVE
        } else {
            Props::empty()
        };
        e.out.push(TraceEvent::ReqVb {
            client: e.client,
            size: spec.size,
            props,
        });
    }
    let lines = spec.lines();
    let vbs = spec.vbs;
    match spec.kind {
        Kind::Uniform | Kind::Skew | Kind::RoundRobin => {
            for n in 0..spec.accesses {
                let vb = match spec.kind {
                    Kind::Uniform => e.rng.random_range(0..vbs),
                    Kind::RoundRobin => (n % vbs as u64) as usize,
                    _ => {
                        if hot == vbs || e.rng.random::<f64>() < spec.hot_prob {
                            e.rng.random_range(0..hot)
                        } else {
                            e.rng.random_range(hot..vbs)
                        }
                    }
                };
                let off = e.rng.random_range(0..lines) * LINE + e.word();
                e.mem(vb, off, None);
            }
        }
        Kind::Stream => {
            let mut n = 0;
            'outer: loop {
                for vb in 0..vbs {
                    for line in 0..lines {
                        if n == spec.accesses {
                            break 'outer;
                        }
                        e.mem(vb, line * LINE, None);
                        n += 1;
                    }
                }
            }
        }
        Kind::Chase => {
            // one cycle through every (vb, line) node in a random order
            let nodes = (vbs as u64 * lines).min(1 << 22);
            let mut order: Vec<u64> = (0..nodes).collect();
            order.shuffle(&mut e.rng);
            for n in 0..spec.accesses {
                let node = order[(n % nodes) as usize];
                let off = (node % lines) * LINE + e.word();
                e.mem((node / lines) as usize, off, None);
            }
        }
        Kind::Split => {
            let pages_per_vb = spec.size / PAGE;
            let mut reads: Vec<u64> = (0..spec.accesses)
                .map(|i| (i % vbs as u64) * pages_per_vb + i / vbs as u64)
                .collect();
            reads.shuffle(&mut e.rng);
            for page in reads {
                let (vb, p) = ((page / pages_per_vb) as usize, page % pages_per_vb);
                let off = p * PAGE + e.rng.random_range(0..PAGE / LINE) * LINE;
                e.mem(vb, off, Some(false));
            }
            for p in 0..spec.writes {
                let off = p * PAGE + e.rng.random_range(0..PAGE / LINE) * LINE;
                e.mem(vbs, off, Some(true));
            }
        }
    }
    Ok(e.out)
}
