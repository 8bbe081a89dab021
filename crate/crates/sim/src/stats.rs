//! Run statistics: named integer counters plus a few derived ratios,
//! emitted as one JSON document with sorted keys.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

pub type Counters = BTreeMap<String, u64>;

/// Columns written by `sweep` besides trace, scenario and policy.
pub const SWEEP_COLUMNS: [&str; 12] = [
    "cycles",
    "instructions",
    "mem.accesses",
    "cache.l3.misses",
    "tlb.l1_4k.misses",
    "walk.accesses",
    "device.accesses",
    "frames.allocated",
    "zero_line.reads",
    "migrations",
    "fault.total",
    "avg_access_latency",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub scenario: String,
    pub policy: Option<String>,
    pub counters: Counters,
    pub derived: BTreeMap<String, f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

impl StatsReport {
    /// Builds the report from raw counters, computing the derived ratios.
    pub fn new(scenario: &str, policy: Option<&str>, counters: Counters) -> Self {
        let g = |k: &str| counters.get(k).copied().unwrap_or(0);
        let mut derived = BTreeMap::new();
        derived.insert(
            "avg_access_latency".to_string(),
            ratio(g("data.latency_sum"), g("data.reads")),
        );
        derived.insert(
            "cvt.hit_rate".to_string(),
            ratio(g("cvt.hits"), g("cvt.hits") + g("cvt.misses")),
        );
        derived.insert("ipc".to_string(), ratio(g("instructions"), g("cycles")));
        StatsReport {
            scenario: scenario.to_string(),
            policy: policy.map(str::to_string),
            counters,
            derived,
        }
    }

    /// Counter value, zero when absent.
    pub fn get(&self, key: &str) -> u64 {
        self.counters.get(key).copied().unwrap_or(0)
    }

    pub fn derived(&self, key: &str) -> f64 {
        self.derived.get(key).copied().unwrap_or(0.0)
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in &self.counters {
            m.insert(k.clone(), Value::from(*v));
        }
        for (k, v) in &self.derived {
            m.insert(k.clone(), Value::from(*v));
        }
        m.insert("scenario".into(), Value::from(self.scenario.clone()));
        m.insert(
            "policy".into(),
            self.policy.clone().map_or(Value::Null, Value::from),
        );
        Value::Object(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("stats serialize");
        s.push('\n');
        s
    }

    /// Values for [`SWEEP_COLUMNS`].
    pub fn sweep_row(&self) -> Vec<String> {
        SWEEP_COLUMNS
            .iter()
            .map(|&k| match self.derived.get(k) {
                Some(v) => format!("{v:.4}"),
                None => self.get(k).to_string(),
            })
            .collect()
    }
}

/// `after - before` per key; counters never run backwards.
pub fn subtract(after: &Counters, before: &Counters) -> Counters {
    after
        .iter()
        .map(|(k, &v)| (k.clone(), v.saturating_sub(before.get(k).copied().unwrap_or(0))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_sorted_and_stable() {
        let mut c = Counters::new();
        c.insert("cycles".into(), 10);
        c.insert("instructions".into(), 20);
        c.insert("data.reads".into(), 2);
        c.insert("data.latency_sum".into(), 50);
        let r = StatsReport::new("native", None, c);
        let j = r.to_json();
        assert_eq!(j, r.clone().to_json());
        assert!(j.find("\"cycles\"").unwrap() < j.find("\"instructions\"").unwrap());
        assert_eq!(r.derived("avg_access_latency"), 25.0);
        assert_eq!(r.derived("ipc"), 2.0);
        assert!(j.contains("\"policy\": null"));
    }

    #[test]
    fn subtraction() {
        let a: Counters = [("x".to_string(), 5), ("y".to_string(), 1)].into();
        let b: Counters = [("x".to_string(), 2)].into();
        let d = subtract(&a, &b);
        assert_eq!(d["x"], 3);
        assert_eq!(d["y"], 1);
    }
}
