use std::collections::BTreeMap;
use std::fmt;

/// Direction of a counted product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pass {
    Forward,
    Backward,
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pass::Forward => "forward",
            Pass::Backward => "backward",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CounterKey {
    pub phase: String,
    pub layer: String,
    pub pass: Pass,
}

/// Multiplication counts accumulated while a tape executes, keyed by the
/// execution phase, the layer scope of the node and the pass direction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    entries: BTreeMap<CounterKey, u64>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, phase: &str, layer: &str, pass: Pass, mults: u64) {
        let key = CounterKey {
            phase: phase.to_string(),
            layer: layer.to_string(),
            pass,
        };
        *self.entries.entry(key).or_insert(0) += mults;
    }

    pub fn merge(&mut self, other: &OpCounter) {
        for (k, v) in &other.entries {
            *self.entries.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&CounterKey, u64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn phase_total(&self, phase: &str) -> u64 {
        self.entries
            .iter()
            .filter(|(k, _)| k.phase == phase)
            .map(|(_, v)| v)
            .sum()
    }

    /// Distinct layer scopes that were charged during `phase`.
    pub fn layers_in_phase(&self, phase: &str) -> Vec<String> {
        let mut layers: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.phase == phase)
            .map(|k| k.layer.clone())
            .collect();
        layers.dedup();
        layers
    }

    /// Total charged to layers whose scope starts with `prefix`.
    pub fn scope_total(&self, prefix: &str) -> u64 {
        self.entries
            .iter()
            .filter(|(k, _)| k.layer.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
