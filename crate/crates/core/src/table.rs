//! Dense row-major tables over state–action pairs and state–action–action
//! triples. Both serialize as nested JSON arrays (`[s][a]`, `[s][a][a']`).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Real table of shape `|S| x |A|`. Used for Q-functions and anything else
/// shaped like one (expected rewards, gradients, dual marginals).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn from_vec(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Shape {
                what: "state-action table",
                expected: format!("{}x{}", num_states, num_actions),
                got: format!("{} entries", values.len()),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn filled(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![value; num_states * num_actions],
        }
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::filled(num_states, num_actions, 0.0)
    }

    pub fn from_fn(num_states: usize, num_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                values.push(f(s, a));
            }
        }
        Self {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(num_states * num_actions);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::Shape {
                    what: "state-action table row",
                    expected: format!("{num_actions} entries"),
                    got: format!("{} entries at row {s}", row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.num_actions.max(1))
            .take(self.num_states)
            .map(<[f64]>::to_vec)
            .collect()
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &QTable) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> QTable {
        QTable {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|` over all entries.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        debug_assert!(self.same_shape(other));
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Per-state maximum over actions.
    pub fn row_max(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub(crate) fn check_shape(&self, num_states: usize, num_actions: usize, what: &'static str) -> Result<()> {
        if self.num_states != num_states || self.num_actions != num_actions {
            return Err(Error::Shape {
                what,
                expected: format!("{num_states}x{num_actions}"),
                got: format!("{}x{}", self.num_states, self.num_actions),
            });
        }
        Ok(())
    }
}

impl Serialize for QTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        QTable::from_nested(&rows).map_err(serde::de::Error::custom)
    }
}

/// Real table of shape `|S| x |A| x |A|`, indexed `(s, a, a')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl TripleTable {
    pub fn from_vec(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions * num_actions {
            return Err(Error::Shape {
                what: "state-action-action table",
                expected: format!("{0}x{1}x{1}", num_states, num_actions),
                got: format!("{} entries", values.len()),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn filled(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![value; num_states * num_actions * num_actions],
        }
    }

    pub fn from_fn(num_states: usize, num_actions: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(num_states * num_actions * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                for b in 0..num_actions {
                    values.push(f(s, a, b));
                }
            }
        }
        Self {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn from_nested(blocks: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = blocks.len();
        let num_actions = blocks.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(num_states * num_actions * num_actions);
        for (s, block) in blocks.iter().enumerate() {
            if block.len() != num_actions {
                return Err(Error::Shape {
                    what: "state-action-action table",
                    expected: format!("{num_actions} actions"),
                    got: format!("{} at state {s}", block.len()),
                });
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != num_actions {
                    return Err(Error::Shape {
                        what: "state-action-action table",
                        expected: format!("{num_actions} next actions"),
                        got: format!("{} at ({s},{a})", row.len()),
                    });
                }
                values.extend_from_slice(row);
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let na = self.num_actions;
        (0..self.num_states)
            .map(|s| {
                (0..na)
                    .map(|a| self.values[(s * na + a) * na..(s * na + a + 1) * na].to_vec())
                    .collect()
            })
            .collect()
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, b: usize) -> f64 {
        self.values[(s * self.num_actions + a) * self.num_actions + b]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, b: usize, v: f64) {
        let na = self.num_actions;
        self.values[(s * na + a) * na + b] = v;
    }

    /// The `a'` slice for a fixed `(s, a)`.
    #[inline]
    pub fn lane(&self, s: usize, a: usize) -> &[f64] {
        let na = self.num_actions;
        &self.values[(s * na + a) * na..(s * na + a + 1) * na]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> TripleTable {
        TripleTable {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Sum over the last index: `m(s,a) = sum_a' t(s,a,a')`.
    pub fn marginal(&self) -> QTable {
        QTable::from_fn(self.num_states, self.num_actions, |s, a| self.lane(s, a).iter().sum())
    }

    pub(crate) fn check_shape(&self, num_states: usize, num_actions: usize, what: &'static str) -> Result<()> {
        if self.num_states != num_states || self.num_actions != num_actions {
            return Err(Error::Shape {
                what,
                expected: format!("{0}x{1}x{1}", num_states, num_actions),
                got: format!("{0}x{1}x{1}", self.num_states, self.num_actions),
            });
        }
        Ok(())
    }
}

impl Serialize for TripleTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TripleTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let blocks = Vec::<Vec<Vec<f64>>>::deserialize(deserializer)?;
        TripleTable::from_nested(&blocks).map_err(serde::de::Error::custom)
    }
}
