use super::{GridCase, GridError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Singular values below `RANK_TOLERANCE * sigma_max` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeasurementTag {
    Injection { bus: usize },
    Flow { branch: usize, from: usize, to: usize },
}

impl fmt::Display for MeasurementTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementTag::Injection { bus } => write!(f, "inj:{bus}"),
            MeasurementTag::Flow { branch, from, to } => write!(f, "flow:{branch}:{from}-{to}"),
        }
    }
}

/// Ordered set of measurement rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementIndexSet(BTreeSet<usize>);

impl MeasurementIndexSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, checking every index against `m`.
    pub fn from_indices(indices: impl IntoIterator<Item = usize>, m: usize) -> Result<Self, GridError> {
        let mut set = BTreeSet::new();
        for index in indices {
            if index >= m {
                return Err(GridError::IndexOutOfRange { index, m });
            }
            set.insert(index);
        }
        Ok(Self(set))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn insert(&mut self, index: usize) -> bool {
        self.0.insert(index)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self(self.0.union(&other.0).copied().collect())
    }

    pub fn difference(&self, other: &Self) -> Self {
        Self(self.0.difference(&other.0).copied().collect())
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.0.iter().copied().collect()
    }

    /// Boolean mask of length `m`.
    pub fn to_mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for i in self.iter().filter(|&i| i < m) {
            mask[i] = true;
        }
        mask
    }
}

impl FromIterator<usize> for MeasurementIndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// DC Jacobian `H` (m x (n-1)): injection rows for every bus (ascending id)
/// followed by flow rows in case branch order. Column `j` is the angle of the
/// `j`-th non-reference bus.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    h: DMatrix<f64>,
    tags: Vec<MeasurementTag>,
    state_buses: Vec<usize>,
    reference_bus: usize,
}

impl ObservationMatrix {
    /// Builds `H` from a validated case. Phase shifters do not enter `H`; their
    /// constant offsets are removed from the measurements instead.
    pub fn build(case: &GridCase) -> Result<Self, GridError> {
        let n = case.n_buses();
        let reference_bus = case.slack_bus;
        let ref_idx = case.bus_index(reference_bus).ok_or(GridError::UnknownBus(reference_bus))?;
        let state_buses: Vec<usize> =
            case.buses.iter().map(|b| b.id).filter(|&id| id != reference_bus).collect();
        let col_of = |bus_idx: usize| -> Option<usize> {
            match bus_idx.cmp(&ref_idx) {
                std::cmp::Ordering::Less => Some(bus_idx),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(bus_idx - 1),
            }
        };

        let branches: Vec<_> = case.in_service_branches().collect();
        let m = n + branches.len();
        let mut h = DMatrix::zeros(m, n - 1);
        let mut tags = Vec::with_capacity(m);
        for bus in &case.buses {
            tags.push(MeasurementTag::Injection { bus: bus.id });
        }
        for (row, (k, br)) in branches.iter().enumerate() {
            let f = case.bus_index(br.from).ok_or(GridError::UnknownBus(br.from))?;
            let t = case.bus_index(br.to).ok_or(GridError::UnknownBus(br.to))?;
            let flow_row = n + row;
            tags.push(MeasurementTag::Flow { branch: *k, from: br.from, to: br.to });
            if let Some(c) = col_of(f) {
                h[(flow_row, c)] += br.b;
                h[(f, c)] += br.b;
                h[(t, c)] -= br.b;
            }
            if let Some(c) = col_of(t) {
                h[(flow_row, c)] -= br.b;
                h[(t, c)] += br.b;
                h[(f, c)] -= br.b;
            }
        }
        let obs = Self { h, tags, state_buses, reference_bus };
        let rank = obs.rank_without(&MeasurementIndexSet::new());
        if rank < n - 1 {
            return Err(GridError::Unobservable { rank, expected: n - 1 });
        }
        Ok(obs)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.h.ncols()
    }

    pub fn tags(&self) -> &[MeasurementTag] {
        &self.tags
    }

    pub fn reference_bus(&self) -> usize {
        self.reference_bus
    }

    /// Bus id of each state column.
    pub fn state_buses(&self) -> &[usize] {
        &self.state_buses
    }

    pub fn row_of(&self, tag: &MeasurementTag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn injection_row(&self, bus: usize) -> Option<usize> {
        self.row_of(&MeasurementTag::Injection { bus })
    }

    pub fn column_of(&self, bus: usize) -> Result<usize, GridError> {
        if bus == self.reference_bus {
            return Err(GridError::ReferenceBus(bus));
        }
        self.state_buses.binary_search(&bus).map_err(|_| GridError::UnknownBus(bus))
    }

    /// `delta(i) = |H(:, i)|_0`.
    pub fn bus_degree(&self, bus: usize) -> Result<usize, GridError> {
        let c = self.column_of(bus)?;
        Ok(self.h.column(c).iter().filter(|v| **v != 0.0).count())
    }

    /// Rows with a nonzero in the state column of `bus` (the contaminated set of
    /// a single-state attack on that bus).
    pub fn column_support(&self, bus: usize) -> Result<MeasurementIndexSet, GridError> {
        let c = self.column_of(bus)?;
        Ok(self.h.column(c).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(r, _)| r).collect())
    }

    /// Numerical rank of `H` after deleting the rows in `removed`.
    pub fn rank_without(&self, removed: &MeasurementIndexSet) -> usize {
        let keep: Vec<usize> = (0..self.m()).filter(|r| !removed.contains(*r)).collect();
        if keep.is_empty() {
            return 0;
        }
        numerical_rank(&self.h.select_rows(keep.iter()))
    }

    /// True when deleting row `k` leaves the system unobservable.
    pub fn is_critical(&self, k: usize) -> bool {
        let removed: MeasurementIndexSet = std::iter::once(k).collect();
        self.rank_without(&removed) < self.n_states()
    }

    /// All critical rows of the full matrix.
    pub fn critical_set(&self) -> MeasurementIndexSet {
        (0..self.m()).filter(|&k| self.is_critical(k)).collect()
    }

    /// Whether `H_r = (I - diag(d)) H` still has full column rank.
    pub fn observable_after_mask(&self, masked: &MeasurementIndexSet) -> bool {
        self.rank_without(masked) == self.n_states()
    }

    /// `H x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }

    /// CSV dump: header, then one line per row (tag, then n-1 values).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tag");
        for bus in &self.state_buses {
            out.push_str(&format!(",theta_{bus}"));
        }
        out.push('\n');
        for (r, tag) in self.tags.iter().enumerate() {
            out.push_str(&tag.to_string());
            for v in self.h.row(r).iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Rank by SVD with a relative tolerance of [`RANK_TOLERANCE`].
pub(crate) fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOLERANCE * max).count()
}
