use std::sync::Arc;

use crate::error::{Error, Result};

/// Which group a unit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// `z = 0`: never exposed to the policy; observed undistorted in both periods.
    Control,
    /// `z = 1`: subject to the discontinuity in period one.
    Exposed,
}

impl Group {
    pub fn from_flag(z: i64) -> Option<Group> {
        match z {
            0 => Some(Group::Control),
            1 => Some(Group::Exposed),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Group::Control => 0,
            Group::Exposed => 1,
        }
    }
}

/// One panel record. `label` indexes the dataset's id table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub label: u32,
    pub z: Group,
    pub r0: f64,
    pub r1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Unit {
    pub fn outcome_change(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Two-period, two-group panel: the input to every estimator.
///
/// For exposed units with `r1 ≥ c` the period-one outcome is the treated
/// outcome; that is a property of the data source and is not checked here.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<Unit>,
    ids: Arc<[String]>,
}

impl PanelDataset {
    /// Builds a dataset, checking that all values are finite, both groups are
    /// present and every label resolves to an id.
    pub fn new(units: Vec<Unit>, ids: Vec<String>) -> Result<Self> {
        Self::from_parts(units, ids.into())
    }

    /// Dataset whose ids are the decimal unit indices.
    pub fn from_units(units: Vec<Unit>) -> Result<Self> {
        let ids = (0..units.len()).map(|i| i.to_string()).collect::<Vec<_>>();
        let units = units
            .into_iter()
            .enumerate()
            .map(|(i, u)| Unit { label: i as u32, ..u })
            .collect();
        Self::new(units, ids)
    }

    pub(crate) fn from_parts(units: Vec<Unit>, ids: Arc<[String]>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            if !(u.r0.is_finite() && u.r1.is_finite() && u.y0.is_finite() && u.y1.is_finite()) {
                return Err(Error::InvalidData(format!("unit {i} has a non-finite value")));
            }
            if u.label as usize >= ids.len() {
                return Err(Error::InvalidData(format!("unit {i} has an unknown label")));
            }
        }
        let data = PanelDataset { units, ids };
        if data.count(Group::Control) == 0 {
            return Err(Error::EmptySample("no z=0 units"));
        }
        if data.count(Group::Exposed) == 0 {
            return Err(Error::EmptySample("no z=1 units"));
        }
        Ok(data)
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn id(&self, unit: &Unit) -> &str {
        &self.ids[unit.label as usize]
    }

    pub(crate) fn ids(&self) -> &Arc<[String]> {
        &self.ids
    }

    pub fn group(&self, z: Group) -> impl Iterator<Item = &Unit> + '_ {
        self.units.iter().filter(move |u| u.z == z)
    }

    pub fn count(&self, z: Group) -> usize {
        self.group(z).count()
    }

    /// Returns a copy with `f` applied to every unit.
    pub fn map_units(&self, f: impl Fn(&Unit) -> Unit) -> Result<Self> {
        Self::from_parts(self.units.iter().map(f).collect(), self.ids.clone())
    }
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in values {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    (n >= 2).then(|| (m2 / (n - 1) as f64).sqrt())
}
