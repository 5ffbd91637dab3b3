//! Sampled trajectories and envelope-check reports.

use std::io::Write;

use crate::numerics::{TimeSeries, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub solver: String,
    pub h: f64,
    pub problem: String,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub velocities: Option<Vec<Vector>>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn last_state(&self) -> &Vector {
        self.states.last().expect("trajectories hold at least one state")
    }

    /// `‖x(t) − x̄‖` along the grid.
    pub fn distance_series(&self, x_bar: &Vector) -> TimeSeries {
        self.series(|x| (x - x_bar).norm())
    }

    pub fn series(&self, f: impl Fn(&Vector) -> f64) -> TimeSeries {
        TimeSeries {
            times: self.times.clone(),
            values: self.states.iter().map(f).collect(),
        }
    }

    /// CSV with header `t,x_0,…` (and `v_0,…` when velocities are stored),
    /// followed by `extra` named columns. Values use 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W, extra: &[(&str, &[f64])]) -> Result<()> {
        for (name, col) in extra {
            if col.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    got: col.len(),
                });
            }
            if name.contains(',') {
                return Err(Error::constraint("column", format!("name {name:?} contains a comma")));
            }
        }
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        if self.velocities.is_some() {
            header.extend((0..n).map(|i| format!("v_{i}")));
        }
        header.extend(extra.iter().map(|(name, _)| name.to_string()));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.states[k].iter().map(|v| fmt_f64(*v)));
            if let Some(vel) = &self.velocities {
                row.extend(vel[k].iter().map(|v| fmt_f64(*v)));
            }
            row.extend(extra.iter().map(|(_, col)| fmt_f64(col[k])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, extra: &[(&str, &[f64])]) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, extra)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Outcome of checking an observed series against a theoretical envelope.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub satisfied: bool,
    /// `max(observed − envelope)` over the grid.
    pub max_violation: f64,
    pub envelope: TimeSeries,
    pub observed: TimeSeries,
    /// Tail decay rate of `observed`; NaN when the tail is at the noise floor.
    pub fitted_rate: f64,
    pub tolerance: f64,
}

impl BoundReport {
    pub fn new(observed: TimeSeries, envelope: TimeSeries, fitted_rate: f64, tolerance: f64) -> Self {
        let max_violation = observed
            .values
            .iter()
            .zip(&envelope.values)
            .map(|(o, e)| o - e)
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            satisfied: max_violation <= tolerance,
            max_violation,
            envelope,
            observed,
            fitted_rate,
            tolerance,
        }
    }
}
