//! Trajectories, lagged training pairs and Nystrom center sampling.

mod centers;
pub mod io;

pub use centers::{
    sample_center_indices, sample_centers, uniform_below, CenterIndices, CenterRng, NystromCenters,
};

use faer::{Mat, MatRef};

use crate::error::{Error, Result};

/// Ordered sequence of state snapshots, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    states: Mat<f64>,
    /// Physical time between consecutive snapshots.
    pub dt: Option<f64>,
    pub source: String,
}

impl TrajectoryDataset {
    pub fn new(states: Mat<f64>, dt: Option<f64>, source: impl Into<String>) -> Result<Self> {
        if states.ncols() == 0 {
            return Err(Error::input("trajectory states must have dimension at least 1"));
        }
        if states.nrows() < 2 {
            return Err(Error::input(format!(
                "trajectory needs at least 2 states, got {}",
                states.nrows()
            )));
        }
        if !crate::linalg::all_finite(states.as_ref()) {
            return Err(Error::input("trajectory contains non-finite entries"));
        }
        if let Some(dt) = dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::input(format!("time step must be positive, got {dt}")));
            }
        }
        Ok(Self { states, dt, source: source.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: Option<f64>, source: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        Self::new(Mat::from_fn(rows.len(), d, |i, j| rows[i][j]), dt, source)
    }

    pub fn states(&self) -> MatRef<'_, f64> {
        self.states.as_ref()
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, t: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| self.states[(t, j)]).collect()
    }

    /// Contiguous sub-trajectory `[start, end)`.
    pub fn segment(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::input(format!(
                "invalid segment [{start}, {end}) of a trajectory of length {}",
                self.len()
            )));
        }
        Self::new(
            self.states.subrows(start, end - start).to_owned(),
            self.dt,
            self.source.clone(),
        )
    }
}

/// Input/output pairs `(x_i, y_i)` with `y_i` the state `lag` steps after `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedPairs {
    x: Mat<f64>,
    y: Mat<f64>,
    pub lag: usize,
}

impl LaggedPairs {
    pub fn from_xy(x: Mat<f64>, y: Mat<f64>, lag: usize) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
        }
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: y.ncols() });
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::input("empty pair set"));
        }
        if lag == 0 {
            return Err(Error::input("lag must be positive"));
        }
        Ok(Self { x, y, lag })
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn y(&self) -> MatRef<'_, f64> {
        self.y.as_ref()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// The first `n` pairs.
    pub fn head(&self, n: usize) -> Result<Self> {
        self.slice(0, n)
    }

    /// Pairs `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::input(format!(
                "invalid pair range [{start}, {end}) of {} pairs",
                self.len()
            )));
        }
        Ok(Self {
            x: self.x.subrows(start, end - start).to_owned(),
            y: self.y.subrows(start, end - start).to_owned(),
            lag: self.lag,
        })
    }
}

/// Builds `(state_t, state_{t+lag})` pairs from one trajectory, in time order.
pub fn build_pairs(traj: &TrajectoryDataset, lag: usize) -> Result<LaggedPairs> {
    build_pairs_multi(std::slice::from_ref(traj), lag)
}

/// Concatenates the pairs of several trajectories. Pairs never straddle a
/// trajectory boundary.
pub fn build_pairs_multi(trajs: &[TrajectoryDataset], lag: usize) -> Result<LaggedPairs> {
    if lag == 0 {
        return Err(Error::input("lag must be positive"));
    }
    let Some(first) = trajs.first() else {
        return Err(Error::input("no trajectories given"));
    };
    let d = first.dim();
    let mut n = 0;
    for t in trajs {
        if t.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: t.dim() });
        }
        if lag >= t.len() {
            return Err(Error::input(format!(
                "lag {lag} must be smaller than the trajectory length {}",
                t.len()
            )));
        }
        n += t.len() - lag;
    }
    let mut x = Mat::<f64>::zeros(n, d);
    let mut y = Mat::<f64>::zeros(n, d);
    let mut row = 0;
    for t in trajs {
        let s = t.states();
        for i in 0..t.len() - lag {
            for j in 0..d {
                x[(row, j)] = s[(i, j)];
                y[(row, j)] = s[(i + lag, j)];
            }
            row += 1;
        }
    }
    LaggedPairs::from_xy(x, y, lag)
}
