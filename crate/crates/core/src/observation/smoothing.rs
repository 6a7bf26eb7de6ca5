use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::delay::{DelayIndex, LocalizedDelayIndex};
use crate::csvio;
use crate::error::{OmecError, Result};

/// Exponential kernel weights `exp(-dist / sigma)`, normalized to sum to one,
/// with the bandwidth `sigma` set to half the mean neighbor distance.
///
/// Falls back to uniform weights when `sigma` is below `1e-12`.
pub fn neighbor_weights(distances: &[f64]) -> Vec<f64> {
    let n = distances.len();
    if n == 0 {
        return Vec::new();
    }
    let sigma = 0.5 * distances.iter().sum::<f64>() / n as f64;
    if !(sigma >= 1e-12) {
        return vec![1.0 / n as f64; n];
    }
    let raw = distances.iter().map(|d| (-d / sigma).exp()).collect::<Vec<_>>();
    let total = raw.iter().sum::<f64>();
    raw.into_iter().map(|w| w / total).collect()
}

/// Neighbor lists and kernel weights for every indexed step of one
/// [`DelayIndex`]. Computed once, reused for every correction iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    first_step: usize,
    total_steps: usize,
    count: usize,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl NeighborTable {
    pub fn build(index: &DelayIndex, count: usize) -> Result<Self> {
        let lists = index.knn_all(count)?;
        let mut indices = Vec::with_capacity(lists.len() * count);
        let mut weights = Vec::with_capacity(lists.len() * count);
        for nb in lists {
            weights.extend(neighbor_weights(&nb.distances));
            indices.extend(nb.indices);
        }
        Ok(NeighborTable {
            first_step: index.delays(),
            total_steps: index.total_steps(),
            count,
            indices,
            weights,
        })
    }

    /// First step with a full delay vector; earlier steps get no correction.
    pub fn first_step(&self) -> usize {
        self.first_step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn neighbor_count(&self) -> usize {
        self.count
    }

    pub fn neighbors(&self, k: usize) -> (&[usize], &[f64]) {
        let row = k - self.first_step;
        let span = row * self.count..(row + 1) * self.count;
        (&self.indices[span.clone()], &self.weights[span])
    }

    /// Weighted neighbor average of a full-length series; zero before
    /// [`first_step`](Self::first_step).
    pub fn smooth_series(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.total_steps];
        for (k, o) in out.iter_mut().enumerate().skip(self.first_step) {
            let (idx, w) = self.neighbors(k);
            *o = idx.iter().zip(w).map(|(&j, &wj)| wj * raw[j]).sum();
        }
        out
    }

    /// `W v` where `v` and the result live on the indexed steps only.
    pub(crate) fn apply_indexed(&self, v: &[f64], out: &mut [f64]) {
        for (row, o) in out.iter_mut().enumerate() {
            let (idx, w) = self.neighbors(row + self.first_step);
            *o = idx.iter().zip(w).map(|(&j, &wj)| wj * v[j - self.first_step]).sum();
        }
    }

    /// `W^T v` on the indexed steps.
    pub(crate) fn apply_transpose_indexed(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, &vr) in v.iter().enumerate() {
            let (idx, w) = self.neighbors(row + self.first_step);
            for (&j, &wj) in idx.iter().zip(w) {
                out[j - self.first_step] += wj * vr;
            }
        }
    }
}

/// Locally constant kernel average of the raw residuals: every row `k` past
/// the delay window becomes the weighted mean of its neighbors' rows.
pub fn smooth_residuals(table: &NeighborTable, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if raw.nrows() != table.total_steps() {
        return Err(OmecError::DimensionMismatch(format!(
            "residuals have {} rows, neighbor table covers {} steps",
            raw.nrows(),
            table.total_steps()
        )));
    }
    let mut out = DMatrix::zeros(raw.nrows(), raw.ncols());
    for j in 0..raw.ncols() {
        let col = raw.column(j).iter().cloned().collect::<Vec<_>>();
        out.set_column(j, &nalgebra::DVector::from_vec(table.smooth_series(&col)));
    }
    Ok(out)
}

/// Smooths column `i` of `raw` with node `i`'s own neighbor table.
pub fn localized_smooth(tables: &[NeighborTable], raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if tables.len() != raw.ncols() {
        return Err(OmecError::DimensionMismatch(format!(
            "{} node tables for {} residual columns",
            tables.len(),
            raw.ncols()
        )));
    }
    let mut out = DMatrix::zeros(raw.nrows(), raw.ncols());
    for (j, table) in tables.iter().enumerate() {
        if raw.nrows() != table.total_steps() {
            return Err(OmecError::DimensionMismatch(format!(
                "residuals have {} rows, node {j} covers {} steps",
                raw.nrows(),
                table.total_steps()
            )));
        }
        let col = raw.column(j).iter().cloned().collect::<Vec<_>>();
        out.set_column(j, &nalgebra::DVector::from_vec(table.smooth_series(&col)));
    }
    Ok(out)
}

/// How corrections are smoothed: one neighbor table for every observation
/// component, or one table per ring node.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoother {
    Global(NeighborTable),
    Localized(Vec<NeighborTable>),
}

impl Smoother {
    pub fn global(index: &DelayIndex, count: usize) -> Result<Self> {
        Ok(Smoother::Global(NeighborTable::build(index, count)?))
    }

    pub fn localized(index: &LocalizedDelayIndex, count: usize) -> Result<Self> {
        let tables = index
            .nodes()
            .iter()
            .map(|node| NeighborTable::build(node, count))
            .collect::<Result<Vec<_>>>()?;
        Ok(Smoother::Localized(tables))
    }

    pub fn smooth(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Smoother::Global(t) => smooth_residuals(t, raw),
            Smoother::Localized(ts) => localized_smooth(ts, raw),
        }
    }

    /// Table used for observation component `j`.
    pub fn table_for(&self, j: usize) -> &NeighborTable {
        match self {
            Smoother::Global(t) => t,
            Smoother::Localized(ts) => &ts[j],
        }
    }

    pub fn tables(&self) -> Vec<&NeighborTable> {
        match self {
            Smoother::Global(t) => vec![t],
            Smoother::Localized(ts) => ts.iter().collect(),
        }
    }

    pub fn first_step(&self) -> usize {
        self.table_for(0).first_step()
    }

    pub fn total_steps(&self) -> usize {
        self.table_for(0).total_steps()
    }

    /// Writes `k, node, neighbor_1..neighbor_N` for every indexed step. The
    /// node column is always 0 for a global smoother.
    pub fn write_neighbors_csv<W: Write>(&self, w: W) -> Result<()> {
        let first = self.table_for(0);
        let mut out = csv::Writer::from_writer(w);
        let header = ["k".to_string(), "node".to_string()]
            .into_iter()
            .chain(csvio::numbered("neighbor_", first.neighbor_count()))
            .collect::<Vec<_>>();
        out.write_record(&header)?;
        for (node, table) in self.tables().into_iter().enumerate() {
            for k in table.first_step()..table.total_steps() {
                let (idx, _) = table.neighbors(k);
                let rec = [k.to_string(), node.to_string()]
                    .into_iter()
                    .chain(idx.iter().map(|j| j.to_string()));
                out.write_record(rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Raw residuals and smoothed corrections from one correction iteration.
#[derive(Debug, Clone)]
pub struct CorrectionTable {
    pub iteration: usize,
    /// Residual parameters, `T x m`; rows before the delay window carry no
    /// smoothed counterpart.
    pub raw: DMatrix<f64>,
    /// Corrections `b_k`, `T x m`; zero before the delay window.
    pub smoothed: DMatrix<f64>,
    pub smoother: Arc<Smoother>,
}

impl CorrectionTable {
    pub fn first_step(&self) -> usize {
        self.smoother.first_step()
    }

    /// `k, bhat_1..bhat_m, b_1..b_m`, one row per time step.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let m = self.raw.ncols();
        let header = std::iter::once("k".to_string())
            .chain(csvio::numbered("bhat_", m))
            .chain(csvio::numbered("b_", m))
            .collect::<Vec<_>>();
        let steps = (0..self.raw.nrows()).map(|k| k.to_string()).collect::<Vec<_>>();
        csvio::write_rows(w, &header, &steps, &[&self.raw, &self.smoothed])
    }
}
