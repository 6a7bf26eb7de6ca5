use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dynamics::ObservationSeries;
use crate::error::{OmecError, Result};

/// Delay-coordinate vectors `z_k = [y_k, y_{k-1}, ..., y_{k-d}]` for every
/// step `k` in `d..T`, searchable by exact Euclidean nearest neighbors.
#[derive(Debug, Clone)]
pub struct DelayIndex {
    delays: usize,
    frame_dim: usize,
    total_steps: usize,
    /// Row-major, one delay vector per indexed step.
    vectors: Vec<f64>,
}

/// Result of a neighbor query, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl DelayIndex {
    pub fn build(obs: &ObservationSeries, delays: usize) -> Result<Self> {
        Self::from_matrix(&obs.observations, delays)
    }

    /// Builds the index from a `T x m` record, one row per time step.
    pub fn from_matrix(data: &DMatrix<f64>, delays: usize) -> Result<Self> {
        let t = data.nrows();
        if t <= delays {
            return Err(OmecError::InsufficientData(format!(
                "{t} observations cannot support {delays} delays"
            )));
        }
        let m = data.ncols();
        let dim = m * (delays + 1);
        let mut vectors = Vec::with_capacity((t - delays) * dim);
        for k in delays..t {
            for lag in 0..=delays {
                for j in 0..m {
                    vectors.push(data[(k - lag, j)]);
                }
            }
        }
        Ok(DelayIndex {
            delays,
            frame_dim: m,
            total_steps: t,
            vectors,
        })
    }

    pub fn delays(&self) -> usize {
        self.delays
    }

    /// Dimension of one delay vector, `m (d + 1)`.
    pub fn dim(&self) -> usize {
        self.frame_dim * (self.delays + 1)
    }

    /// Number of indexed vectors, `T - d`.
    pub fn len(&self) -> usize {
        self.total_steps - self.delays
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn valid_range(&self) -> RangeInclusive<usize> {
        self.delays..=self.total_steps - 1
    }

    /// Delay vector for time step `k`. Panics outside [`valid_range`](Self::valid_range).
    pub fn vector(&self, k: usize) -> &[f64] {
        let dim = self.dim();
        let row = k - self.delays;
        &self.vectors[row * dim..(row + 1) * dim]
    }

    /// Exact `count` nearest neighbors of `z_k` among the indexed vectors.
    ///
    /// The query point itself always comes first at distance zero; the rest
    /// are ordered by distance with ties going to the earlier time step.
    pub fn knn(&self, k: usize, count: usize) -> Result<Neighbors> {
        let mut scratch = Vec::with_capacity(self.len());
        self.knn_with(k, count, &mut scratch)
    }

    fn knn_with(&self, k: usize, count: usize, scratch: &mut Vec<(f64, usize)>) -> Result<Neighbors> {
        if !self.valid_range().contains(&k) {
            return Err(OmecError::InvalidArgument(format!(
                "step {k} outside indexed range {:?}",
                self.valid_range()
            )));
        }
        if count == 0 || count > self.len() {
            return Err(OmecError::InvalidArgument(format!(
                "asked for {count} neighbors among {} vectors",
                self.len()
            )));
        }
        let dim = self.dim();
        let query = self.vector(k);
        scratch.clear();
        for (row, z) in self.vectors.chunks_exact(dim).enumerate() {
            let step = row + self.delays;
            if step == k {
                continue;
            }
            let d2 = z.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            scratch.push((d2, step));
        }
        let rest = count - 1;
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if rest > 0 && rest < scratch.len() {
            scratch.select_nth_unstable_by(rest - 1, by_distance);
            scratch.truncate(rest);
        }
        scratch.sort_unstable_by(by_distance);
        scratch.truncate(rest);
        let mut indices = Vec::with_capacity(count);
        let mut distances = Vec::with_capacity(count);
        indices.push(k);
        distances.push(0.0);
        for &(d2, step) in scratch.iter() {
            indices.push(step);
            distances.push(d2.sqrt());
        }
        Ok(Neighbors { indices, distances })
    }

    /// Neighbor lists for every indexed step, in time order.
    pub fn knn_all(&self, count: usize) -> Result<Vec<Neighbors>> {
        self.valid_range()
            .collect::<Vec<_>>()
            .par_iter()
            .map_init(Vec::new, |scratch, &k| self.knn_with(k, count, scratch))
            .collect()
    }
}

/// One [`DelayIndex`] per ring node, each built from the scalar records of
/// the node and its two cyclic neighbors `i - 1` and `i + 1`.
#[derive(Debug, Clone)]
pub struct LocalizedDelayIndex {
    nodes: Vec<DelayIndex>,
}

impl LocalizedDelayIndex {
    pub fn build(obs: &ObservationSeries, delays: usize) -> Result<Self> {
        let data = &obs.observations;
        let k = data.ncols();
        if k < 3 {
            return Err(OmecError::InvalidArgument(format!(
                "ring localization needs at least 3 nodes, got {k}"
            )));
        }
        let t = data.nrows();
        let nodes = (0..k)
            .map(|i| {
                let cols = [(i + k - 1) % k, i, (i + 1) % k];
                let local = DMatrix::from_fn(t, 3, |r, c| data[(r, cols[c])]);
                DelayIndex::from_matrix(&local, delays)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalizedDelayIndex { nodes })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &DelayIndex {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[DelayIndex] {
        &self.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(rows: &[&[f64]]) -> DMatrix<f64> {
        let m = rows[0].len();
        DMatrix::from_row_slice(rows.len(), m, &rows.concat())
    }

    #[test]
    fn delay_vectors_are_most_recent_first() {
        let data = series(&[&[1.0, 10.0], &[2.0, 20.0], &[3.0, 30.0], &[4.0, 40.0]]);
        let idx = DelayIndex::from_matrix(&data, 2).unwrap();
        assert_eq!(idx.dim(), 6);
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.valid_range(), 2..=3);
        assert_eq!(idx.vector(3), &[4.0, 40.0, 3.0, 30.0, 2.0, 20.0]);
    }

    #[test]
    fn zero_delays_index_every_observation() {
        let data = series(&[&[1.0], &[2.0], &[3.0]]);
        let idx = DelayIndex::from_matrix(&data, 0).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.vector(0), &[1.0]);
    }

    #[test]
    fn too_few_observations() {
        let data = series(&[&[1.0], &[2.0]]);
        assert!(matches!(
            DelayIndex::from_matrix(&data, 2),
            Err(OmecError::InsufficientData(_))
        ));
    }

    #[test]
    fn line_neighbors() {
        let data = series(&[&[0.0], &[1.0], &[3.0]]);
        let idx = DelayIndex::from_matrix(&data, 0).unwrap();
        let nb = idx.knn(0, 2).unwrap();
        assert_eq!(nb.indices, vec![0, 1]);
        assert_eq!(nb.distances, vec![0.0, 1.0]);
        assert_eq!(idx.knn(2, 1).unwrap().indices, vec![2]);
        assert!(idx.knn(0, 4).is_err());
        assert!(idx.knn(5, 1).is_err());
    }

    #[test]
    fn ties_go_to_earlier_steps() {
        let data = series(&[&[-1.0], &[0.0], &[1.0], &[1.0]]);
        let idx = DelayIndex::from_matrix(&data, 0).unwrap();
        let nb = idx.knn(1, 3).unwrap();
        assert_eq!(nb.indices, vec![1, 0, 2]);
    }

    fn brute_force(points: &[Vec<f64>], k: usize, n: usize) -> Vec<usize> {
        let mut all = points
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let d = p.iter().zip(&points[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (if j == k { -1.0 } else { d }, j)
            })
            .collect::<Vec<_>>();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(n).map(|(_, j)| j).collect()
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let dim = 1 + trial;
            let points = (0..100)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())
                .collect::<Vec<_>>();
            let data = DMatrix::from_row_slice(100, dim, &points.concat());
            let idx = DelayIndex::from_matrix(&data, 0).unwrap();
            for k in 0..100 {
                assert_eq!(idx.knn(k, 10).unwrap().indices, brute_force(&points, k, 10));
            }
        }
    }

    #[test]
    fn localized_vectors_use_three_nodes() {
        let data = DMatrix::from_fn(20, 10, |r, c| (r * 10 + c) as f64);
        let obs = ObservationSeries::new(data, 0.1, DMatrix::zeros(10, 10)).unwrap();
        let loc = LocalizedDelayIndex::build(&obs, 2).unwrap();
        assert_eq!(loc.node_count(), 10);
        assert_eq!(loc.node(0).dim(), 9);
        // node 0 at step 2: columns 9, 0, 1
        assert_eq!(&loc.node(0).vector(2)[..3], &[29.0, 20.0, 21.0]);
    }

    proptest! {
        #[test]
        fn self_is_first_neighbor(seed in 0u64..1000, d in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = DMatrix::from_fn(40, 2, |_, _| rng.random_range(-5.0..5.0));
            let idx = DelayIndex::from_matrix(&data, d).unwrap();
            for k in idx.valid_range() {
                let nb = idx.knn(k, 5).unwrap();
                prop_assert_eq!(nb.indices[0], k);
                prop_assert_eq!(nb.distances[0], 0.0);
                prop_assert!(nb.distances.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
