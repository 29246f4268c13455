//! k-nearest-neighbour class-posterior estimate.

use crate::dataset::LabeledDataset;

#[derive(Debug, Clone)]
pub(crate) struct KnnModel {
    rows: Vec<f64>,
    n_features: usize,
    labels: Vec<u8>,
    ids: Vec<String>,
    k: usize,
}

impl KnnModel {
    pub(crate) fn fit(d: &LabeledDataset, k: usize) -> Self {
        let n = d.n_samples();
        let mut rows = Vec::with_capacity(n * d.n_features());
        for i in 0..n {
            rows.extend_from_slice(d.row(i));
        }
        KnnModel {
            rows,
            n_features: d.n_features(),
            labels: d.labels().to_vec(),
            ids: d.ids().to_vec(),
            k,
        }
    }

    /// Fraction of label-1 samples among the k nearest neighbours; distance
    /// ties break toward the lower sample id.
    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let n = self.labels.len();
        let mut order: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let row = &self.rows[i * self.n_features..(i + 1) * self.n_features];
                let mut dist = 0.0;
                for (a, b) in row.iter().zip(x) {
                    let diff = a - b;
                    dist += diff * diff;
                }
                (dist, i)
            })
            .collect();
        order.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        });
        let k = self.k.min(n);
        let ones: usize = order[..k].iter().map(|&(_, i)| self.labels[i] as usize).sum();
        ones as f64 / k as f64
    }
}
