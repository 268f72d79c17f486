use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Full-batch gradient descent settings for [`LogisticRegression`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.1, l2: 1e-4 }
    }
}

/// Multinomial logistic regression on standardised inputs.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    mean: Array1<f64>,
    scale: Array1<f64>,
    /// `(L + 1) x K`; the last row is the bias.
    weights: Array2<f64>,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

impl LogisticRegression {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, config: &LogisticConfig) -> Self {
        let (n, l) = x.dim();
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(l));
        let sd = x.var_axis(Axis(0), 0.0).mapv(f64::sqrt);
        let scale = sd.mapv(|s| if s > 1e-12 { 1.0 / s } else { 0.0 });
        let mut model = Self { mean, scale, weights: Array2::zeros((l + 1, n_classes)) };
        let xs = model.design(x);
        let mut target = Array2::<f64>::zeros((n, n_classes));
        for (i, &y) in labels.iter().enumerate() {
            target[[i, y]] = 1.0;
        }
        for _ in 0..config.epochs {
            let mut p = xs.dot(&model.weights);
            softmax_rows(&mut p);
            p -= &target;
            let mut grad = xs.t().dot(&p) / n as f64;
            let mut penalty = model.weights.clone() * config.l2;
            penalty.row_mut(l).fill(0.0);
            grad += &penalty;
            model.weights.scaled_add(-config.learning_rate, &grad);
        }
        model
    }

    fn design(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, l) = x.dim();
        let mut xs = Array2::ones((n, l + 1));
        let mut body = xs.slice_mut(ndarray::s![.., ..l]);
        body.assign(&x);
        body -= &self.mean;
        body *= &self.scale;
        xs
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        let logits = self.design(x).dot(&self.weights);
        logits.rows().into_iter().map(argmax).collect()
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let pred = self.predict(x);
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Index of the largest entry; the first one on ties.
pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
