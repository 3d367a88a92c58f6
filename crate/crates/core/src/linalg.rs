//! Minimal dense helpers. Matrices are row-major `rows x cols` slices.

/// `W x + b` for a row-major `rows x cols` matrix.
pub fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    w.chunks_exact(cols)
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bias)
        .collect()
}

/// `Wᵀ y` for a row-major matrix with `y.len()` rows.
pub fn transpose_matvec(w: &[f64], y: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, yi) in w.chunks_exact(cols).zip(y) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
    out
}

/// Accumulates the outer product `y xᵀ` into a row-major gradient buffer.
pub fn add_outer(grad: &mut [f64], y: &[f64], x: &[f64]) {
    for (row, yi) in grad.chunks_exact_mut(x.len()).zip(y) {
        if *yi == 0.0 {
            continue;
        }
        for (g, xv) in row.iter_mut().zip(x) {
            *g += yi * xv;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_small() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(affine(&w, &[1.0, -1.0], &[1.0, 0.0, -1.0]), vec![-1.0, -3.0]);
        assert_eq!(transpose_matvec(&w, &[1.0, 1.0], 3), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
