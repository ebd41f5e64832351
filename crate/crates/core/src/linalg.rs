//! Small dense helpers shared by the mesh, the spiking actor and the hybrid
//! backends. Every dense matrix-vector product in the crate goes through
//! [`matvec`] so that software and hardware paths accumulate in the same order.

use ndarray::Array2;

use crate::error::{Error, Result};

/// `y = W x`, accumulated left to right along each row.
pub fn matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.ncols(), x.len());
    w.rows()
        .into_iter()
        .map(|row| {
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            acc
        })
        .collect()
}

/// `y = Wᵀ g`.
pub fn matvec_t(w: &Array2<f64>, g: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.nrows(), g.len());
    let mut out = vec![0.0; w.ncols()];
    for (row, &gi) in w.rows().into_iter().zip(g) {
        if gi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o += a * gi;
        }
    }
    out
}

/// Cosine similarity of two equally shaped matrices, flattened.
pub fn cosine_similarity(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Config(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean_squared_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[1.0, 1.0], [0.0, 0.0]];
        let c = cosine_similarity(&a, &b).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-15);

        let m = array![[0.3, -1.2], [2.0, 0.1]];
        assert!((cosine_similarity(&m, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&m, &(-&m)).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_matrix_is_undefined() {
        let z = Array2::<f64>::zeros((2, 2));
        let m = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            cosine_similarity(&z, &m),
            Err(Error::UndefinedSimilarity)
        ));
    }

    #[test]
    fn matvec_and_transpose_agree_with_definition() {
        let w = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        assert_eq!(matvec(&w, &[1.0, 1.0, 1.0]), vec![6.0, -0.5]);
        assert_eq!(matvec_t(&w, &[1.0, 2.0]), vec![-1.0, 3.0, 3.0]);
    }
}
