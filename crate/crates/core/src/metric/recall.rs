//! Recall@K over normalized embeddings.

use nalgebra::DMatrix;

use super::MetricError;

/// Fraction of queries whose K most similar index rows (dot product, ties to
/// the lower index) contain at least one row of the query's class.
///
/// With `exclude_self` the index and query sets are the same samples and row
/// `i` is never retrieved for query `i`.
pub fn evaluate_recall_at_k(
    index_embeddings: &DMatrix<f64>,
    index_labels: &[u64],
    query_embeddings: &DMatrix<f64>,
    query_labels: &[u64],
    k: usize,
    exclude_self: bool,
) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidParameter("K must be at least 1".into()));
    }
    if index_embeddings.nrows() == 0 {
        return Err(MetricError::EmptyIndex);
    }
    if index_embeddings.nrows() != index_labels.len() || query_embeddings.nrows() != query_labels.len() {
        return Err(MetricError::ShapeMismatch("embedding rows vs labels".into()));
    }
    if index_embeddings.ncols() != query_embeddings.ncols() {
        return Err(MetricError::ShapeMismatch(format!(
            "index dim {} vs query dim {}",
            index_embeddings.ncols(),
            query_embeddings.ncols()
        )));
    }
    if exclude_self && index_embeddings.nrows() != query_embeddings.nrows() {
        return Err(MetricError::ShapeMismatch(
            "exclude_self requires the query set to be the index set".into(),
        ));
    }
    if query_labels.is_empty() {
        return Ok(0.0);
    }

    let scores = query_embeddings * index_embeddings.transpose();
    let mut hits = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(index_labels.len());
    for q in 0..query_labels.len() {
        order.clear();
        order.extend((0..index_labels.len()).filter(|&i| !(exclude_self && i == q)));
        let row = scores.row(q);
        let by_rank = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
        let top = k.min(order.len());
        if top == 0 {
            continue;
        }
        if top < order.len() {
            order.select_nth_unstable_by(top - 1, by_rank);
        }
        if order[..top].iter().any(|&i| index_labels[i] == query_labels[q]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / query_labels.len() as f64)
}
