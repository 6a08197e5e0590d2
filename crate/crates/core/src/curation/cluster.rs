use crate::error::{Error, Result};

pub const CLUSTER_THRESHOLD: f64 = 0.85;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage agglomerative clustering of unit vectors: two clusters merge
/// while some cross pair has cosine at least `threshold`. Labels are numbered
/// by first appearance, so the output is canonical.
pub fn cluster_objects(embeddings: &[Vec<f64>], threshold: f64) -> Result<Vec<usize>> {
    for (i, e) in embeddings.iter().enumerate() {
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::range("embedding norm", format!("vector {i} has norm {norm}")));
        }
        if e.len() != embeddings[0].len() {
            return Err(Error::shape(
                "cluster_objects",
                format!("vector {i} has dimension {} vs {}", e.len(), embeddings[0].len()),
            ));
        }
    }
    let n = embeddings.len();
    let mut parent: Vec<usize> = (0..n).collect();
    // single linkage reaches the same fixed point as merging every qualifying edge
    for i in 0..n {
        for j in i + 1..n {
            if cosine(&embeddings[i], &embeddings[j]) >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label = vec![usize::MAX; n];
    let mut next = 0;
    for (i, label) in labels.iter_mut().enumerate() {
        let r = find(&mut parent, i);
        if root_label[r] == usize::MAX {
            root_label[r] = next;
            next += 1;
        }
        *label = root_label[r];
    }
    Ok(labels)
}
