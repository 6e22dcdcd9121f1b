//! Attention connectivity and embedding export from trained checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{GraphMode, PreparedEpoch};
use crate::error::{Error, Result};
use crate::finetune::CheckpointSet;
use crate::numerics::{Graph, Real};

/// Attention of the final GAT layer averaged over heads, epochs and
/// ensemble members. `matrix` is row-major `[C, C]`, row `i` holding how
/// node `i` attends to every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub class_label: usize,
    pub channels: Vec<String>,
    pub matrix: Vec<f64>,
}

impl AttentionSummary {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.channels.len() + j]
    }
}

const CHUNK: usize = 32;

/// Mean final-layer GAT attention over the epochs labelled `class_label`.
pub fn collect_attention<T: Real>(
    set: &CheckpointSet<T>,
    epochs: &[&PreparedEpoch<T>],
    class_label: usize,
    channels: Vec<String>,
) -> Result<AttentionSummary> {
    let first = set.entries().first().ok_or(Error::EmptyEnsemble)?;
    let cfg = first.model.classifier.config();
    if cfg.graph_mode != GraphMode::Gat || cfg.gat_layers == 0 {
        return Err(Error::Unsupported(format!(
            "attention export needs a GAT classifier, found {:?}",
            cfg.graph_mode
        )));
    }
    let selected: Vec<&PreparedEpoch<T>> = epochs.iter().copied().filter(|e| e.label == class_label).collect();
    if selected.is_empty() {
        return Err(Error::Data(format!("no epochs of class {class_label}")));
    }
    let c = cfg.n_channels;
    if channels.len() != c {
        return Err(Error::Shape(format!("{} channel names for {c} nodes", channels.len())));
    }
    let heads = cfg.gat_heads;
    let mut sum = vec![0.0; c * c];
    let mut count = 0usize;
    for entry in set.entries() {
        for chunk in selected.chunks(CHUNK) {
            let mut g = Graph::new();
            let p = entry.model.bind(&mut g, false, false);
            let out = entry.model.forward(&mut g, &p, chunk, None)?;
            let last = *out.gat_attention.last().expect("GAT mode has layers");
            let probs = g.attention_weights(last).expect("attention node");
            for block in probs.chunks_exact(c * c) {
                for (s, &v) in sum.iter_mut().zip(block) {
                    *s += v.to_f64().unwrap_or(f64::NAN);
                }
            }
            count += chunk.len() * heads;
        }
    }
    sum.iter_mut().for_each(|v| *v /= count as f64);
    Ok(AttentionSummary {
        class_label,
        channels,
        matrix: sum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityGraph {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
    /// In-degree plus out-degree per node.
    pub degrees: Vec<usize>,
}

/// Number of directed off-diagonal edges kept for a fraction.
pub fn edge_budget(n_nodes: usize, top_frac: f64) -> usize {
    let total = n_nodes * n_nodes.saturating_sub(1);
    ((top_frac * total as f64).ceil() as usize).min(total)
}

/// Keeps the `ceil(top_frac * C * (C - 1))` largest off-diagonal entries as
/// directed edges; equal weights are ordered by `(from, to)`.
pub fn threshold_edges(summary: &AttentionSummary, top_frac: f64) -> Result<ConnectivityGraph> {
    if !(top_frac > 0.0 && top_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_frac must lie in (0, 1], got {top_frac}"
        )));
    }
    let c = summary.n_channels();
    let mut candidates: Vec<Edge> = (0..c)
        .flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| Edge {
            from: i,
            to: j,
            w: summary.at(i, j),
        })
        .collect();
    candidates.sort_by(|a, b| b.w.total_cmp(&a.w).then((a.from, a.to).cmp(&(b.from, b.to))));
    candidates.truncate(edge_budget(c, top_frac));
    let mut degrees = vec![0; c];
    for e in &candidates {
        degrees[e.from] += 1;
        degrees[e.to] += 1;
    }
    Ok(ConnectivityGraph {
        n_nodes: c,
        edges: candidates,
        degrees,
    })
}

/// Nodes with degree at least `min_degree`, highest degree first (lower
/// index first on ties).
pub fn key_channels(graph: &ConnectivityGraph, min_degree: usize) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..graph.n_nodes).filter(|&i| graph.degrees[i] >= min_degree).collect();
    nodes.sort_by(|&a, &b| graph.degrees[b].cmp(&graph.degrees[a]).then(a.cmp(&b)));
    nodes
}

#[derive(Serialize)]
struct ConnectivityFile<'a> {
    class: usize,
    channels: &'a [String],
    edges: Vec<EdgeFile<'a>>,
    key_channels: Vec<&'a str>,
}

#[derive(Serialize)]
struct EdgeFile<'a> {
    from: &'a str,
    to: &'a str,
    w: f64,
}

pub fn write_connectivity(
    path: &Path,
    summary: &AttentionSummary,
    graph: &ConnectivityGraph,
    keys: &[usize],
) -> Result<()> {
    let names = &summary.channels;
    let file = ConnectivityFile {
        class: summary.class_label,
        channels: names,
        edges: graph
            .edges
            .iter()
            .map(|e| EdgeFile {
                from: &names[e.from],
                to: &names[e.to],
                w: e.w,
            })
            .collect(),
        key_channels: keys.iter().map(|&k| names[k].as_str()).collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub subject_id: String,
    pub label: usize,
    pub values: Vec<f64>,
}

/// Channel-pooled classifier features, averaged over ensemble members.
pub fn export_embeddings<T: Real>(
    set: &CheckpointSet<T>,
    epochs: &[&PreparedEpoch<T>],
    subject_id: &str,
) -> Result<Vec<EmbeddingRow>> {
    if set.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut rows: Vec<EmbeddingRow> = epochs
        .iter()
        .map(|e| EmbeddingRow {
            subject_id: subject_id.to_string(),
            label: e.label,
            values: Vec::new(),
        })
        .collect();
    for entry in set.entries() {
        let mut offset = 0;
        for chunk in epochs.chunks(CHUNK) {
            let mut g = Graph::new();
            let p = entry.model.bind(&mut g, false, false);
            let out = entry.model.forward(&mut g, &p, chunk, None)?;
            let width = g.shape(out.pooled)[1];
            for (k, v) in g.value(out.pooled).data().chunks_exact(width).enumerate() {
                let row = &mut rows[offset + k].values;
                if row.is_empty() {
                    row.resize(width, 0.0);
                }
                row.iter_mut()
                    .zip(v)
                    .for_each(|(a, &b)| *a += b.to_f64().unwrap_or(f64::NAN));
            }
            offset += chunk.len();
        }
    }
    let n = set.len() as f64;
    for r in &mut rows {
        r.values.iter_mut().for_each(|v| *v /= n);
    }
    Ok(rows)
}

/// `subject,label,v0..v{D-1}` rows.
pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.values.len());
    let mut text = String::from("subject,label");
    for k in 0..width {
        text.push_str(&format!(",v{k}"));
    }
    text.push('\n');
    for r in rows {
        text.push_str(&format!("{},{}", r.subject_id, r.label));
        for v in &r.values {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
