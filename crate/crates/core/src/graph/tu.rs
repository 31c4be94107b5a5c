//! TU-format dataset ingestion and serialisation.
//!
//! The format is line-oriented text, one directory per dataset:
//!
//! - `NAME_A.txt` — `"i, j"` per line, 1-based global node ids, one directed
//!   edge per line (public dumps list both directions of each edge);
//! - `NAME_graph_indicator.txt` — 1-based graph id of each node, one line
//!   per node;
//! - `NAME_graph_labels.txt` — one integer per graph;
//! - `NAME_node_labels.txt` — optional, one categorical feature per node;
//! - `NAME_node_labels_target.txt` — optional, per-node class for
//!   node-level tasks.
//!
//! Arbitrary integer labels are remapped to dense 0-based ids in order of
//! first appearance; the mapping is returned for audit. Duplicate edges and
//! self-loops are canonicalised away with counts reported.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Graph, GraphError, Result, TaskKind};

/// Side information from a load: label remaps and cleanup counts.
#[derive(Clone, Debug, Default)]
pub struct LoadAudit {
    pub graph_label_map: Vec<(i64, usize)>,
    pub node_label_map: Vec<(i64, usize)>,
    pub target_label_map: Vec<(i64, usize)>,
    pub dropped_self_loops: usize,
    pub merged_duplicate_edges: usize,
}

fn read_lines(dir: &Path, file: &str, required: bool) -> Result<Option<Vec<String>>> {
    let path = dir.join(file);
    if !path.exists() {
        if required {
            return Err(GraphError::MissingFile(path.display().to_string()));
        }
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Some(
        text.lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect(),
    ))
}

fn parse_int(file: &str, line_no: usize, token: &str) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| GraphError::Parse {
        file: file.to_string(),
        line: line_no,
        message: format!("expected an integer, got '{token}'"),
    })
}

/// Dense-remap arbitrary integers in file order; returns ids plus the map.
fn remap(values: &[i64]) -> (Vec<usize>, Vec<(i64, usize)>) {
    let mut table: HashMap<i64, usize> = HashMap::new();
    let mut order = Vec::new();
    let ids = values
        .iter()
        .map(|&v| {
            *table.entry(v).or_insert_with(|| {
                order.push((v, order.len()));
                order.len() - 1
            })
        })
        .collect();
    (ids, order)
}

pub fn load_tu_dataset(directory: &Path, name: &str) -> Result<(Dataset, LoadAudit)> {
    let a_file = format!("{name}_A.txt");
    let ind_file = format!("{name}_graph_indicator.txt");
    let glab_file = format!("{name}_graph_labels.txt");
    let nlab_file = format!("{name}_node_labels.txt");
    let tgt_file = format!("{name}_node_labels_target.txt");

    let indicator_lines = read_lines(directory, &ind_file, true)?.expect("required");
    let num_nodes_total = indicator_lines.len();
    let mut graph_of_node = Vec::with_capacity(num_nodes_total);
    let mut num_graphs = 0usize;
    for (i, line) in indicator_lines.iter().enumerate() {
        let gid = parse_int(&ind_file, i + 1, line)?;
        if gid < 1 {
            return Err(GraphError::Parse {
                file: ind_file.clone(),
                line: i + 1,
                message: format!("graph id {gid} is not 1-based"),
            });
        }
        let gid = (gid - 1) as usize;
        num_graphs = num_graphs.max(gid + 1);
        graph_of_node.push(gid);
    }

    // Global node id -> (graph, local index), locals in global order.
    let mut local_of_node = Vec::with_capacity(num_nodes_total);
    let mut nodes_per_graph = vec![0usize; num_graphs];
    for &g in &graph_of_node {
        local_of_node.push(nodes_per_graph[g]);
        nodes_per_graph[g] += 1;
    }

    let glab_lines = read_lines(directory, &glab_file, true)?.expect("required");
    if glab_lines.len() != num_graphs {
        return Err(GraphError::Parse {
            file: glab_file.clone(),
            line: glab_lines.len(),
            message: format!(
                "{} graph labels for {num_graphs} graphs in the indicator file",
                glab_lines.len()
            ),
        });
    }
    let mut raw_glabels = Vec::with_capacity(num_graphs);
    for (i, line) in glab_lines.iter().enumerate() {
        raw_glabels.push(parse_int(&glab_file, i + 1, line)?);
    }
    let (graph_labels, graph_label_map) = remap(&raw_glabels);

    let mut audit = LoadAudit {
        graph_label_map,
        ..Default::default()
    };

    // Node features: dense-remapped labels, or a single shared category
    // when the file is absent.
    let (feature_ids, num_feature_categories) =
        match read_lines(directory, &nlab_file, false)? {
            Some(lines) => {
                if lines.len() != num_nodes_total {
                    return Err(GraphError::Parse {
                        file: nlab_file.clone(),
                        line: lines.len(),
                        message: format!(
                            "{} node labels for {num_nodes_total} nodes",
                            lines.len()
                        ),
                    });
                }
                let mut raw = Vec::with_capacity(lines.len());
                for (i, line) in lines.iter().enumerate() {
                    raw.push(parse_int(&nlab_file, i + 1, line)?);
                }
                let (ids, map) = remap(&raw);
                let cats = map.len();
                audit.node_label_map = map;
                (ids, cats)
            }
            None => (vec![0usize; num_nodes_total], 1),
        };

    // Optional per-node class targets (node-level task).
    let targets = match read_lines(directory, &tgt_file, false)? {
        Some(lines) => {
            if lines.len() != num_nodes_total {
                return Err(GraphError::Parse {
                    file: tgt_file.clone(),
                    line: lines.len(),
                    message: format!("{} targets for {num_nodes_total} nodes", lines.len()),
                });
            }
            let mut raw = Vec::with_capacity(lines.len());
            for (i, line) in lines.iter().enumerate() {
                raw.push(parse_int(&tgt_file, i + 1, line)?);
            }
            let (ids, map) = remap(&raw);
            audit.target_label_map = map;
            Some(ids)
        }
        None => None,
    };

    // Edges, grouped per graph in local coordinates.
    let mut per_graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let a_lines = read_lines(directory, &a_file, true)?.expect("required");
    for (i, line) in a_lines.iter().enumerate() {
        let mut parts = line.split(',');
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(GraphError::Parse {
                    file: a_file.clone(),
                    line: i + 1,
                    message: format!("expected 'i, j', got '{line}'"),
                })
            }
        };
        let u = parse_int(&a_file, i + 1, u)?;
        let v = parse_int(&a_file, i + 1, v)?;
        if u < 1 || v < 1 || u as usize > num_nodes_total || v as usize > num_nodes_total {
            return Err(GraphError::Parse {
                file: a_file.clone(),
                line: i + 1,
                message: format!("node id out of range in edge ({u}, {v})"),
            });
        }
        let (u, v) = ((u - 1) as usize, (v - 1) as usize);
        if graph_of_node[u] != graph_of_node[v] {
            return Err(GraphError::Parse {
                file: a_file.clone(),
                line: i + 1,
                message: format!(
                    "edge joins nodes of graphs {} and {}",
                    graph_of_node[u] + 1,
                    graph_of_node[v] + 1
                ),
            });
        }
        per_graph_edges[graph_of_node[u]].push((local_of_node[u], local_of_node[v]));
    }

    // Per-graph feature/label slices.
    let mut per_graph_features: Vec<Vec<usize>> =
        nodes_per_graph.iter().map(|&n| Vec::with_capacity(n)).collect();
    let mut per_graph_targets: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (node, &g) in graph_of_node.iter().enumerate() {
        per_graph_features[g].push(feature_ids[node]);
        if let Some(t) = &targets {
            per_graph_targets[g].push(t[node]);
        }
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let (mut graph, loops, dups) = Graph::from_edge_list(
            nodes_per_graph[g],
            &per_graph_edges[g],
            std::mem::take(&mut per_graph_features[g]),
        )?;
        audit.dropped_self_loops += loops;
        // Public dumps store each undirected edge in both directions; only
        // copies beyond the expected mirror count as true duplicates.
        audit.merged_duplicate_edges += dups.saturating_sub(graph.num_edges());
        graph.graph_label = Some(graph_labels[g]);
        if targets.is_some() {
            graph.node_labels = Some(std::mem::take(&mut per_graph_targets[g]));
        }
        graphs.push(graph);
    }

    let (task, num_classes) = if let Some(t) = &targets {
        (TaskKind::NodeLevel, t.iter().max().map(|m| m + 1).unwrap_or(1))
    } else {
        (
            TaskKind::GraphLevel,
            graph_labels.iter().max().map(|m| m + 1).unwrap_or(1),
        )
    };

    let dataset = Dataset {
        graphs,
        num_feature_categories,
        num_classes,
        task,
    };
    dataset.validate()?;
    Ok((dataset, audit))
}

/// Serialise a dataset back to TU files (both edge directions, 1-based ids).
/// Output is byte-deterministic for a given dataset.
pub fn save_tu_dataset(dataset: &Dataset, directory: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(directory).map_err(|source| GraphError::Io {
        path: directory.display().to_string(),
        source,
    })?;

    let mut a_txt = String::new();
    let mut indicator = String::new();
    let mut glabels = String::new();
    let mut nlabels = String::new();
    let mut targets = String::new();
    let mut have_targets = false;

    let mut offset = 0usize;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for &(a, b) in &g.edges {
            let (u, v) = (a + offset + 1, b + offset + 1);
            let _ = writeln!(a_txt, "{u}, {v}");
            let _ = writeln!(a_txt, "{v}, {u}");
        }
        for node in 0..g.num_nodes {
            let _ = writeln!(indicator, "{}", gi + 1);
            let _ = writeln!(nlabels, "{}", g.node_feature_ids[node]);
            if let Some(labels) = &g.node_labels {
                have_targets = true;
                let _ = writeln!(targets, "{}", labels[node]);
            }
        }
        let _ = writeln!(glabels, "{}", g.graph_label.unwrap_or(0));
        offset += g.num_nodes;
    }

    let write = |file: String, contents: &str| -> Result<()> {
        let path = directory.join(file);
        std::fs::write(&path, contents).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    write(format!("{name}_A.txt"), &a_txt)?;
    write(format!("{name}_graph_indicator.txt"), &indicator)?;
    write(format!("{name}_graph_labels.txt"), &glabels)?;
    write(format!("{name}_node_labels.txt"), &nlabels)?;
    if have_targets {
        write(format!("{name}_node_labels_target.txt"), &targets)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_toy(dir: &Path) {
        // Graph 1: triangle on nodes 1-3; graph 2: path on nodes 4-6.
        std::fs::write(
            dir.join("toy_A.txt"),
            "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n",
        )
        .unwrap();
        std::fs::write(
            dir.join("toy_graph_indicator.txt"),
            "1\n1\n1\n2\n2\n2\n",
        )
        .unwrap();
        std::fs::write(dir.join("toy_graph_labels.txt"), "1\n-1\n").unwrap();
        std::fs::write(dir.join("toy_node_labels.txt"), "3\n3\n5\n3\n5\n5\n").unwrap();
    }

    #[test]
    fn toy_fixture_loads_with_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path());
        let (ds, audit) = load_tu_dataset(dir.path(), "toy").unwrap();
        assert_eq!(ds.num_graphs(), 2);
        assert_eq!(ds.graphs[0].num_nodes, 3);
        assert_eq!(ds.graphs[1].num_nodes, 3);
        assert_eq!(ds.graphs[0].num_edges(), 3);
        assert_eq!(ds.graphs[1].num_edges(), 2);
        assert_eq!(ds.num_classes, 2);
        // Labels remapped in file order: 1 -> 0, -1 -> 1; features 3 -> 0, 5 -> 1.
        assert_eq!(ds.graphs[0].graph_label, Some(0));
        assert_eq!(ds.graphs[1].graph_label, Some(1));
        assert_eq!(ds.graphs[0].node_feature_ids, vec![0, 0, 1]);
        assert_eq!(ds.num_feature_categories, 2);
        assert_eq!(audit.dropped_self_loops, 0);
        assert_eq!(audit.merged_duplicate_edges, 0);
    }

    #[test]
    fn missing_required_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_tu_dataset(dir.path(), "toy").unwrap_err();
        assert!(matches!(err, GraphError::MissingFile(_)));
    }

    #[test]
    fn cross_graph_edge_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path());
        std::fs::write(dir.path().join("toy_A.txt"), "1, 4\n").unwrap();
        let err = load_tu_dataset(dir.path(), "toy").unwrap_err();
        match err {
            GraphError::Parse { file, line, .. } => {
                assert_eq!(file, "toy_A.txt");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ragged_node_labels_error() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path());
        std::fs::write(dir.path().join("toy_node_labels.txt"), "1\n2\n").unwrap();
        assert!(load_tu_dataset(dir.path(), "toy").is_err());
    }

    #[test]
    fn absent_node_labels_give_single_category() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path());
        std::fs::remove_file(dir.path().join("toy_node_labels.txt")).unwrap();
        let (ds, _) = load_tu_dataset(dir.path(), "toy").unwrap();
        assert_eq!(ds.num_feature_categories, 1);
        assert!(ds
            .graphs
            .iter()
            .all(|g| g.node_feature_ids.iter().all(|&f| f == 0)));
    }

    #[test]
    fn roundtrip_preserves_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path());
        let (ds, _) = load_tu_dataset(dir.path(), "toy").unwrap();
        let out = tempfile::tempdir().unwrap();
        save_tu_dataset(&ds, out.path(), "copy").unwrap();
        let (ds2, _) = load_tu_dataset(out.path(), "copy").unwrap();
        assert_eq!(ds, ds2);
    }
}
