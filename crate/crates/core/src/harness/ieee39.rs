use serde::{Deserialize, Serialize};

use crate::dynamics::{GridNetworkModel, ModelConfig};

const CASE_JSON: &str = include_str!("../../data/ieee39_tree.json");

/// A shipped benchmark case: the model plus how it was derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub name: String,
    pub note: String,
    /// Lines of the meshed network cut to leave a spanning tree.
    pub removed_lines: Vec<[String; 2]>,
    pub generators: Vec<String>,
    pub model: ModelConfig,
}

pub fn ieee39_case_file() -> CaseFile {
    serde_json::from_str(CASE_JSON).expect("bundled case file is valid")
}

/// The 39-bus tree with per-unit defaults and generator buses at ten times
/// the load inertia.
pub fn ieee39_tree_case() -> GridNetworkModel {
    GridNetworkModel::from_config(&ieee39_case_file().model).expect("bundled case is a valid tree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_case_shape() {
        let case = ieee39_case_file();
        let model = ieee39_tree_case();
        let g = model.topology().graph();
        assert_eq!(g.node_count(), 39);
        assert_eq!(g.edge_count(), 38);
        assert!(model.topology().diameter() >= 4);
        assert_eq!(case.generators.len(), 11);
        for gen in &case.generators {
            let i = g.index_of(gen).unwrap();
            assert_eq!(model.inertia()[i], 10.0);
        }
        let loads = model.inertia().iter().filter(|&&m| m == 1.0).count();
        assert_eq!(loads, 28);
        // Removed lines plus tree edges reproduce the 46-line network.
        assert_eq!(case.removed_lines.len() + g.edge_count(), 46);
        for [a, b] in &case.removed_lines {
            assert!(!g.contains_edge(a, b));
        }
        assert!(model.discretize().unwrap().spectral_radius() < 1.0);
    }
}
