use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::graph::UndirectedGraph;

/// Edge-set agreement between an estimate and the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub exact_match: bool,
    pub symmetric_difference: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Precision is 1 for an empty estimate of an empty truth and 0 for an empty
/// estimate otherwise; recall is 1 when the truth has no edges.
pub fn compare_topologies(
    estimated: &UndirectedGraph,
    truth: &UndirectedGraph,
) -> Result<TopologyMetrics> {
    let en: BTreeSet<&String> = estimated.nodes().iter().collect();
    let tn: BTreeSet<&String> = truth.nodes().iter().collect();
    if en != tn {
        return Err(HarnessError::NodeSetMismatch {
            only_estimated: en.difference(&tn).map(|s| s.to_string()).collect(),
            only_truth: tn.difference(&en).map(|s| s.to_string()).collect(),
        });
    }
    let est = estimated.edge_set();
    let tru = truth.edge_set();
    let tp = est.intersection(&tru).count();
    let fp = est.len() - tp;
    let fn_ = tru.len() - tp;
    let precision = match (est.len(), tru.len()) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (n, _) => tp as f64 / n as f64,
    };
    let recall = if tru.is_empty() {
        1.0
    } else {
        tp as f64 / tru.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(TopologyMetrics {
        precision,
        recall,
        f1,
        exact_match: fp + fn_ == 0,
        symmetric_difference: fp + fn_,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{kin_graph_oracle, validate_tree};

    fn chain(n: usize) -> UndirectedGraph {
        let e: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        UndirectedGraph::numbered(n, &e).unwrap()
    }

    #[test]
    fn identical_chains() {
        let m = compare_topologies(&chain(5), &chain(5)).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert!(m.exact_match);
        assert_eq!(m.symmetric_difference, 0);
    }

    #[test]
    fn one_missing_edge() {
        let mut est = chain(5);
        est.remove_edge("4", "5").unwrap();
        let m = compare_topologies(&est, &chain(5)).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.symmetric_difference, 1);
        assert!(!m.exact_match);
    }

    #[test]
    fn kin_graph_against_tree() {
        let kin = kin_graph_oracle(&validate_tree(&chain(5)).unwrap());
        let m = compare_topologies(&kin, &chain(5)).unwrap();
        assert!((m.precision - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.symmetric_difference, 3);
    }

    #[test]
    fn empty_graphs_and_mismatch() {
        let e = UndirectedGraph::empty(["a", "b"]).unwrap();
        let m = compare_topologies(&e, &e).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
        let m = compare_topologies(&UndirectedGraph::empty(["1", "2", "3"]).unwrap(), &chain(3))
            .unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(matches!(
            compare_topologies(&e, &chain(2)),
            Err(HarnessError::NodeSetMismatch { .. })
        ));
    }
}
