#![allow(dead_code)]

use gflsim_core::graph::{generate_sbm, make_split, partition_graph, DataSplit, Graph, Partition, SbmParams};

pub fn small_sbm(seed: u64) -> Graph {
    let params = SbmParams {
        num_blocks: 4,
        nodes_per_block: 30,
        p_in: 0.25,
        p_out: 0.02,
        feature_dim: 8,
        feature_shift: 1.0,
    };
    generate_sbm(&params, seed).unwrap()
}

pub fn setup(seed: u64) -> (Graph, Partition, DataSplit) {
    let g = small_sbm(seed);
    let split = make_split(&g, 0.3, 0.2, seed).unwrap();
    let part = partition_graph(&g, 3, 0.0, 0, seed).unwrap();
    (g, part, split)
}
