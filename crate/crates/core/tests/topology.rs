use glocal::harness::builtin_scenario;
use glocal::numerics::{eig_sym, Matrix, Vector};
use glocal::observers::cluster_mode_matrix;
use glocal::topology::*;
use proptest::prelude::*;

fn path(n: usize) -> WeightedGraph {
    let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
    WeightedGraph::from_edges(n, &edges).unwrap()
}

#[test]
fn path_laplacian_entries() {
    let l = laplacian(&path(3));
    let expected = Matrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
    assert_eq!(l, expected);
}

#[test]
fn rejects_bad_edges() {
    assert!(WeightedGraph::from_edges(3, &[(0, 0, 1.0)]).is_err());
    assert!(WeightedGraph::from_edges(3, &[(0, 3, 1.0)]).is_err());
    assert!(WeightedGraph::from_edges(3, &[(0, 1, -1.0)]).is_err());
    assert!(WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 0, 2.0)]).is_err());
}

#[test]
fn library_requires_connected_modes() {
    let g = path(4);
    let cut = g.toggled(1, 2, 1.0).unwrap();
    assert!(!is_connected(&cut));
    assert!(TopologyLibrary::new(vec![g.clone(), cut.clone()]).is_err());
    assert!(TopologyLibrary::without_connectivity_check(vec![g, cut]).is_ok());
}

#[test]
fn toggle_adds_then_removes() {
    let g = path(4);
    let added = g.toggled(0, 3, 0.5).unwrap();
    assert_eq!(added.weight(0, 3), 0.5);
    assert_eq!(added.weight(3, 0), 0.5);
    let back = added.toggled(0, 3, 0.5).unwrap();
    assert_eq!(back, g);
}

#[test]
fn delta_laplacian_of_normal_mode_is_error() {
    let lib = TopologyLibrary::new(vec![path(4), path(4).toggled(0, 3, 1.0).unwrap()]).unwrap();
    assert!(delta_laplacian(&lib, 0).is_err());
    let dl = delta_laplacian(&lib, 1).unwrap();
    let dd = components_of_delta(&dl).unwrap();
    assert_eq!(dd.components, vec![vec![0, 3]]);
    assert_eq!(dd.singletons, vec![1, 2]);
}

#[test]
fn delta_components_split_disjoint_links() {
    let g = path(6);
    let h = g.toggled(0, 2, 1.0).unwrap().toggled(3, 5, 2.0).unwrap().toggled(2, 4, 1.0).unwrap();
    let lib = TopologyLibrary::new(vec![g, h]).unwrap();
    let dd = components_of_delta(&delta_laplacian(&lib, 1).unwrap()).unwrap();
    assert_eq!(dd.components, vec![vec![0, 2, 4], vec![3, 5]]);
    assert!((dd.reassemble() - &dd.delta_l).amax() < 1e-14);
}

#[test]
fn switching_signal_is_right_continuous() {
    let s = SwitchingSignal::new(vec![0.0, 1.0, 2.5], vec![0, 2, 1]).unwrap();
    assert_eq!(s.mode_at(0.0), 0);
    assert_eq!(s.mode_at(0.999), 0);
    assert_eq!(s.mode_at(1.0), 2);
    assert_eq!(s.mode_at(2.5), 1);
    assert_eq!(s.mode_at(10.0), 1);
    assert_eq!(s.segments(2.0), vec![(0.0, 1.0, 0), (1.0, 2.0, 2)]);
    let snapped = SwitchingSignal::new(vec![0.0, 1.0004], vec![0, 1]).unwrap().snapped(1e-3).unwrap();
    assert!((snapped.breakpoints()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn sec5_partition_structure() {
    let s = builtin_scenario("sec5-19node").unwrap();
    let cp = &s.clusters;
    assert_eq!(cp.edge_cuts, vec![(0, 7), (0, 12), (7, 14)]);
    assert_eq!(cp.local_control_centers, vec![4, 7, 16]);
    let pm = &s.partitioned;
    assert_eq!(pm.blocks[0].boundary, vec![0]);
    assert_eq!(pm.blocks[1].boundary, vec![7]);
    assert_eq!(pm.blocks[2].boundary, vec![12, 14]);
    assert_eq!(pm.blocks[2].e.ncols(), 2);
    assert_eq!(cp.cuts_of(0).len(), 2);
}

#[test]
fn cluster_dynamics_plus_coupling_reproduce_full_dynamics() {
    let s = builtin_scenario("sec5-19node").unwrap();
    let p = &s.plant;
    let pm = &s.partitioned;
    let x = Vector::from_fn(38, |i, _| ((i * 37 % 11) as f64 - 5.0) / 3.0);
    let full = p.a(0).unwrap() * &x;
    for i in 0..3 {
        let blk = &pm.blocks[i];
        let ai = cluster_mode_matrix(pm, i, 0, p.alpha, p.gamma);
        let xi = blk.restrict_state(&x);
        let via_terms = &ai * &xi + pm.coupling_term(i, &x, p.alpha);
        let via_e = &ai * &xi + &blk.e * pm.coupling_input(&p.lib, i, &x, p.alpha);
        let want = blk.restrict_state(&full);
        assert!((&via_terms - &want).amax() < 1e-12, "cluster {i}");
        assert!((&via_e - &want).amax() < 1e-12, "cluster {i}");
    }
}

#[test]
fn partition_rejects_switching_cut_edges() {
    let g = path(4);
    let h = g.toggled(1, 2, 1.0).unwrap().toggled(0, 3, 1.0).unwrap();
    let lib = TopologyLibrary::new(vec![g.clone(), h]).unwrap();
    let cp = ClusterPartition::new(&g, vec![vec![0, 1], vec![2, 3]], vec![0, 2]).unwrap();
    assert!(partition(&lib, &cp).is_err());
}

fn graph_strategy() -> impl Strategy<Value = WeightedGraph> {
    (3usize..8)
        .prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (Just(n), proptest::collection::vec(proptest::option::weighted(0.5, 0.1f64..3.0), pairs))
        })
        .prop_map(|(n, ws)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if let Some(w) = ws[k] {
                        edges.push((i, j, w));
                    }
                    k += 1;
                }
            }
            WeightedGraph::from_edges(n, &edges).unwrap()
        })
}

proptest! {
    #[test]
    fn laplacian_is_symmetric_psd_with_zero_row_sums(g in graph_strategy()) {
        let l = laplacian(&g);
        prop_assert!((&l - l.transpose()).amax() < 1e-14);
        for i in 0..g.n() {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
        }
        let (vals, _) = eig_sym(&l).unwrap();
        prop_assert!(vals[0] > -1e-10);
        prop_assert!(vals[0].abs() < 1e-10);
    }

    #[test]
    fn delta_decomposition_reassembles(a in graph_strategy(), seed in 0u64..1000) {
        let n = a.n();
        let mut b = a.clone();
        let mut s = seed;
        for _ in 0..3 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let i = (s >> 33) as usize % n;
            let j = (s >> 13) as usize % n;
            if i != j {
                b = b.toggled(i, j, 0.5 + (s % 7) as f64 / 4.0).unwrap();
            }
        }
        let dl = laplacian(&b) - laplacian(&a);
        let dd = components_of_delta(&dl).unwrap();
        prop_assert!((dd.reassemble() - &dl).amax() < 1e-12);
        let p = dd.permutation_matrix();
        prop_assert!((&p * p.transpose() - Matrix::identity(n, n)).amax() < 1e-15);
        let mut seen: Vec<usize> = dd.components.iter().flatten().copied().chain(dd.singletons.iter().copied()).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}
