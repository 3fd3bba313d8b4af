use proptest::prelude::*;
use rand::Rng;

use eigen_core::cppn::{pattern_coords, render, CppnGenome, Frame, RenderMode, RingGeometry};
use eigen_core::fitness::{score, FitnessParams};
use eigen_core::flow::{FlowVector, VectorField};
use eigen_core::imaging::{quantize, Raster};
use eigen_core::neat::{
    compatibility_distance, crossover, minimal_genome, mutate, stream_rng, InnovationTracker,
    NeatParams,
};

/// A minimal genome pushed through `steps` rounds of aggressive mutation.
fn evolved(
    seed: u64,
    channels: usize,
    steps: usize,
    tracker: &mut InnovationTracker,
) -> CppnGenome {
    let mut rng = stream_rng(seed, 0, 0);
    let p = NeatParams {
        add_connection_rate: 0.5,
        add_node_rate: 0.3,
        ..NeatParams::default()
    };
    let mut g = minimal_genome(channels, &mut rng);
    for _ in 0..steps {
        tracker.start_generation();
        g = mutate(&g, &p, &mut rng, tracker);
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mutation_keeps_genomes_valid(seed in any::<u64>(), steps in 0usize..30, color in any::<bool>()) {
        let channels = if color { 3 } else { 1 };
        let mut tracker = InnovationTracker::new(channels);
        let g = evolved(seed, channels, steps, &mut tracker);
        prop_assert!(g.validate().is_ok());
        prop_assert_eq!(g.channels(), channels);
        let mut ids: Vec<u64> = g.connections.iter().map(|c| c.innovation_id).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert!(ids.iter().all(|&i| i < tracker.innovation_counter()));
    }

    #[test]
    fn distance_is_a_pseudo_metric(a in any::<u64>(), b in any::<u64>(), sa in 0usize..20, sb in 0usize..20) {
        let mut tracker = InnovationTracker::new(1);
        let ga = evolved(a, 1, sa, &mut tracker);
        let gb = evolved(b, 1, sb, &mut tracker);
        let p = NeatParams::default();
        let ab = compatibility_distance(&ga, &gb, &p);
        prop_assert!(ab >= 0.0 && ab.is_finite());
        prop_assert_eq!(ab, compatibility_distance(&gb, &ga, &p));
        prop_assert_eq!(compatibility_distance(&ga, &ga, &p), 0.0);
    }

    #[test]
    fn crossover_children_are_valid(a in any::<u64>(), b in any::<u64>(), s in any::<u64>()) {
        let mut tracker = InnovationTracker::new(1);
        let ga = evolved(a, 1, 15, &mut tracker);
        let gb = evolved(b, 1, 15, &mut tracker);
        let child = crossover(&ga, &gb, &mut stream_rng(s, 1, 1));
        prop_assert!(child.validate().is_ok());
        // structure comes from the fitter parent
        let ids = |g: &CppnGenome| g.connections.iter().map(|c| c.innovation_id).collect::<Vec<_>>();
        prop_assert_eq!(ids(&child), ids(&ga));
    }

    #[test]
    fn renders_stay_in_unit_range(seed in any::<u64>(), mode in 0usize..3) {
        let mode = [RenderMode::Gray, RenderMode::Color, RenderMode::Binary][mode];
        let mut tracker = InnovationTracker::new(mode.channels());
        let g = evolved(seed, mode.channels(), 10, &mut tracker);
        let img = render(&g, &Frame::Rings(RingGeometry::default_for(64, 64)), 64, 64, mode).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        if mode == RenderMode::Binary {
            prop_assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn pattern_coords_are_bounded(x in 0.0f64..160.0, y in 0.0f64..120.0) {
        let pc = pattern_coords(x, y, &RingGeometry::default_for(160, 120));
        if pc.inside {
            prop_assert!((-1.0..=1.0).contains(&pc.u));
            prop_assert!((-1.0..=1.0).contains(&pc.v));
            prop_assert!((0..3).contains(&pc.band_index));
        }
    }

    #[test]
    fn score_ignores_vector_order(seed in any::<u64>(), n in 0usize..40) {
        let mut rng = stream_rng(seed, 0, 0);
        let mut vectors: Vec<FlowVector> = (0..n)
            .map(|_| FlowVector::tracked(
                rng.random_range(0.0..160.0),
                rng.random_range(0.0..120.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ))
            .collect();
        let p = FitnessParams::default();
        let a = score(&VectorField { source_size: (160, 120), vectors: vectors.clone() }, &p);
        vectors.reverse();
        let b = score(&VectorField { source_size: (160, 120), vectors }, &p);
        prop_assert_eq!(a.n_valid, b.n_valid);
        prop_assert!((a.total - b.total).abs() < 1e-9);
        prop_assert!(a.n_valid <= n);
        prop_assert!(a.align_term <= a.n_valid as f64 && a.oppose_term <= a.n_valid as f64);
        prop_assert!(a.magnitude_term <= p.magnitude_cap * a.n_valid as f64 + 1e-9);
    }

    #[test]
    fn byte_round_trip_is_exact(bytes in proptest::collection::vec(any::<u8>(), 12)) {
        let r = Raster::from_bytes(2, 2, 3, &bytes).unwrap();
        prop_assert_eq!(r.to_bytes(), bytes);
        prop_assert!(r.data().iter().all(|&v| quantize(v) as f32 / 255.0 == v));
    }
}
