use proptest::prelude::*;

use vkd_core::evaluation::{
    average_precision, cmc_curve, evaluate_tables, EntityKind, EvalOptions, ExclusionRule, FeatureRow, FeatureTable,
    Protocol,
};
use vkd_core::losses::{
    distance_preservation_loss, knowledge_distillation_loss, pairwise_distance_matrix, Metric,
};
use vkd_core::Matrix;

fn rows(spec: &[(u32, u32, Vec<i8>)], offset: u64) -> Vec<FeatureRow> {
    spec.iter()
        .enumerate()
        .map(|(i, (id, cam, f))| FeatureRow {
            entity: offset + i as u64,
            identity: *id,
            camera: *cam,
            feature: f.iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

fn entries(max: usize) -> impl Strategy<Value = Vec<(u32, u32, Vec<i8>)>> {
    prop::collection::vec((0u32..4, 0u32..3, prop::collection::vec(-3i8..4, 3)), 1..max)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_bounded(ranks in prop::collection::vec(1usize..30, 1..40), max in 1usize..40) {
        let cmc = cmc_curve(&ranks, max).unwrap();
        prop_assert_eq!(cmc.len(), max);
        prop_assert!(cmc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(cmc.iter().all(|&v| (0.0..=1.0).contains(&v)));
        if ranks.iter().all(|&r| r <= max) {
            prop_assert_eq!(*cmc.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn ap_lies_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 1..60)) {
        match average_precision(&rel) {
            Ok(ap) => {
                prop_assert!(ap > 0.0 && ap <= 1.0);
                if rel[0] && rel.iter().filter(|&&r| r).count() == 1 {
                    prop_assert_eq!(ap, 1.0);
                }
            }
            Err(_) => prop_assert!(rel.iter().all(|&r| !r)),
        }
    }

    // Reordering table rows (entities keep their ids) must not change anything.
    #[test]
    fn reports_ignore_row_order(
        q in entries(8),
        g in entries(20),
        seed in any::<u64>(),
        rule in prop_oneof![Just(ExclusionRule::Standard), Just(ExclusionRule::AllSameCamera)],
    ) {
        let query = FeatureTable { kind: EntityKind::Image, rows: rows(&q, 0) };
        let gallery = FeatureTable { kind: EntityKind::Tracklet, rows: rows(&g, 1000) };
        let opts = EvalOptions { exclusion: rule, ..EvalOptions::default() };
        let base = evaluate_tables(&query, &gallery, Protocol::I2V, &opts).unwrap();

        let mut shuffled = gallery.clone();
        let n = shuffled.rows.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.rows.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut reversed = query.clone();
        reversed.rows.reverse();
        let other = evaluate_tables(&reversed, &shuffled, Protocol::I2V, &opts).unwrap();
        prop_assert_eq!(base.cmc, other.cmc);
        prop_assert!((base.map - other.map).abs() < 1e-12);
        prop_assert_eq!(base.num_queries + base.dropped, q.len());
        prop_assert_eq!(other.dropped, base.dropped);
    }

    #[test]
    fn pairwise_distances_are_symmetric(x in matrix(5, 3), cosine in any::<bool>()) {
        let metric = if cosine { Metric::Cosine } else { Metric::Euclidean };
        let d = pairwise_distance_matrix(&x, metric).unwrap();
        for i in 0..5 {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..5 {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                prop_assert!(d.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn distillation_terms_vanish_only_on_agreement(t in matrix(4, 5), s in matrix(4, 5), tau in 0.5f64..20.0) {
        prop_assert!(knowledge_distillation_loss(&t, &s, tau).unwrap() >= -1e-12);
        prop_assert!(knowledge_distillation_loss(&t, &t, tau).unwrap().abs() < 1e-12);
        prop_assert!(distance_preservation_loss(&t, &s, Metric::Euclidean).unwrap() >= 0.0);
        prop_assert_eq!(distance_preservation_loss(&t, &t, Metric::Euclidean).unwrap(), 0.0);
    }
}
