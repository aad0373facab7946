use approx::assert_relative_eq;
use proptest::prelude::*;

use factjudge::corpus::Qrels;
use factjudge::evaluation::{cohens_kappa, confusion_matrix, kappa_stats, ndcg_at_k, LabelSeries, RunFile};
use factjudge::retrieval::{top_k_rank, Bm25Index, Bm25Params, TokenStream};

fn series(v: &[i32]) -> LabelSeries {
    LabelSeries::from_labels(v.iter().copied())
}

fn rater_pair() -> impl Strategy<Value = (Vec<i32>, Vec<i32>)> {
    (1usize..60).prop_flat_map(|n| (prop::collection::vec(0..4i32, n), prop::collection::vec(0..4i32, n)))
}

proptest! {
    #[test]
    fn kappa_bounded_and_symmetric((a, b) in rater_pair()) {
        let ab = cohens_kappa(&series(&a), &series(&b)).unwrap();
        let ba = cohens_kappa(&series(&b), &series(&a)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn kappa_self_agreement_is_one(a in prop::collection::vec(0..4i32, 1..60)) {
        prop_assert_eq!(cohens_kappa(&series(&a), &series(&a)).unwrap(), 1.0);
    }

    #[test]
    fn kappa_invariant_under_shared_relabeling((a, b) in rater_pair()) {
        let relabel = |v: &[i32]| v.iter().map(|x| (x + 2) % 4 * 10).collect::<Vec<_>>();
        let k1 = cohens_kappa(&series(&a), &series(&b)).unwrap();
        let k2 = cohens_kappa(&series(&relabel(&a)), &series(&relabel(&b))).unwrap();
        prop_assert!((k1 - k2).abs() < 1e-12);
    }

    #[test]
    fn confusion_totals_and_marginals((a, b) in rater_pair()) {
        let m = confusion_matrix(&series(&a), &series(&b), &[0, 1, 2, 3]).unwrap();
        prop_assert_eq!(m.total(), a.len() as u64);
        for (i, c) in m.classes.iter().enumerate() {
            prop_assert_eq!(m.row_sums()[i], a.iter().filter(|x| *x == c).count() as u64);
            prop_assert_eq!(m.col_sums()[i], b.iter().filter(|x| *x == c).count() as u64);
        }
    }

    #[test]
    fn ndcg_in_unit_interval_and_id_invariant(
        labels in prop::collection::vec(0u8..4, 1..12),
        perm_seed in any::<u64>(),
        k in 1usize..15,
    ) {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        // cheap deterministic shuffle
        order.sort_by_key(|&i| (i as u64).wrapping_mul(perm_seed | 1).rotate_left(17));
        let build = |prefix: &str| {
            let mut q = Qrels::new();
            for (i, &l) in labels.iter().enumerate() {
                q.insert("q", &format!("{prefix}{i}"), i64::from(l)).unwrap();
            }
            let mut r = RunFile::new();
            r.add_ordered("q", &order.iter().map(|i| format!("{prefix}{i}")).collect::<Vec<_>>());
            (q, r)
        };
        let (q1, r1) = build("doc");
        let (q2, r2) = build("zz-");
        let a = ndcg_at_k(&r1, &q1, k).unwrap();
        let b = ndcg_at_k(&r2, &q2, k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a.mean));
        prop_assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn ndcg_adjacent_fix_never_hurts(
        labels in prop::collection::vec(0u8..4, 2..10),
        pos in 0usize..9,
    ) {
        let n = labels.len();
        let pos = pos % (n - 1);
        let mut q = Qrels::new();
        for (i, &l) in labels.iter().enumerate() {
            q.insert("q", &format!("d{i}"), i64::from(l)).unwrap();
        }
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let mut better = ids.clone();
        if labels[pos] < labels[pos + 1] {
            better.swap(pos, pos + 1);
        }
        let score = |order: &[String]| {
            let mut r = RunFile::new();
            r.add_ordered("q", order);
            ndcg_at_k(&r, &q, n).unwrap().mean
        };
        prop_assert!(score(&better) + 1e-12 >= score(&ids));
    }

    #[test]
    fn bm25_query_permutation_invariant(
        docs in prop::collection::vec(prop::collection::vec(0u8..6, 0..8), 1..10),
        query in prop::collection::vec(0u8..8, 0..6),
    ) {
        let tok = |v: &[u8]| TokenStream::new(v.iter().map(|t| format!("t{t}")));
        let index = Bm25Index::build(
            docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), tok(d))),
            Bm25Params::default(),
        ).unwrap();
        let mut reversed = query.clone();
        reversed.reverse();
        let a = top_k_rank(&index, &tok(&query), docs.len());
        let b = top_k_rank(&index, &tok(&reversed), docs.len());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn degenerate_raters() {
    let s = kappa_stats(&series(&[0, 0, 0]), &series(&[3, 3, 3])).unwrap();
    assert_eq!(s.kappa, 0.0);
    assert!(s.degenerate);
    let s = kappa_stats(&series(&[0, 1, 1, 0]), &series(&[0, 0, 0, 0])).unwrap();
    assert_relative_eq!(s.kappa, 0.0);
}

#[test]
fn four_hundred_pair_confusion() {
    let a: Vec<i32> = (0..400).map(|i| i * 7 % 4).collect();
    let b: Vec<i32> = (0..400).map(|i| i * 3 % 4).collect();
    assert_eq!(confusion_matrix(&series(&a), &series(&b), &[0, 1, 2, 3]).unwrap().total(), 400);
}
