mod common;

use common::{assert_close, corpus_evidence, corpus_model, enumerate_mpe};
use l2c::bounds::{
    bucket_elimination_mpe, elimination_order, induced_width, mini_bucket_bound, OrderHeuristic,
};
use l2c::generate::random_grid;
use l2c::{Assignment, Error};

#[test]
fn bucket_elimination_matches_enumeration() {
    for seed in 0..80 {
        let model = corpus_model(seed);
        let ev = corpus_evidence(&model, seed);
        for heuristic in [OrderHeuristic::MinFill, OrderHeuristic::MinDegree] {
            let order = elimination_order(&model, &ev, heuristic);
            let (completion, score) = bucket_elimination_mpe(&model, &ev, &order).unwrap();
            let (x, want) = enumerate_mpe(&model, &ev);
            assert_close(score, want, 1e-9);
            assert_eq!(ev.union(&completion), Assignment::from_dense(&x));
        }
    }
}

#[test]
fn mini_bucket_is_admissible_and_tightens_to_exact() {
    for seed in 0..80 {
        let model = corpus_model(seed);
        let ev = corpus_evidence(&model, seed);
        let order = elimination_order(&model, &ev, OrderHeuristic::MinFill);
        let (_, exact) = enumerate_mpe(&model, &ev);
        for i in [1, 2, 3, 5] {
            let ub = mini_bucket_bound(&model, &ev, i, &order)
                .unwrap()
                .upper_bound;
            assert!(ub >= exact - 1e-9, "seed {seed} i {i}: {ub} < {exact}");
        }
        let ub = mini_bucket_bound(&model, &ev, order.induced_width + 1, &order)
            .unwrap()
            .upper_bound;
        assert_close(ub, exact, 1e-9);
    }
}

#[test]
fn induced_width_of_grid_order() {
    let model = random_grid(3, 5, 0);
    let order = elimination_order(&model, &Assignment::new(), OrderHeuristic::MinFill);
    assert_eq!(
        induced_width(&model.primal_graph(), &order.order),
        order.induced_width
    );
    assert!(order.induced_width >= 3 && order.induced_width <= 4);
}

#[test]
fn invalid_arguments() {
    let model = corpus_model(0);
    let order = elimination_order(&model, &Assignment::new(), OrderHeuristic::MinFill);
    assert!(matches!(
        mini_bucket_bound(&model, &Assignment::new(), 0, &order),
        Err(Error::Config(_))
    ));
}
