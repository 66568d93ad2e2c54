use coinpop::analysis::suites::{random_bias_distribution, random_finite, random_rule, random_tree, run_suite, Suite};
use coinpop::analysis::*;
use coinpop::coin_model::{BiasDistribution, RngStream};
use coinpop::design_opt::MomentTable;
use coinpop::walk_core::{StoppingRule, Triangle};
use coinpop::Error;
use proptest::prelude::*;

fn fd(p: Vec<f64>) -> FiniteDistribution {
    FiniteDistribution::new(p).unwrap()
}

fn bern(p: f64) -> FiniteDistribution {
    fd(vec![p, 1.0 - p])
}

#[test]
fn distance_examples() {
    let h = hellinger_sq(&bern(0.5), &bern(0.9)).unwrap();
    assert!((h - (1.0 - (0.45f64.sqrt() + 0.05f64.sqrt()))).abs() < 1e-15);
    assert!((h - 0.10557).abs() < 1e-5);
    let kl = kl_div(&bern(0.5), &bern(0.25)).unwrap();
    assert!((kl - 0.14384).abs() < 1e-5);
    assert_eq!(kl_div(&bern(0.5), &bern(1.0)).unwrap(), f64::INFINITY);
    assert_eq!(hellinger_sq(&bern(1.0), &bern(0.0)).unwrap(), 1.0);
    assert_eq!(hellinger_sq(&bern(0.3), &bern(0.3)).unwrap(), 0.0);
    assert_eq!(kl_div(&bern(0.3), &bern(0.3)).unwrap(), 0.0);
    assert!(hellinger_sq(&bern(0.3), &fd(vec![0.2, 0.3, 0.5])).is_err());
    assert!(FiniteDistribution::new(vec![0.5, 0.4]).is_err());
}

#[test]
fn l1_and_total_variation() {
    let (p, q) = (bern(1.0), bern(0.0));
    assert_eq!(l1_distance(&p, &q).unwrap(), 2.0);
    assert_eq!(total_variation(&p, &q).unwrap(), 1.0);
    // with H = 1 the √2·H bound holds for total variation but not for Σ|p−q|
    let bound = 2f64.sqrt() * hellinger_sq(&p, &q).unwrap().sqrt();
    assert!(total_variation(&p, &q).unwrap() <= bound);
    assert!(l1_distance(&p, &q).unwrap() > bound);
}

#[test]
fn distance_inequalities_on_random_pairs() {
    let rows = run_suite(Suite::Pinsker, 5000, 3).unwrap();
    assert!(rows.iter().all(|r| r.pass));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distance_properties(seed in any::<u64>(), size in 2usize..7) {
        let mut rng = RngStream::new(seed, 0);
        let p = random_finite(&mut rng, size);
        let q = random_finite(&mut rng, size);
        let h = hellinger_sq(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - hellinger_sq(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert!(kl_div(&p, &q).unwrap() >= 0.0);
        prop_assert!(hellinger_sq(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!(kl_div(&p, &p).unwrap().abs() < 1e-12);
        let event: Vec<bool> = (0..size).map(|_| rng.bernoulli(0.5)).collect();
        let c = pinsker_check(&p, &q, &event).unwrap();
        prop_assert!(c.tv_holds && c.high_prob_holds);
    }
}

#[test]
fn one_flip_transcript() {
    let tree = DecisionTree::flip(0, DecisionTree::Leaf, DecisionTree::Leaf);
    let d = transcript_distribution(&tree, &[BiasDistribution::point(0.3).unwrap()]).unwrap();
    assert!((d.probs()[0] - 0.3).abs() < 1e-15);
    assert!((d.probs()[1] - 0.7).abs() < 1e-15);
}

#[test]
fn product_formula_matches_sequential() {
    let mut rng = RngStream::new(40, 0);
    for _ in 0..500 {
        let tree = random_tree(&mut rng);
        let dists: Vec<BiasDistribution> = (0..tree.coin_count()).map(|_| random_bias_distribution(&mut rng)).collect();
        let a = transcript_distribution(&tree, &dists).unwrap();
        let b = transcript_distribution_sequential(&tree, &dists).unwrap();
        let total: f64 = a.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn simulated_transcripts_match() {
    let mut rng = RngStream::new(41, 0);
    let tree = DecisionTree::random(&mut rng, 2, 3);
    let dists = [
        BiasDistribution::from_pairs(&[(0.2, 0.5), (0.9, 0.5)]).unwrap(),
        BiasDistribution::from_pairs(&[(0.6, 0.3), (0.4, 0.7)]).unwrap(),
    ];
    let exact = transcript_distribution(&tree, &dists).unwrap();
    let sim = simulate_transcript(&tree, &dists, 1_000_000, &mut rng).unwrap();
    assert!(total_variation(&exact, &sim).unwrap() <= 0.01);
}

#[test]
fn reduction_examples() {
    let mut rng = RngStream::new(42, 0);
    let a = BiasDistribution::from_pairs(&[(0.7, 0.4), (0.9, 0.6)]).unwrap();
    let b = BiasDistribution::point(0.2).unwrap();
    let tree = DecisionTree::random(&mut rng, 1, 4);
    let r = verify_reduction(&tree, &a, &b).unwrap();
    assert!((r.full - r.per_coin_sum()).abs() < 1e-15);
    for _ in 0..20 {
        let tree = random_tree(&mut rng);
        let r = verify_reduction(&tree, &a, &a).unwrap();
        assert!(r.full.abs() < 1e-15 && r.per_coin_sum().abs() < 1e-15);
        let k = verify_reduction_kl(&tree, &a, &a, 0.3, 0.01).unwrap();
        assert!(k.full.abs() < 1e-15 && k.per_coin.iter().all(|h| h.abs() < 1e-15));
    }
    let rows = run_suite(Suite::Reduction, 1000, 9).unwrap();
    assert!(rows.iter().all(|r| r.lhs <= r.rhs + 1e-12));
}

#[test]
fn kl_reduction_precondition() {
    let tree = DecisionTree::flip(0, DecisionTree::Leaf, DecisionTree::Leaf);
    let a = BiasDistribution::point(0.8).unwrap();
    let b = BiasDistribution::point(0.2).unwrap();
    assert!(matches!(verify_reduction_kl(&tree, &a, &b, 0.1, 0.1), Err(Error::EpsilonTooLarge { .. })));
    let rows = run_suite(Suite::ReductionKl, 1000, 10).unwrap();
    assert!(rows.iter().all(|r| r.pass));
}

fn stop_at_one(n_max: usize) -> StoppingRule {
    let mut g = Triangle::zeros(n_max);
    for (n, k) in g.cells().collect::<Vec<_>>() {
        g.set(n, k, if n >= 1 { 1.0 } else { 0.0 });
    }
    StoppingRule::new(g).unwrap()
}

#[test]
fn single_flip_rule_hellinger() {
    let (rho, eps, delta) = (0.2, 0.02, 0.3);
    let rule = stop_at_one(3);
    let h_of = |w: f64| w * 0.8 + (1.0 - w) * 0.2;
    let (p, q) = (h_of(rho), h_of(rho + eps));
    let want = 1.0 - (p * q).sqrt() - ((1.0 - p) * (1.0 - q)).sqrt();
    assert!((rule_hellinger_exact(&rule, rho, eps, delta).unwrap() - want).abs() < 1e-15);
    assert_eq!(rule_hellinger_exact(&rule, rho, 0.0, delta).unwrap(), 0.0);
}

#[test]
fn linear_functional_examples() {
    let rule = stop_at_one(1);
    let sure = MomentTable::new(&BiasDistribution::point(1.0).unwrap(), 1);
    let never = MomentTable::new(&BiasDistribution::point(0.0).unwrap(), 1);
    let rho = 0.2;
    let f = rule_hellinger_linear_functional(&rule, &sure, &never, rho);
    assert!((f - 1.0 / (rho * (1.0 - rho))).abs() < 1e-12);
    let fair = MomentTable::new(&BiasDistribution::point(0.5).unwrap(), 1);
    assert_eq!(rule_hellinger_linear_functional(&rule, &fair, &fair, rho), 0.0);
}

#[test]
fn rule_hellinger_matches_simulation() {
    // large ε so the sampling error is small next to H²
    let (rho, eps, delta) = (0.2, 0.3, 0.3);
    let mut rng = RngStream::new(43, 0);
    let rule = random_rule(&mut rng, 4);
    let exact = rule_hellinger_exact(&rule, rho, eps, delta).unwrap();
    let sample = |w: f64, rng: &mut RngStream| {
        let runs = 1_000_000;
        let mut counts = vec![0u64; Triangle::len_for(4)];
        for _ in 0..runs {
            let bias = if rng.bernoulli(w) { 0.5 + delta } else { 0.5 - delta };
            let (mut n, mut k) = (0usize, 0usize);
            loop {
                let g = rule.gamma(n, k);
                if g >= 1.0 || (g > 0.0 && rng.uniform() < g) {
                    break;
                }
                k += rng.bernoulli(bias) as usize;
                n += 1;
            }
            counts[Triangle::index(n, k)] += 1;
        }
        counts.iter().map(|&c| c as f64 / runs as f64).collect::<Vec<_>>()
    };
    let p = sample(rho, &mut rng);
    let q = sample(rho + eps, &mut rng);
    let mc = hellinger_sq_raw(&p, &q);
    assert!((mc - exact).abs() <= 0.05 * exact + 2e-4, "mc {mc} exact {exact}");
}

#[test]
fn advice_form_examples() {
    // never reaches the last row
    let (rho, eps, delta) = (0.1, 0.005, 0.3);
    let form = hellinger_form_with_advice(&stop_at_one(3), rho, eps, delta).unwrap();
    assert_eq!(form.last_row, 0.0);
    // a one-flip rule lives entirely on the last row
    let form = hellinger_form_with_advice(&stop_at_one(1), rho, eps, delta).unwrap();
    assert_eq!(form.interior, 0.0);
    let (p, m) = (0.5 + delta, 0.5 - delta);
    let mid = rho + eps / 2.0;
    let by_hand: f64 = [(p, m), (1.0 - p, 1.0 - m)]
        .iter()
        .map(|&(hp, hm)| (mid * hp + (1.0 - mid) * hm) * (hp / rho + hm) / (rho * hp + (1.0 - rho) * hm))
        .sum();
    assert!((form.last_row - by_hand).abs() < 1e-12);
}

#[test]
fn advice_form_tracks_exact() {
    let mut rng = RngStream::new(44, 0);
    for _ in 0..300 {
        let n_max = 1 + rng.below(12);
        let rule = random_rule(&mut rng, n_max);
        let rho = if rng.bernoulli(0.5) { 0.05 } else { 0.2 };
        let eps = rho * (0.001 + 0.099 * rng.uniform());
        let delta = 0.05 + 0.4 * rng.uniform();
        let exact = advice_hellinger_exact(&rule, rho, eps, delta).unwrap();
        let form = hellinger_form_with_advice(&rule, rho, eps, delta).unwrap().total();
        let ratio = exact / (eps * eps * form);
        assert!((0.1..=1.0 / 6.0).contains(&ratio), "{ratio}");
    }
}

#[test]
fn mutual_information_examples() {
    for n in 1..50 {
        assert_eq!(mutual_info_per_sample(n, 0.1, 0.0, 0.3).unwrap(), 0.0);
    }
    for rho in [0.01, 0.05, 0.2] {
        for n in 1..300 {
            let mi = mutual_info_per_sample(n, rho, rho / 2.0, 0.3).unwrap();
            assert!(mi >= 0.0);
            assert!(mi <= mutual_info_upper_bound(n, rho, rho / 2.0, 0.3) * (1.0 + 1e-12));
        }
    }
    let (a, _) = mutual_info_argmax(0.1, 0.05, 0.3, 300).unwrap();
    let (b, _) = mutual_info_argmax(0.01, 0.005, 0.3, 300).unwrap();
    let (c, _) = mutual_info_argmax(0.001, 0.0005, 0.3, 300).unwrap();
    assert!(a < b && b < c, "{a} {b} {c}");
    let bin = binomial_distribution(40, 0.3).unwrap();
    assert!((bin.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn mutual_information_deep() {
    // log-space evaluation stays finite far past f64 binomial range
    let v = mutual_info_per_sample(5000, 0.01, 0.005, 0.3).unwrap();
    assert!(v.is_finite() && v >= 0.0);
}
