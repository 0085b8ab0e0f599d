use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use covpack::cost::LinearCost;
use covpack::dist_cover;
use covpack::instances::{
    gen_cmip, gen_fractional, gen_hypergraph_bmatching, gen_wvc, read_instance, write_instance, CmipOptions,
    CoveringInstance, Entry,
};
use covpack::oracles::{exact_bmatching, exact_vertex_cover};
use covpack::poset::{build_poset, check_packing, raise_maximally, sequential_pack, verify_ratio};
use covpack::relax::{distance_oracle, phi, relaxation_count, step, stepsize_cmip};
use covpack::sequential::{sequential_cover, SelectionPolicy};
use covpack::sim::{self, SeededSource};
use covpack::star::{StarProtocol, StarVariant};

fn cost_of(inst: &CoveringInstance) -> LinearCost {
    LinearCost::new(inst.costs().to_vec())
}

/// One constraint of arity 1 to 3, feasible at its caps.
fn constraint() -> impl Strategy<Value = CoveringInstance> {
    (
        prop::collection::vec((0.25f64..4.0, 0.5f64..10.0, prop::option::of(1u32..=5), any::<bool>()), 1..=3),
        0.5f64..12.0,
    )
        .prop_filter_map("infeasible at caps", |(vars, demand)| {
            let n = vars.len();
            let entries = vars.iter().enumerate().map(|(j, v)| Entry { cons: 0, var: j, coef: v.0 }).collect();
            let costs = vars.iter().map(|v| v.1).collect();
            let bounds = vars.iter().map(|v| v.2.map(f64::from)).collect();
            let integer: Vec<usize> = (0..n).filter(|&j| vars[j].3).collect();
            let inst = CoveringInstance::new(n, 1, entries, vec![demand], costs, bounds, &integer).ok()?;
            inst.infeasible_constraints().is_empty().then_some(inst)
        })
}

fn partial_x(inst: &CoveringInstance, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..inst.n_vars())
        .map(|j| {
            let v: f64 = rng.random_range(0.0..inst.upper_bounds()[j].unwrap_or(6.0) * 1.2);
            if rng.random_bool(0.3) {
                v.floor()
            } else {
                v
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instance_json_round_trips(n in 1usize..30, m in 1usize..40, rho in 1usize..4, seed: u64) {
        let inst = gen_cmip(n, m, rho, seed, &CmipOptions::default()).unwrap();
        prop_assert_eq!(read_instance(&write_instance(&inst)).unwrap(), inst);
    }

    #[test]
    fn generators_are_pure(n in 2usize..30, m in 1usize..40, seed: u64) {
        prop_assert_eq!(gen_cmip(n, m, 3, seed, &CmipOptions::default()).unwrap(), gen_cmip(n, m, 3, seed, &CmipOptions::default()).unwrap());
        prop_assert_eq!(gen_wvc(n, 0.2, 1.0..=9.0, seed), gen_wvc(n, 0.2, 1.0..=9.0, seed));
    }

    #[test]
    fn generator_shapes(n in 4usize..30, m in 1usize..30, rho in 2usize..5, seed: u64) {
        prop_assert!(gen_wvc(n, 0.3, 1.0..=9.0, seed).rho() <= 2);
        let packing = gen_hypergraph_bmatching(n.max(rho), m, rho, 1..=3, seed).unwrap();
        prop_assert!(packing.covering().rho() <= rho);
        prop_assert!(packing.is_b_matching());
    }

    #[test]
    fn stepsize_never_exceeds_distance(inst in constraint(), seed: u64) {
        let x = partial_x(&inst, seed);
        prop_assume!(!inst.is_satisfied(0, &x));
        let view = inst.constraint(0);
        let beta = stepsize_cmip(&x, &view).unwrap().beta;
        prop_assert!(beta <= distance_oracle(&x, &view).unwrap() + 1e-9);
    }

    #[test]
    fn repeated_steps_lower_potential(inst in constraint(), seed: u64) {
        let mut x = partial_x(&inst, seed);
        let view = inst.constraint(0);
        let cost = cost_of(&inst);
        let mut steps = 0;
        let mut last = phi(&x, &view).unwrap();
        while !inst.is_satisfied(0, &x) {
            let b = stepsize_cmip(&x, &view).unwrap();
            let before = x.clone();
            step(&mut x, &view, b.beta, &cost);
            prop_assert!(x.iter().zip(&before).all(|(a, b)| a >= b));
            let now = phi(&x, &view).unwrap();
            prop_assert!(now < last, "potential {} -> {}", last, now);
            last = now;
            steps += 1;
            prop_assert!(steps <= relaxation_count(&view));
        }
        prop_assert_eq!(last, 0);
    }

    #[test]
    fn sequential_cover_is_within_rho(n in 5usize..40, m in 1usize..60, rho in 1usize..5, seed: u64) {
        let inst = gen_fractional(n, m, rho, seed).unwrap();
        let run = sequential_cover(&inst, &SelectionPolicy::Random(seed)).unwrap();
        let poset = build_poset(&run.log, &inst).unwrap();
        let pack = sequential_pack(&inst, &poset, &poset.elements()).unwrap();
        let r = verify_ratio(&inst, &run.rounded.x, &pack.y).unwrap();
        prop_assert!(r.cost_x <= inst.rho() as f64 * r.value_y + 1e-6);
    }

    #[test]
    fn packing_stays_feasible_and_below_any_cover(n in 5usize..30, m in 1usize..40, rho in 1usize..4, seed: u64) {
        let inst = gen_fractional(n, m, rho, seed).unwrap();
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let poset = build_poset(&run.log, &inst).unwrap();
        let mut y = vec![0.0; inst.n_cons()];
        for &s in poset.elements().iter().rev() {
            y[s] = raise_maximally(&inst, &y, s).unwrap();
            prop_assert!(check_packing(&inst, &y).is_ok());
        }
        let value: f64 = inst.demands().iter().zip(&y).map(|(w, v)| w * v).sum();
        // Weak duality against random feasible covers.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let cover: Vec<f64> = run.rounded.x.iter().map(|v| v + rng.random_range(0.0..2.0)).collect();
            prop_assert!(value <= inst.cost_of(&cover) + 1e-9);
        }
    }

    #[test]
    fn linear_extensions_agree(n in 5usize..30, m in 1usize..40, rho in 1usize..4, seed: u64) {
        let inst = gen_fractional(n, m, rho, seed).unwrap();
        let run = sequential_cover(&inst, &SelectionPolicy::Random(seed)).unwrap();
        let poset = build_poset(&run.log, &inst).unwrap();
        let reference = sequential_pack(&inst, &poset, &poset.elements()).unwrap().y;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..10 {
            let order = poset.random_linear_extension(&mut rng);
            prop_assert_eq!(&sequential_pack(&inst, &poset, &order).unwrap().y, &reference);
        }
    }

    #[test]
    fn zero_one_packings_are_integral(nv in 4usize..20, m in 1usize..30, rho in 2usize..4, seed: u64) {
        let packing = gen_hypergraph_bmatching(nv.max(rho), m, rho, 1..=4, seed).unwrap();
        let inst = packing.covering();
        let run = sequential_cover(inst, &SelectionPolicy::Random(seed)).unwrap();
        let poset = build_poset(&run.log, inst).unwrap();
        let y = sequential_pack(inst, &poset, &poset.elements()).unwrap().y;
        prop_assert!(y.iter().all(|v| v.fract() == 0.0), "{:?}", y);
    }

    #[test]
    fn runs_are_deterministic(n in 5usize..40, seed: u64) {
        let inst = gen_wvc(n, 0.2, 1.0..=9.0, seed);
        let a = dist_cover::wvc(&inst, &mut SeededSource::new(seed), 10_000).unwrap();
        let b = dist_cover::wvc(&inst, &mut SeededSource::new(seed), 10_000).unwrap();
        prop_assert_eq!(a.trace, b.trace);
        prop_assert_eq!(a.log, b.log);
    }

    #[test]
    fn node_state_depends_only_on_its_ball(n in 8usize..40, seed: u64, rounds in 1u64..8, center_pick: usize) {
        let inst = gen_wvc(n, 0.15, 1.0..=9.0, seed);
        let net = StarProtocol::network(&inst);
        let center = center_pick % n;
        let protocol = StarProtocol::new(&inst, StarVariant::VertexCover, false);
        let full = sim::run(&protocol, &net, &mut SeededSource::new(seed), rounds).unwrap();
        let (ball, keep) = net.ball(center, rounds as usize);
        let sub = restrict(&inst, &keep);
        let protocol = StarProtocol::new(&sub, StarVariant::VertexCover, false);
        let local = sim::run(&protocol, &ball, &mut SeededSource::new(seed), rounds).unwrap();
        let here = keep.iter().position(|&v| v == center).unwrap();
        prop_assert_eq!(full.states[center].x, local.states[here].x);
        prop_assert_eq!(full.states[center].finished_round, local.states[here].finished_round);
    }

    #[test]
    fn exact_optima_ignore_relabeling(n in 3usize..12, seed: u64) {
        let inst = gen_wvc(n, 0.4, 1.0..=9.0, seed);
        prop_assume!(inst.n_cons() > 0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let edges: Vec<(usize, usize)> = (0..inst.n_cons()).rev().map(|i| {
            let r = inst.row(i);
            (perm[r[0].0], perm[r[1].0])
        }).collect();
        let mut costs = vec![0.0; n];
        for j in 0..n {
            costs[perm[j]] = inst.costs()[j];
        }
        let permuted = CoveringInstance::vertex_cover(costs, &edges).unwrap();
        let (a, b) = (exact_vertex_cover(&inst).unwrap().value, exact_vertex_cover(&permuted).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);

        let packing = gen_hypergraph_bmatching(6, n, 3, 1..=2, seed).unwrap();
        let cov = packing.covering();
        let rows: Vec<(Vec<usize>, f64)> = (0..cov.n_cons()).rev()
            .map(|i| (cov.row(i).iter().map(|&(j, _)| j).collect(), cov.demands()[i]))
            .collect();
        let caps: Vec<u32> = cov.costs().iter().map(|&c| c as u32).collect();
        let reordered = covpack::instances::PackingInstance::b_matching(&caps, &rows).unwrap();
        let (a, b) = (exact_bmatching(&packing).unwrap().value, exact_bmatching(&reordered).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn edge_packing_is_below_exact_cover(n in 3usize..16, seed: u64) {
        let inst = gen_wvc(n, 0.4, 1.0..=9.0, seed);
        prop_assume!(inst.n_cons() > 0);
        let run = dist_cover::wvc(&inst, &mut SeededSource::new(seed), 10_000).unwrap();
        let mut y = vec![0.0; inst.n_cons()];
        for r in &run.log.records {
            y[r.cons] += r.beta;
        }
        prop_assert!(check_packing(&inst, &y).is_ok());
        let value: f64 = y.iter().sum();
        let opt = exact_vertex_cover(&inst).unwrap().value;
        prop_assert!(value <= opt + 1e-9);
        prop_assert!(run.cost(&inst) <= 2.0 * value + 1e-9);
    }
}

/// The vertex-cover instance induced on `keep`, with variables renumbered
/// in the order given.
fn restrict(inst: &CoveringInstance, keep: &[usize]) -> CoveringInstance {
    let mut index = vec![usize::MAX; inst.n_vars()];
    for (k, &v) in keep.iter().enumerate() {
        index[v] = k;
    }
    let edges: Vec<(usize, usize)> = (0..inst.n_cons())
        .map(|i| inst.row(i))
        .filter(|r| index[r[0].0] != usize::MAX && index[r[1].0] != usize::MAX)
        .map(|r| (index[r[0].0], index[r[1].0]))
        .collect();
    let costs = keep.iter().map(|&v| inst.costs()[v]).collect();
    CoveringInstance::vertex_cover(costs, &edges).unwrap()
}
