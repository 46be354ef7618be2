mod common;

use common::*;
use dsem_sheaf::dsem::simulate;
use dsem_sheaf::io::{parse_model, read_data};
use dsem_sheaf::sheaf_builder::{ArChoice, DsemSheaf, DsemSheafOptions};
use dsem_sheaf::subsystems::{
    check_subsystem, in_closed_sets, invariant_sets, DsemDag, FiniteDyn, SubsystemCheck,
};
use dsem_sheaf::topology::consistency_radius;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn dag() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=6usize).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0..n), 0..10)))
}

fn table(max: usize) -> impl Strategy<Value = Vec<usize>> {
    (1..=max).prop_flat_map(|n| proptest::collection::vec(0..n, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn in_closed_sets_form_a_lattice((n, raw) in dag()) {
        let edges: Vec<(&str, &str)> = raw.iter().filter(|(a, b)| a != b).map(|&(a, b)| (NAMES[a], NAMES[b])).collect();
        let dag = DsemDag::from_edges(&NAMES[..n], &edges).unwrap();
        let sets = in_closed_sets(&dag).unwrap();
        let full = (1u64 << dag.len()) - 1;
        prop_assert!(sets.contains(&0));
        prop_assert!(sets.contains(&full));
        let brute: Vec<u64> = (0..=full).filter(|&s| {
            dag.edges().iter().all(|&(u, v)| s & (1 << v) == 0 || s & (1 << u) != 0)
        }).collect();
        let mut got = sets.clone();
        got.sort_unstable();
        prop_assert_eq!(got, brute);
        for &x in &sets {
            prop_assert!(dag.is_in_closed(x));
            for &y in &sets {
                prop_assert!(sets.contains(&(x | y)));
                prop_assert!(sets.contains(&(x & y)));
            }
        }
    }

    #[test]
    fn invariant_sets_match_brute_force(t in table(8)) {
        let f = FiniteDyn::new(t.clone()).unwrap();
        let n = t.len();
        let mut got = invariant_sets(&f, 12).unwrap();
        got.sort_unstable();
        let brute: Vec<u64> = (0..1u64 << n).filter(|&s| (0..n).all(|i| s & (1 << i) == 0 || s & (1 << t[i]) != 0)).collect();
        prop_assert_eq!(got, brute);
    }

    #[test]
    fn subsystem_check_is_sound(t in table(7), seed in any::<u64>()) {
        let n = t.len();
        let f = FiniteDyn::new(t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rand::Rng::random_range(&mut rng, 1..=n);
        // Surjective: the first m states cover the codomain.
        let p: Vec<usize> = (0..n).map(|s| if s < m { s } else { rand::Rng::random_range(&mut rng, 0..m) }).collect();
        match check_subsystem(&f, &p, m).unwrap() {
            SubsystemCheck::Subsystem { g } => {
                for s in 0..n {
                    prop_assert_eq!(g[p[s]], p[f.apply(s)]);
                }
            }
            SubsystemCheck::Witness { x, y } => {
                prop_assert_eq!(p[x], p[y]);
                prop_assert_ne!(p[f.apply(x)], p[f.apply(y)]);
            }
        }
    }

    #[test]
    fn noiseless_simulations_are_sections(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = realize(&random_spec(&mut rng, false), &mut rng);
        let n = 9;
        let data = simulate(&spec, n, 0.0, seed, &[]).unwrap();
        let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Dynamics)).unwrap();
        let a = d.induced_assignment(&data, &spec).unwrap();
        prop_assert!(consistency_radius(&d.sheaf, &a).unwrap() <= 1e-10);
    }

    #[test]
    fn ties_cover_every_input_copy_once(seed in any::<u64>(), k in 0..3usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, true);
        let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(8).ar(ArChoice::Uniform(k))).unwrap();
        let inputs: usize = d.netlist.parts.iter().map(|p| p.inputs().count()).sum();
        let mut seen = std::collections::HashSet::new();
        for g in &d.ties {
            for s in &g.slots[1..] {
                prop_assert_eq!(s.len, g.slots[0].len);
                prop_assert!(seen.insert(*s));
            }
        }
        prop_assert_eq!(seen.len(), inputs);
    }

    #[test]
    fn log_center_has_zero_mean(values in proptest::collection::vec(proptest::option::weighted(0.8, 0.01f64..1e3), 2..20)) {
        prop_assume!(values.iter().flatten().count() > 0);
        let model = parse_model(r#"{"variables": [{"name": "x", "transform": "log_center"}], "paths": []}"#).unwrap();
        let mut csv = String::from("time,x\n");
        for (t, v) in values.iter().enumerate() {
            match v {
                Some(v) => csv.push_str(&format!("{t},{v}\n")),
                None => csv.push_str(&format!("{t},NA\n")),
            }
        }
        let data = read_data(csv.as_bytes(), &model).unwrap();
        let observed: Vec<f64> = (0..values.len()).filter_map(|t| data.table.get(0, t)).collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        prop_assert!(mean.abs() <= 1e-9);
        for (t, v) in values.iter().enumerate() {
            if let Some(v) = v {
                let back = data.stats[0].invert(data.table.get(0, t).unwrap());
                prop_assert!((back - v).abs() <= 1e-9 * v);
            }
        }
    }
}
