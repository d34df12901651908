use relu_rate_lab::bounds::{kl_n_product, kl_per_sample};
use relu_rate_lab::montecarlo::{estimate_l2_distance_sq, network_fn, verify_kl_consistency};
use relu_rate_lab::packing::{build_f0_ensemble, factorize_deep, separation_closed_form, Codebook};

#[test]
fn ensemble_networks_match_closed_form_distances() {
    let ens = build_f0_ensemble(20, 2, 0.8, 1.5).unwrap();
    let pairs = [(0, 1), (0, 50), (3, 140)];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let (fi, fj) = (ens.to_network(i), ens.to_network(j));
        let closed = separation_closed_form(ens.member(i), ens.member(j), &ens).unwrap();
        let est = estimate_l2_distance_sq(network_fn(&fi), network_fn(&fj), 20, 400_000, k as u64).unwrap();
        assert!(est.within(closed), "{} vs {closed}", est.mean);
        assert!(closed >= ens.separation_floor());
    }
}

#[test]
fn deep_members_are_the_same_functions() {
    let ens = build_f0_ensemble(10, 1, 1.0, 1.0).unwrap();
    let depth = 3;
    let vs = 3.0;
    let deep: Vec<_> = (0..2)
        .map(|i| factorize_deep(ens.member(i), depth, vs, ens.scale_t).unwrap().to_network())
        .collect();
    let d = estimate_l2_distance_sq(network_fn(&deep[0]), network_fn(&deep[1]), 10, 400_000, 9).unwrap();
    let closed = separation_closed_form(ens.member(0), ens.member(1), &ens).unwrap();
    assert!(d.within(closed));
    let same = estimate_l2_distance_sq(network_fn(&deep[0]), network_fn(&ens.to_network(0)), 10, 10_000, 1).unwrap();
    assert!(same.mean < 1e-24);
}

#[test]
fn kl_of_a_packing_pair() {
    let ens = build_f0_ensemble(10, 1, 1.0, 1.0).unwrap();
    let (a, b) = (ens.member(0), ens.member(1));
    let closed = separation_closed_form(a, b, &ens).unwrap();
    assert!((kl_n_product(closed, 1.0, 10) - 10.0 * kl_per_sample(closed, 1.0)).abs() < 1e-15);
    let check = verify_kl_consistency(|x| ens.eval(a, x), |x| ens.eval(b, x), 10, Some(closed), 1.0, 10, 1_000_000, 4)
        .unwrap();
    assert!(check.ok, "{check:?}");
    assert!((check.closed_kl - 5.0 * closed).abs() < 1e-12);
}

#[test]
fn codebook_and_ensemble_files() {
    let ens = build_f0_ensemble(30, 3, 1.0, 2.0).unwrap();
    let text = ens.codebook.to_text();
    assert_eq!(Codebook::from_text(&text).unwrap(), ens.codebook);
    let json = serde_json::to_value(ens.to_doc()).unwrap();
    for key in ["d", "m", "tau", "vf", "scale_t", "codewords"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["codewords"][0].as_str().unwrap().len(), 30);
}
