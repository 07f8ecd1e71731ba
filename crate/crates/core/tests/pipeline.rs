use gradval_core::ablation::{joint_ablation, perturb_patch, spatial_utility, variable_std, PerturbationSpec};
use gradval_core::attribution::{gradient_times_input, spatial_importance, time_average, AttributionConfig};
use gradval_core::gaming::{
    detector_d4, gaming_baseline, make_scenarios, run_gaming_experiment, AttackKind, Placement, ScenarioGrid, Scope,
};
use gradval_core::incentive::{overpayment, payment, shares};
use gradval_core::metrics::{gini, spearman};
use gradval_core::{
    make_desk_model, make_grid, make_linear_model, make_station_grid, named_location, synth_fields, GridConfig,
    TargetSpec,
};

#[test]
fn linear_gti_ranks_stations_like_mean_replace_ablation() {
    let g = make_grid(&GridConfig::default()).unwrap();
    let t = TargetSpec::new(&g, "berlin", named_location("berlin").unwrap(), "t2m").unwrap();
    let st = make_station_grid(&g, 4).unwrap();
    let (fields, clim) = synth_fields(41, &g, 8).unwrap();
    let sd = variable_std(&fields).unwrap();
    let m = make_linear_model(3, &g, &t).unwrap();
    let spec = PerturbationSpec::mean_replace(1);
    let (mut proxy, mut util) = (Vec::new(), Vec::new());
    for x in &fields {
        let y = m.forward(x).unwrap();
        let a = gradient_times_input(&m, x, clim.field()).unwrap();
        proxy.push(spatial_importance(&a, &st).unwrap());
        util.push(spatial_utility(&m, x, y, &st, &spec, &clim, &sd).unwrap().abs);
    }
    let rho = spearman(&time_average(&proxy).unwrap(), &time_average(&util).unwrap())
        .unwrap()
        .rho;
    assert!(rho >= 0.95, "rho = {rho}");
}

#[test]
fn linear_same_sign_disjoint_patches_add_up() {
    let g = make_grid(&GridConfig::default()).unwrap();
    let t = TargetSpec::new(&g, "zurich", named_location("zurich").unwrap(), "msl").unwrap();
    let st = make_station_grid(&g, 4).unwrap();
    let (fields, clim) = synth_fields(43, &g, 3).unwrap();
    let sd = variable_std(&fields).unwrap();
    let m = make_linear_model(5, &g, &t).unwrap();
    let spec = PerturbationSpec::mean_replace(1);
    for x in &fields {
        let y = m.forward(x).unwrap();
        let change: Vec<f64> = (0..st.len())
            .map(|p| {
                m.forward(&perturb_patch(x, &st, p, &spec, &clim, &sd).unwrap())
                    .unwrap()
                    - y
            })
            .collect();
        for sign in [1.0, -1.0] {
            let mut set: Vec<usize> = (0..st.len()).filter(|&p| sign * change[p] > 0.0).collect();
            set.sort_by(|&a, &b| change[b].abs().total_cmp(&change[a].abs()));
            set.truncate(5);
            let j = joint_ablation(&m, x, y, &st, &set, &spec, &clim, &sd).unwrap();
            assert!(!j.overlapping);
            let ratio = j.ratio.unwrap();
            assert!((ratio - 1.0).abs() <= 1e-9, "ratio {ratio}");
        }
    }
}

#[test]
fn self_calibrated_payment_matches_truth() {
    let u = [0.3, 0.0, 1.2, 4.5, 0.7, 0.7, 2.0];
    let alloc = payment(&u, 1000.0, "oracle").unwrap();
    assert!(alloc.is_valid());
    let o = overpayment(&alloc.shares, &shares(&u).unwrap()).unwrap();
    assert_eq!(o.total, 0.0);
    assert!((gini(&alloc.amounts).unwrap() / gini(&u).unwrap() - 1.0).abs() <= 1e-9);
}

#[test]
fn gaming_directions_on_the_desk_model() {
    let g = make_grid(&GridConfig::default()).unwrap();
    let t = TargetSpec::new(&g, "zurich", named_location("zurich").unwrap(), "t2m").unwrap();
    let st = make_station_grid(&g, 4).unwrap();
    let (fields, clim) = synth_fields(47, &g, 2).unwrap();
    let m = make_desk_model(9, &g, &t, 1).unwrap();
    let y: Vec<f64> = fields.iter().map(|x| m.forward(x).unwrap()).collect();
    let attr = AttributionConfig::ig(8);
    let base = gaming_baseline(&m, &fields, &y, &clim, &st, &attr).unwrap();
    let grid = |kind, pcts: Vec<f64>| ScenarioGrid {
        kind,
        n_attackers: vec![3],
        pcts,
        scopes: vec![Scope::AllSurface],
        placements: vec![Placement::Uniform],
        seeds: 4,
        base_seed: 11,
    };
    let attacker_d4 = |kind, pcts: Vec<f64>| -> Vec<(f64, f64, f64)> {
        let (sc, _) = make_scenarios(&grid(kind, pcts), &st, &t).unwrap();
        let out = run_gaming_experiment(&m, &fields, &y, &clim, &st, &t, &sc, &attr, &base).unwrap();
        sc.iter()
            .zip(&out)
            .map(|(s, o)| {
                let d4 = detector_d4(&o.baseline_mean, &o.attack_mean).unwrap();
                let mean = s.attackers.iter().map(|&a| d4[a]).sum::<f64>() / s.n_attackers() as f64;
                (s.pct, mean, o.inflation_ratio)
            })
            .collect()
    };

    for (_, d4, ratio) in attacker_d4(AttackKind::Inflate, vec![0.0]) {
        assert_eq!(ratio, 1.0);
        assert_eq!(d4, 0.0);
    }
    let inflated = attacker_d4(AttackKind::Inflate, vec![10.0, 50.0, 200.0]);
    let level = |p: f64| {
        let v: Vec<f64> = inflated.iter().filter(|r| r.0 == p).map(|r| r.1).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(level(10.0) <= level(50.0) && level(50.0) <= level(200.0));
    let spoofed = attacker_d4(AttackKind::Spoof, vec![0.0]);
    let spoof_mean = spoofed.iter().map(|r| r.1).sum::<f64>() / spoofed.len() as f64;
    assert!(spoof_mean <= 0.0, "spoof D4 {spoof_mean}");
}
