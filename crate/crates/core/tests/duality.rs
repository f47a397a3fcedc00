use facelift_core::dual::{dual_objective_mc, optimize_dual, primal_objective_mc, DualSearch};
use facelift_core::market::Exposure;
use facelift_core::stats::pooled_se;
use facelift_core::{
    ControlParams, EndowmentSpec, FaceliftEnvelope, MarketParams, Model, PathBundle, UtilitySpec,
};

fn benchmark() -> Model {
    Model::new(
        UtilitySpec::Power(0.5),
        MarketParams::new(0.06, 0.2).unwrap(),
        EndowmentSpec::logistic(0.0, 0.0, 2.0, 0.0, 1.0).unwrap(),
    )
}

fn small_search() -> DualSearch {
    DualSearch {
        n_paths: 40_000,
        pilot_paths: 10_000,
        ..DualSearch::default()
    }
}

#[test]
fn primal_never_beats_dual() {
    let m = benchmark();
    let t = 0.1;
    let p_bundle = PathBundle::new(t, 16, 20_000, 1).unwrap();
    let d_bundle = PathBundle::new(t, 16, 20_000, 2).unwrap();
    for theta in [-1.0, 0.0, 1.0] {
        let p = primal_objective_mc(t, 1.0, Exposure::constant(theta), &m, &p_bundle).unwrap();
        for nu in [-1.0, 1.0] {
            for z in [0.5, 2.0] {
                let d =
                    dual_objective_mc(t, z, &ControlParams::constant(nu), &m, &d_bundle).unwrap();
                let excess = p.estimate.mean - z - d.estimate.mean;
                assert!(
                    excess <= 3.0 * pooled_se(&p.estimate, &d.estimate),
                    "θ={theta} ν={nu} z={z}: {excess}"
                );
            }
        }
    }
}

#[test]
fn optimized_dual_is_convex_in_z() {
    let m = benchmark();
    let zs = [1.0, 2.0, 3.0];
    let vals: Vec<_> = zs
        .iter()
        .map(|&z| {
            optimize_dual(0.1, z, &m, 20, 5, &small_search())
                .unwrap()
                .best
                .estimate
        })
        .collect();
    let second = vals[0].mean - 2.0 * vals[1].mean + vals[2].mean;
    let width = vals.iter().map(|e| e.ci_width()).fold(0.0, f64::max);
    assert!(
        second >= -3.0 * width,
        "second difference {second}, CI width {width}"
    );
}

#[test]
fn optimized_dual_sits_between_facelift_and_naive() {
    let m = benchmark();
    let best = optimize_dual(0.05, 2.0, &m, 20, 3, &small_search())
        .unwrap()
        .best;
    let env = FaceliftEnvelope::new(m.utility, 1.0, 0.0).unwrap();
    assert!(best.estimate.mean < env.naive(2.0).unwrap() - 3.0 * best.estimate.ci_width());
    assert!(best.estimate.mean > env.eval(2.0).unwrap() - 0.05);
}
