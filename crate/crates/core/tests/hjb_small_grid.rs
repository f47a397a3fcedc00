use facelift_core::germ::{germ_mc_estimate, optimize_germ, GermSearch};
use facelift_core::hjb::{solve_dual_hjb, HjbGrid};
use facelift_core::{ControlParams, EndowmentSpec, MarketParams, Model, PathBundle, UtilitySpec};

#[test]
fn large_z_slope_tracks_the_clipped_germ() {
    let m = Model::new(
        UtilitySpec::Power(0.5),
        MarketParams::from_lambda(0.3).unwrap(),
        EndowmentSpec::logistic(0.0, 0.0, 2.0, 0.0, 1.0).unwrap(),
    );
    let g = HjbGrid::new(
        (-10.0, 6.0),
        81,
        ((0.01f64).ln(), (1000.0f64).ln()),
        81,
        0.0025,
        0.05,
        20.0,
        1e-6,
    )
    .unwrap();
    let sol = solve_dual_hjb(&g, &m, &[0.05]).unwrap();
    let slope = sol.large_z_slope(0.05, 0.0).unwrap();
    let search = GermSearch {
        nu_max: 20.0,
        kappa_max: 1e3,
        n_paths: 20_000,
        n_steps: 100,
    };
    let germ = optimize_germ(0.05, &m.endowment, 20, 9, &search)
        .unwrap()
        .estimate
        .mean;
    // the slope is a finite-z secant, so only the order of magnitude and
    // the bracket [inf φ, φ(η₀)] are checked
    assert!(slope > 0.0 && slope < m.endowment.phi0(), "{slope}");
    assert!(
        (slope / germ).ln().abs() < 0.5f64.ln().abs(),
        "slope {slope} vs germ {germ}"
    );
    let zero = germ_mc_estimate(
        0.05,
        &m.endowment,
        &ControlParams::zero(),
        &PathBundle::new(0.05, 100, 20_000, 9).unwrap(),
    )
    .unwrap();
    assert!(slope < zero.mean);
}
