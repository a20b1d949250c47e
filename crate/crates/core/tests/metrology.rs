use approx::assert_relative_eq;
use vqi_core::metrology::{
    alignment_budget, baseline_from_sites, dispersion_time, length_mismatch_time, total_alignment,
    DispersionSpec, FiberPath, SiteCoordinates,
};

const PS: f64 = 1e-12;

#[test]
fn raw_inputs_reproduce_the_quoted_budget() {
    let a = FiberPath::with_default_index(17_550.0, 0.01).unwrap();
    let b = FiberPath::with_default_index(17_550.0, 0.0).unwrap();
    let disp = DispersionSpec::new(18.2, 0.5, 17.55).unwrap();
    let budget = alignment_budget(&a, &b, &disp, 18_000.0).unwrap();

    for (got, quoted) in [
        (budget.length_term / PS, 49.0),
        (budget.dispersion_term / PS, 319.0),
        (budget.t_ab_total / PS, 323.0),
        (budget.rho_bar, 5.4e-6),
    ] {
        assert!((got / quoted - 1.0).abs() < 0.01, "{got} vs {quoted}");
    }
    assert_eq!(budget.length_term, length_mismatch_time(&a, &b));
    assert_eq!(budget.dispersion_term, dispersion_time(&disp));
}

#[test]
fn quadrature_is_symmetric_and_monotone() {
    for (x, y) in [(49.0, 319.0), (0.0, 10.0), (123.0, 7.0)] {
        let ab = total_alignment(x * PS, y * PS, 18_000.0).unwrap();
        let ba = total_alignment(y * PS, x * PS, 18_000.0).unwrap();
        assert_eq!(ab.t_ab_total, ba.t_ab_total);
        let more = total_alignment((x + 1.0) * PS, y * PS, 18_000.0).unwrap();
        assert!(more.t_ab_total > ab.t_ab_total);
        let more = total_alignment(x * PS, (y + 1.0) * PS, 18_000.0).unwrap();
        assert!(more.t_ab_total > ab.t_ab_total);
    }
}

#[test]
fn rho_bar_scales_inversely_with_distance() {
    let near = total_alignment(49.0 * PS, 319.0 * PS, 9_000.0).unwrap();
    let far = total_alignment(49.0 * PS, 319.0 * PS, 18_000.0).unwrap();
    assert_relative_eq!(near.rho_bar, 2.0 * far.rho_bar, max_relative = 1e-12);
}

#[test]
fn site_baseline_is_symmetric() {
    let a = SiteCoordinates::new(46.17, 6.14, 400.0).unwrap();
    let b = SiteCoordinates::new(46.26, 6.35, 450.0).unwrap();
    let ab = baseline_from_sites(&a, &b).unwrap();
    let ba = baseline_from_sites(&b, &a).unwrap();
    assert_relative_eq!(ab.r_ab, ba.r_ab, max_relative = 1e-12);
    assert_relative_eq!(ab.alpha_deg, ba.alpha_deg, max_relative = 1e-9);
    let geom = ab.with_rho_bar(5.4e-6).unwrap();
    assert_eq!(geom.r_ab(), ab.r_ab);
}
