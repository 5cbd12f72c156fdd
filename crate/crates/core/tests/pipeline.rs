use bdd_core::io::{read_report, write_report, Precision};
use bdd_core::simulation::{default_grid, draw_sample, run_monte_carlo};
use bdd_core::{estimate_grid, BandwidthRule, DgpSpec, Euclidean, FitConfig, McConfig};

#[test]
fn estimates_track_the_effect_along_the_boundary() {
    let dgp = DgpSpec::calibrated();
    let sample = draw_sample(&dgp, 5000, 17).unwrap();
    let boundary = dgp.boundary().unwrap();
    let grid = default_grid(9, 40.0).unwrap();
    let cfg = FitConfig::default();
    let est = estimate_grid(&sample, &boundary, &grid, &Euclidean, &cfg, 5).unwrap();

    assert_eq!(est.failures(), 0);
    let q = est.band_quantile.unwrap();
    assert!(q > 1.96 && q < 4.0, "{q}");
    for p in &est.points {
        let s = p.outcome.as_ref().unwrap();
        let tau = dgp.tau(p.eval_pt);
        // loose: a handful of standard errors plus room for smoothing bias
        assert!((s.theta_hat - tau).abs() < 5.0 * s.se + 0.3, "{:?}: {} vs {tau}", p.eval_pt, s.theta_hat);
        let (lo, hi) = s.band.unwrap();
        assert!(lo <= s.ci.lower && s.ci.upper <= hi);
        assert!(s.n_eff[0] > 0 && s.n_eff[1] > 0);
    }

    let again = estimate_grid(&sample, &boundary, &grid, &Euclidean, &cfg, 5).unwrap();
    assert_eq!(again.band_quantile, est.band_quantile);
}

#[test]
fn fixed_bandwidth_is_applied_at_every_point() {
    let dgp = DgpSpec::calibrated();
    let sample = draw_sample(&dgp, 3000, 4).unwrap();
    let boundary = dgp.boundary().unwrap();
    let grid = default_grid(5, 30.0).unwrap();
    let cfg = FitConfig {
        bandwidth: BandwidthRule::Fixed { h: 20.0 },
        ..FitConfig::default()
    };
    let est = estimate_grid(&sample, &boundary, &grid, &Euclidean, &cfg, 1).unwrap();
    for p in &est.points {
        assert_eq!(p.h, Some(20.0));
        let s = p.outcome.as_ref().unwrap();
        assert!((s.ci.quantile - 1.959963984540054).abs() < 1e-12);
    }
}

#[test]
fn report_round_trips_at_full_precision() {
    let cfg = McConfig {
        dgp: DgpSpec::calibrated(),
        n: 1500,
        reps: 6,
        grid: default_grid(5, 30.0).unwrap().points,
        fit: FitConfig {
            band_draws: 1000,
            ..FitConfig::default()
        },
        seed: 9,
    };
    let report = run_monte_carlo(&cfg).unwrap();
    let mut buf = Vec::new();
    write_report(&report, &mut buf, Precision::Full).unwrap();
    let table = read_report(buf.as_slice()).unwrap();

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
    assert_eq!(table.rows.len(), report.rows.len());
    for (got, want) in table.rows.iter().zip(&report.rows) {
        assert_eq!(got.point_id, want.point_id);
        assert!(close(got.b1, want.b.x1) && close(got.b2, want.b.x2));
        assert!(close(got.h, want.h));
        assert!(close(got.bias, want.bias));
        assert!(close(got.sd, want.sd));
        assert!(close(got.rmse, want.rmse));
        assert!(close(got.ec, want.ec));
        assert!(close(got.il, want.il));
    }
    assert!(close(table.uniform_ec, report.uniform.ec));
    assert!(close(table.uniform_il, report.uniform.il));

    let mut human = Vec::new();
    write_report(&report, &mut human, Precision::Human).unwrap();
    let coarse = read_report(human.as_slice()).unwrap();
    for (got, want) in coarse.rows.iter().zip(&report.rows) {
        assert!((got.rmse - want.rmse).abs() <= 1e-5 * want.rmse.abs());
    }
}
