mod common;

use rmits_core::fitter::{fit_grid, fit_unit};
use rmits_core::io::month_labels;
use rmits_core::simulation::SimScenario;
use rmits_core::{fit_panel, ChangePointWindow, FitOptions, Panel};

fn scenario(units: usize, slope: f64, replicates: usize, seed: u64) -> SimScenario {
    SimScenario::slope_change(units, 60, 0.1, slope, replicates, seed).unwrap()
}

#[test]
fn strong_single_unit_change_is_located_exactly() {
    let s = scenario(1, 0.45, 200, 11);
    let hits = (0..s.replicates)
        .filter(|&i| {
            let panel = s.draw_panel(i).unwrap();
            fit_panel(&panel, &s.window, &s.fit).unwrap().tau_hat == 30
        })
        .count();
    assert!(hits >= 180, "{hits} of 200");
}

#[test]
fn profile_is_the_sum_of_unit_log_likelihoods() {
    let s = scenario(3, 0.2, 1, 5);
    let panel = s.draw_panel(0).unwrap();
    let fit = fit_panel(&panel, &s.window, &s.fit).unwrap();
    for point in &fit.profile {
        let total: f64 = (0..panel.units())
            .map(|j| fit_unit(panel.series(j), point.q, &s.fit).unwrap().loglik)
            .sum();
        assert!(
            (point.loglik - total).abs() < 1e-9 * total.abs(),
            "q={}",
            point.q
        );
    }
    let best = fit
        .profile
        .iter()
        .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
        .unwrap();
    assert_eq!(best.q, fit.tau_hat);
}

#[test]
fn parallel_and_serial_grids_agree() {
    let s = scenario(5, 0.1, 1, 8);
    let panel = s.draw_panel(0).unwrap();
    let serial = fit_grid(&panel, &s.window, &s.fit, false).unwrap();
    let parallel = fit_grid(&panel, &s.window, &s.fit, true).unwrap();
    assert_eq!(serial.fits(), parallel.fits());
}

#[test]
fn time_labels_do_not_change_the_fit() {
    let s = scenario(2, 0.3, 1, 21);
    let plain = s.draw_panel(0).unwrap();
    let dated = Panel::new(
        plain.unit_names().to_vec(),
        plain.values().to_vec(),
        month_labels(2015, 6, plain.len()),
    )
    .unwrap();
    let a = fit_panel(&plain, &s.window, &s.fit).unwrap();
    let b = fit_panel(&dated, &s.window, &s.fit).unwrap();
    assert_eq!(a.tau_hat, b.tau_hat);
    assert_eq!(a.profile, b.profile);
    assert_eq!(a.unit_fits, b.unit_fits);
}

#[test]
fn unit_order_does_not_change_the_change_point() {
    let s = scenario(4, 0.15, 1, 2);
    let panel = s.draw_panel(0).unwrap();
    let mut names = panel.unit_names().to_vec();
    let mut values = panel.values().to_vec();
    names.reverse();
    values.reverse();
    let reversed = Panel::from_series(names, values).unwrap();
    let a = fit_panel(&panel, &s.window, &s.fit).unwrap();
    let b = fit_panel(&reversed, &s.window, &s.fit).unwrap();
    assert_eq!(a.tau_hat, b.tau_hat);
    for (p, r) in a.profile.iter().zip(&b.profile) {
        assert!((p.loglik - r.loglik).abs() < 1e-9 * p.loglik.abs());
    }
}

#[test]
fn iterations_rarely_lower_the_log_likelihood() {
    let s = scenario(1, 0.2, 300, 17);
    let opts = FitOptions::default();
    let mut monotone = 0;
    let mut total = 0;
    let mut worst = 0.0f64;
    for i in 0..s.replicates {
        let panel = s.draw_panel(i).unwrap();
        for q in [26, 30, 34] {
            let fit = fit_unit(panel.series(0), q, &opts).unwrap();
            assert!(fit.converged);
            total += 1;
            if fit.is_monotone(1e-4) {
                monotone += 1;
            }
            for w in fit.loglik_trace.windows(2) {
                worst = worst.max(w[0] - w[1]);
            }
        }
    }
    assert!(
        monotone as f64 >= 0.95 * total as f64,
        "{monotone} of {total}"
    );
    assert!(worst < 0.01, "largest drop {worst}");
}

#[test]
fn slope_change_estimate_is_centred_on_truth() {
    let s = scenario(1, 0.2, 2_000, 31);
    let window = ChangePointWindow::range(30, 30, 60).unwrap();
    let est: Vec<f64> = (0..s.replicates)
        .map(|i| {
            let panel = s.draw_panel(i).unwrap();
            fit_panel(&panel, &window, &s.fit).unwrap().unit_fits[0]
                .theta
                .slope_shift
        })
        .collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        (mean - 0.2).abs() < 3.0 * sd / n.sqrt(),
        "mean {mean}, sd {sd}"
    );
}
