use homog_core::env::derive_seed;
use homog_core::stats::Moments;
use homog_core::sweep::{run_sweep, summary_path, sweep_to_files, RunConfig, CSV_HEADER};
use homog_core::{ConductanceLaw, Method};
use statrs::distribution::{ContinuousCDF, Normal};

fn two_point() -> ConductanceLaw {
    ConductanceLaw::two_point(1.0, 9.0, 0.5).unwrap()
}

fn sweep(method: Method, sizes: Vec<usize>, reps: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(method, 2, two_point());
    cfg.sizes = sizes;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg
}

/// Mean of the runs and the spread of a single run.
fn spread(xs: &[f64]) -> (f64, f64) {
    let m = Moments::of(xs);
    (m.mean, m.variance.sqrt())
}

#[test]
fn hier_work_is_n_times_volume() {
    let rows = run_sweep(&sweep(Method::Hier, (3..=7).collect(), 2, 5)).unwrap();
    let consts: Vec<f64> = (3..=7)
        .map(|n| {
            let w: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| r.work_units as f64)
                .collect();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            mean / (n as f64 * 4f64.powi(n as i32))
        })
        .collect();
    let fitted = (consts.iter().map(|c| c.ln()).sum::<f64>() / consts.len() as f64).exp();
    for (n, c) in (3..).zip(&consts) {
        assert!(
            (0.5 * fitted..=1.5 * fitted).contains(c),
            "n = {n}: C = {c:.0}, fitted {fitted:.0}"
        );
    }
}

#[test]
fn methods_agree() {
    let hier = run_sweep(&sweep(Method::Hier, vec![7], 4, 11)).unwrap();
    let para = run_sweep(&sweep(Method::Parabolic, vec![9], 8, 12)).unwrap();
    let mut mc = sweep(Method::Mc, vec![100], 4, 13);
    mc.paths = 25_000;
    let mc = run_sweep(&mc).unwrap();
    let est: Vec<(&str, (f64, f64))> = [("hier", &hier), ("parabolic", &para), ("mc", &mc)]
        .into_iter()
        .map(|(name, rows)| {
            let xs: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
            (name, spread(&xs))
        })
        .collect();
    let z = Normal::standard().inverse_cdf(0.975);
    for (i, (a, (ma, sa))) in est.iter().enumerate() {
        for (b, (mb, sb)) in &est[i + 1..] {
            let joint = z * (sa * sa + sb * sb).sqrt();
            assert!(
                (ma - mb).abs() <= joint,
                "{a} {ma:.4} and {b} {mb:.4} differ by more than {joint:.4}"
            );
        }
    }
}

#[test]
fn files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep(Method::Parabolic, vec![3, 4, 5], 3, derive_seed(1, 2));
    let strip = |path: &std::path::Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    sweep_to_files(&cfg, &a).unwrap();
    let mut serial = cfg.clone();
    serial.workers = Some(1);
    sweep_to_files(&serial, &b).unwrap();
    assert_eq!(strip(&a)[0], CSV_HEADER[..8].join(","));
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(
        std::fs::read_to_string(summary_path(&a)).unwrap(),
        std::fs::read_to_string(summary_path(&b)).unwrap()
    );
}
