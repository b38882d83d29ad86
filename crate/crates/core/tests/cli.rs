use std::path::Path;
use std::process::{Command, Output};

use mollify::lab::{cmd_curvature, deviation_sweep, ExperimentConfig, NOISE_FLOOR};
use mollify::modelzoo::flat;

fn mollify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mollify"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn entries(dir: &Path) -> Vec<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn repeated_runs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = ["a.csv", "b.csv"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = mollify(&[
                "curvature",
                "--geometry",
                "hyperbolic:n=2",
                "--m",
                "31",
                "--t",
                "0.08",
                "--seed",
                "9",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.starts_with("chart,node,x0,x1,min_sec,max_sec"));
}

#[test]
fn numbers_carry_twelve_significant_digits() {
    let o = mollify(&[
        "deviation",
        "--geometry",
        "flat:n=2",
        "--m",
        "81",
        "--t-min",
        "0.05",
        "--t-max",
        "0.125",
        "--t-count",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(o.stdout).unwrap();
    let first = csv.lines().nth(1).unwrap();
    let t = first.split(',').next().unwrap();
    assert_eq!(t, "5.00000000000e-2");
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sphere instead\ngeometry = sphere:R=1\n").unwrap();
    let o = mollify(&[
        "cover-check",
        "--geometry",
        "flat",
        "--m",
        "21",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(summary_value(&text, "n"), Some("2"));
    assert_eq!(summary_value(&text, "covered"), Some("true"));
}

#[test]
fn config_errors_exit_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.csv");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "m = 41\nwidth = 3\n").unwrap();
    let o = mollify(&[
        "curvature",
        "--out",
        out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(entries(dir.path()), vec!["bad.cfg".to_string()]);

    for args in [
        &["curvature", "--geometry", "torus"][..],
        &["deviation", "--t-count", "4"][..],
        &["deviation", "--t-max", "0.9"][..],
        &["deviation", "--beta", "0.5"][..],
        // default sweep starts below two spacings at m = 81
        &["deviation", "--geometry", "flat"][..],
    ] {
        assert_eq!(mollify(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn uncovered_atlas_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let atlas = dir.path().join("gap.atlas");
    std::fs::write(
        &atlas,
        "[atlas]\ndim = 2\nregion = a:1.5\n\n[chart a]\nradius = 1\ngenerator = flat\n\n[chart b]\nradius = 1\ngenerator = flat\n\n[transition]\nsource = a\ntarget = b\nmap = affine A=1,0,0,1 b=1.5,0\n\n[transition]\nsource = b\ntarget = a\nmap = affine A=1,0,0,1 b=-1.5,0\n",
    )
    .unwrap();
    let o = mollify(&[
        "cover-check",
        "--atlas",
        atlas.to_str().unwrap(),
        "--m",
        "21",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(summary_value(&text, "covered"), Some("false"));
}

#[test]
fn lemma_suite_passes_from_the_command_line() {
    let o = mollify(&["lemmas", "--seed", "3"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn sphere_curvature_matches_the_constant() {
    let cfg = ExperimentConfig {
        geometry: "sphere:R=1,r=1".into(),
        m: 81,
        ..ExperimentConfig::default()
    };
    let table = cmd_curvature(&cfg).unwrap().table.unwrap();
    let xs = [table.column("x0").unwrap(), table.column("x1").unwrap()];
    let (lo, hi) = (
        table.column("min_sec").unwrap(),
        table.column("max_sec").unwrap(),
    );
    let mut checked = 0;
    for i in 0..lo.len() {
        if xs[0][i].hypot(xs[1][i]) < 0.5 && !lo[i].is_nan() {
            assert!((lo[i] - 1.0).abs() < 1e-2 && (hi[i] - 1.0).abs() < 1e-2);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn flat_deviation_sits_at_the_noise_floor() {
    for (n, m, t_min) in [(2, 81, 0.05), (3, 41, 0.1)] {
        let cfg = ExperimentConfig {
            m,
            t_min: Some(t_min),
            t_max: Some(0.25),
            t_count: 5,
            ..ExperimentConfig::default()
        };
        let res = deviation_sweep(&flat(n).unwrap(), &cfg).unwrap();
        for r in &res.records {
            assert!(r.riem_excess <= 1e-12 && r.sec_excess <= 1e-12);
        }
        assert!(res.sec_fit.is_none() && res.riem_fit.is_none());
        assert!(res.records.iter().all(|r| r.sec_excess <= NOISE_FLOOR));
    }
}
