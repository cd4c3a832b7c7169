use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wbary_cli::formats::{self, InputKind};
use wbary_core::eval::{empirical_moments, SampleSet};
use wbary_core::{BoxDomain, GridDensity, GridHistogram, MeasureKind, RegularGrid};

fn wbary(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wbary"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.trim().strip_prefix('=').map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn cloud(dir: &Path, name: &str, cx: f64, cy: f64) {
    let mut body = String::from("x,y\n");
    for i in 0..12 {
        let t = i as f64 * std::f64::consts::FRAC_PI_6;
        body.push_str(&format!("{},{}\n", cx + 0.3 * t.cos(), cy + 0.2 * t.sin()));
    }
    write(dir, name, &body);
}

fn uniform_density(dir: &Path, n: usize) -> PathBuf {
    let grid = RegularGrid::new(BoxDomain::unit(2).unwrap(), vec![n, n]).unwrap();
    let p = dir.join("uniform.txt");
    formats::write_density(&p, &GridDensity::uniform(grid)).unwrap();
    p
}

#[test]
fn barycenter_smoke_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    cloud(dir.path(), "a.csv", 0.0, 0.0);
    let out = wbary(
        dir.path(),
        &["barycenter", "--input", "pointcloud_csv,a.csv", "--set", "grid=8x8", "--set", "iterations=5"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "k,eta,objective,kl_step,max_potential,wall_ms,residual_0");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("5,"));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(value(&summary, "best_k") <= 5.0);
    assert!(value(&summary, "best_objective") > 0.0);
    let rho = formats::read_density(&dir.path().join("barycenter.txt")).unwrap();
    assert_eq!(rho.grid().shape(), &[8, 8]);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    cloud(dir.path(), "a.csv", 0.0, 0.0);
    cloud(dir.path(), "b.csv", 1.0, 0.5);
    write(
        dir.path(),
        "run.cfg",
        "input = pointcloud_csv,a.csv,3\ninput = pointcloud_csv,b.csv,1\ngrid = 8x8\niterations = 50\nout_trace = t.csv\n",
    );
    let out = wbary(dir.path(), &["barycenter", "--config", "run.cfg", "--set", "iterations=3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("normalized"), "{}", stderr(&out));
    let trace = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);
    assert!(trace.lines().next().unwrap().ends_with("residual_0,residual_1"));

    let dump = wbary(dir.path(), &["barycenter", "--config", "run.cfg", "--dump-config"]);
    let text = stdout(&dump);
    assert!(text.contains("input = pointcloud_csv,a.csv,3"));
    assert!(text.contains("margin = 0.25"));
    assert!(text.contains("iterations = 50"));
}

#[test]
fn malformed_csv_cites_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.csv", "x,y\n0,0\n1,1\n2,two\n");
    let out = wbary(dir.path(), &["barycenter", "--input", "pointcloud_csv,bad.csv", "--set", "grid=8x8"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("bad.csv:4:"), "{}", stderr(&out));
    write(dir.path(), "short.csv", "x,y\n0,0\n1\n");
    let out = wbary(dir.path(), &["barycenter", "--input", "pointcloud_csv,short.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("short.csv:3:"), "{}", stderr(&out));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = wbary(dir.path(), &["barycenter"]);
    assert_eq!(out.status.code(), Some(2));
    let out = wbary(dir.path(), &["barycenter", "--input", "bitmap,a.png"]);
    assert_eq!(out.status.code(), Some(2));
    let out = wbary(dir.path(), &["barycenter", "--set", "grid=8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gaussian_identical_covariances_stay_put() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g1.txt", "0 0\n2 0.5\n0.5 1\n");
    write(dir.path(), "g2.txt", "1 1\n2 0.5\n0.5 1\n");
    let out = wbary(
        dir.path(),
        &["gaussian", "--input", "gaussian_txt,g1.txt", "--input", "gaussian_txt,g2.txt", "--set", "iterations=20", "--set", "gaussian_init=arithmetic_mean"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 22);
    for line in trace.lines().skip(1) {
        let bw: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(bw < 1e-12, "{line}");
    }
    let g = formats::read_gaussian(&dir.path().join("covariance.txt")).unwrap();
    assert_eq!(g.mean(), &[0.5, 0.5]);
}

#[test]
fn gaussian_rejects_bad_covariance() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.txt", "0 0\n1 2\n2 1\n");
    let out = wbary(dir.path(), &["gaussian", "--input", "gaussian_txt,g.txt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("invalid covariance"), "{}", stderr(&out));
}

#[test]
fn sample_is_deterministic_and_validates_count() {
    let dir = tempfile::tempdir().unwrap();
    uniform_density(dir.path(), 8);
    let out = wbary(dir.path(), &["sample", "--density", "uniform.txt", "-n", "0", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(2));
    for name in ["s1.csv", "s2.csv"] {
        let out = wbary(dir.path(), &["sample", "--density", "uniform.txt", "-n", "500", "--seed", "4", "--out", name]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read(dir.path().join("s1.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("s2.csv")).unwrap());
    let s = formats::read_point_cloud(&dir.path().join("s1.csv")).unwrap();
    assert_eq!(s.len(), 500);
}

#[test]
fn sampled_moments_match_quadrature() {
    let dir = tempfile::tempdir().unwrap();
    let grid = RegularGrid::new(BoxDomain::new(vec![-1.0, 0.0], vec![2.0, 1.0]).unwrap(), vec![24, 16]).unwrap();
    let rho = GridDensity::from_log_fn(grid, |x| -2.0 * (x[0] - 0.3).powi(2) - (x[1] - 0.6).powi(2)).unwrap();
    formats::write_density(&dir.path().join("rho.txt"), &rho).unwrap();
    let n = 20_000;
    let out = wbary(dir.path(), &["sample", "--density", "rho.txt", "-n", &n.to_string(), "--out", "s.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let atoms = formats::read_point_cloud(&dir.path().join("s.csv")).unwrap();
    let s = SampleSet::new(2, atoms.points().to_vec(), 0).unwrap();
    let (mean, cov) = empirical_moments(&s).unwrap();
    let (q_mean, q_cov) = rho.moments();
    let widths = rho.grid().widths().to_vec();
    for a in 0..2 {
        // uniform jitter inside a cell adds h²/12 to each variance
        let var = q_cov[(a, a)] + widths[a] * widths[a] / 12.0;
        let se = (var / n as f64).sqrt();
        assert!((mean[a] - q_mean[a]).abs() < 5.0 * se, "axis {a}");
        let se_var = var * (2.0 / n as f64).sqrt();
        assert!((cov[(a, a)] - var).abs() < 5.0 * se_var, "axis {a}");
    }
}

#[test]
fn ot_examples() {
    let dir = tempfile::tempdir().unwrap();
    cloud(dir.path(), "a.csv", 0.2, 0.1);
    let out = wbary(dir.path(), &["ot", "--source", "pointcloud_csv,a.csv", "--target", "pointcloud_csv,a.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(value(&stdout(&out), "w2_squared"), 0.0);

    uniform_density(dir.path(), 32);
    write(dir.path(), "c.csv", "x,y\n0.5,0.5\n");
    let out = wbary(dir.path(), &["ot", "--source", "pointcloud_csv,c.csv", "--target", "density_grid,uniform.txt"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let w2 = value(&stdout(&out), "w2_squared");
    assert!((w2 - 1.0 / 6.0).abs() < 1.0 / 1024.0, "{w2}");

    write(dir.path(), "d3.csv", "x,y,z\n0.5,0.5,0.5\n");
    let out = wbary(dir.path(), &["ot", "--source", "pointcloud_csv,d3.csv", "--target", "density_grid,uniform.txt"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));
}

#[test]
fn csv_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "three.csv", "x,y\n0,0\n1,0\n0,1\n");
    match formats::ingest(InputKind::PointCloudCsv, &p).unwrap() {
        MeasureKind::Discrete(m) => {
            assert_eq!(m.len(), 3);
            assert!(m.weights().iter().all(|&w| w == 1.0 / 3.0));
        }
        other => panic!("{other:?}"),
    }
    let p = write(dir.path(), "w.csv", "x,y,z,w\n0,0,0,1\n1,0,0,3\n");
    let m = formats::read_point_cloud(&p).unwrap();
    assert_eq!(m.dim(), 3);
    assert_eq!(m.weights(), &[0.25, 0.75]);
    let p = write(dir.path(), "hdr.csv", "a,b\n0,0\n");
    assert_eq!(formats::read_point_cloud(&p).unwrap_err().exit_code(), 3);
}

#[test]
fn pgm_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "img.pgm", "P2\n# two by three\n2 3\n255\n0 10\n0 0\n30 0\n");
    let h = formats::read_pgm(&p).unwrap();
    assert_eq!(h.grid().shape(), &[2, 3]);
    // column 1, top row has mass 10/40; column 0, bottom row 30/40
    assert_eq!(h.weights()[3 + 2], 0.25);
    assert_eq!(h.weights()[0], 0.75);

    let mut bytes = b"P5\n2 3\n255\n".to_vec();
    bytes.extend([0u8, 10, 0, 0, 30, 0]);
    let p5 = dir.path().join("img5.pgm");
    fs::write(&p5, bytes).unwrap();
    assert_eq!(formats::read_pgm(&p5).unwrap(), h);

    let p = write(dir.path(), "zero.pgm", "P2\n2 2\n255\n0 0\n0 0\n");
    let err = formats::read_pgm(&p).unwrap_err();
    assert!(err.to_string().contains("zero-mass input"), "{err}");
}

#[test]
fn grid_file_errors_cite_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "h.txt", "kind=histogram\n2 2 2\n0 1 0 1\n0.25 0.25\n0.25 x\n");
    let err = formats::read_histogram(&p).unwrap_err();
    assert!(err.to_string().contains("h.txt:5:"), "{err}");
    let p = write(dir.path(), "d.txt", "kind=histogram\n2 2 2\n0 1 0 1\n0 0 0 0\n");
    let err = formats::read_density(&p).unwrap_err();
    assert!(err.to_string().contains("d.txt:1:"), "{err}");
    let p = write(dir.path(), "short.txt", "2 2 2\n0 1 0 1\n0.5 0.5 0\n");
    let err = formats::read_histogram(&p).unwrap_err();
    assert!(err.to_string().contains("expected 4 cell values"), "{err}");
}

#[test]
fn round_trips_are_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let grid = RegularGrid::new(BoxDomain::new(vec![-0.3, 0.1, 2.0], vec![1.7, 0.9, 2.3]).unwrap(), vec![3, 4, 5]).unwrap();
    let rho = GridDensity::from_log_fn(grid.clone(), |x| (3.0 * x[0]).sin() - x[1] * x[2] / 7.0).unwrap();
    let p = dir.path().join("rho.txt");
    formats::write_density(&p, &rho).unwrap();
    assert_eq!(formats::read_density(&p).unwrap(), rho);

    let hist = GridHistogram::from_unnormalized(grid, (0..60).map(|i| ((i * 7) % 11) as f64 / 3.0).collect()).unwrap();
    let p = dir.path().join("hist.txt");
    formats::write_histogram(&p, &hist).unwrap();
    assert_eq!(formats::read_histogram(&p).unwrap(), hist);

    let m = formats::read_point_cloud(&write(dir.path(), "w.csv", "x,y,w\n0.1,0.7,1\n0.3,-2.9,2\n1e-9,4,7\n")).unwrap();
    let p = dir.path().join("m.csv");
    formats::write_measure(&p, &m).unwrap();
    assert_eq!(formats::read_point_cloud(&p).unwrap(), m);

    let g = formats::read_gaussian(&write(dir.path(), "g.txt", "0.1 -0.2\n0.3 0.1\n0.1 0.7\n")).unwrap();
    let p = dir.path().join("g2.txt");
    formats::write_gaussian(&p, g.mean(), g.cov()).unwrap();
    assert_eq!(formats::read_gaussian(&p).unwrap(), g);
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    cloud(dir.path(), "a.csv", 0.0, 0.0);
    cloud(dir.path(), "b.csv", 0.7, 0.2);
    let run = |name: &str, threads: &str| {
        let out = wbary(
            dir.path(),
            &[
                "barycenter", "--input", "pointcloud_csv,a.csv", "--input", "pointcloud_csv,b.csv",
                "--set", "grid=16x16", "--set", "iterations=8", "--set", &format!("out_trace={name}"),
                "--set", &format!("threads={threads}"),
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(dir.path().join(name)).unwrap()
    };
    let a = run("t1.csv", "1");
    assert_eq!(a, run("t2.csv", "1"));
    assert_eq!(a, run("t3.csv", "3"));
}
