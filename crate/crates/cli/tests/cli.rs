use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gsplit_core::densify::max_gamma;
use gsplit_core::ply::{load_model, save_model};
use gsplit_core::scene::{box_shell, random_model, BoxShell};
use gsplit_core::{Gaussian, SplatModel};
use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn gsplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsplit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gsplit(args);
    assert!(
        out.status.success(),
        "gsplit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("report is JSON")
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn model(&self, name: &str, m: &SplatModel) -> String {
        let p = self.path(name);
        save_model(m, &p).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn out(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn shell() -> SplatModel {
    box_shell(&BoxShell {
        count: 3000,
        ..BoxShell::default()
    })
}

fn elongated() -> SplatModel {
    let gs = (0..10)
        .map(|i| {
            Gaussian::new(
                Vector3::new(i as f64, 0.0, 0.0),
                UnitQuaternion::from_euler_angles(0.1 * i as f64, 0.5, 0.0),
                Vector3::new(0.05 * (10 + 4 * i) as f64, 0.05, 0.03),
                0.5,
                vec![0.1, 0.2, 0.3],
            )
            .unwrap()
        })
        .collect();
    SplatModel::new(gs, 0).unwrap()
}

/// Plane-split spec; `strategy` is spliced in as raw JSON fields.
fn plane_spec(gap: f64, strategy: &str) -> String {
    format!(
        r#"{{"kind":"plane_split","plane":{{"normal":[0.5401,0.8316,0.0963],"d":0}},"gap":{gap},{strategy}}}"#
    )
}

#[test]
fn info_on_empty_model() {
    let f = Fixture::new();
    let input = f.model("empty.ply", &SplatModel::default());
    let out = ok(&["info", "--input", &input]);
    assert!(stdout(&out).starts_with("0 gaussians\n"), "{}", stdout(&out));
}

#[test]
fn info_reports_gamma_max() {
    let f = Fixture::new();
    let m = elongated();
    let input = f.model("m.ply", &m);
    let text = stdout(&ok(&["info", "--input", &input]));
    let line = text.lines().find(|l| l.starts_with("gamma max")).unwrap();
    let reported: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    let exact = max_gamma(&load_model(&input).unwrap());
    assert!((reported - exact).abs() < 1e-5, "{reported} vs {exact}");
    assert!(text.contains("10 gaussians"));
}

#[test]
fn corrupt_file_names_missing_property() {
    let f = Fixture::new();
    let path = f.path("bad.ply");
    std::fs::write(
        &path,
        "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
    )
    .unwrap();
    let out = gsplit(&["info", "--input", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("f_dc_0"), "{err}");
}

#[test]
fn move_edit_has_zero_interval_error() {
    let f = Fixture::new();
    let input = f.model("shell.ply", &shell());
    let spec = plane_spec(0.05, r#""strategy":"move""#);
    let report = json(&ok(&["edit", "--input", &input, "--spec", &spec, "--output", &f.out("o.ply")]));
    assert_eq!(report["e_i"].as_f64(), Some(0.0));
    assert!(report["W"].as_u64().unwrap() > 0);
}

#[test]
fn remove_edit_has_no_excess() {
    let f = Fixture::new();
    let input = f.model("shell.ply", &shell());
    let spec_path = f.path("spec.json");
    std::fs::write(&spec_path, plane_spec(0.05, r#""strategy":"remove""#)).unwrap();
    let report_path = f.out("report.json");
    ok(&[
        "edit", "--input", &input, "--spec", spec_path.to_str().unwrap(), "--output", &f.out("o.ply"),
        "--report", &report_path,
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["e_e"].as_f64().unwrap() <= 1e-3);
    assert!(report["removed"].as_u64().unwrap() > 0);
}

#[test]
fn bad_spec_fails() {
    let f = Fixture::new();
    let input = f.model("shell.ply", &shell());
    let spec = plane_spec(0.05, r#""strategy":"filter""#);
    let out = gsplit(&["edit", "--input", &input, "--spec", &spec, "--output", &f.out("o.ply")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("filter"));
}

fn bytes(p: &str) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let f = Fixture::new();
    let input = f.model("shell.ply", &shell());
    let spec = plane_spec(0.05, r#""strategy":"ours","repeat":3"#);
    let run = |tag: &str, threads: &str| {
        let out = f.out(&format!("o{tag}.ply"));
        let o = Command::new(env!("CARGO_BIN_EXE_gsplit"))
            .env("GSPLIT_THREADS", threads)
            .args(["edit", "--input", &input, "--spec", &spec, "--output", &out])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (bytes(&out), o.stdout)
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn homogenize_reaches_threshold() {
    let f = Fixture::new();
    let input = f.model("m.ply", &elongated());
    let output = f.out("h.ply");
    let report = json(&ok(&["homogenize", "--input", &input, "--output", &output, "--eta-gamma", "5"]));
    assert_eq!(report["exhausted"], false);
    let text = stdout(&ok(&["info", "--input", &output]));
    let line = text.lines().find(|l| l.starts_with("gamma max")).unwrap();
    let g: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(g <= 5.0);
}

#[test]
fn infinite_threshold_leaves_model_alone() {
    let f = Fixture::new();
    let input = f.model("m.ply", &elongated());
    for cmd in ["homogenize", "densify-points"] {
        let output = f.out(&format!("{cmd}.ply"));
        let report = json(&ok(&[cmd, "--input", &input, "--output", &output, "--eta-gamma", "inf"]));
        assert_eq!(report["split_rounds"], 0);
        assert_eq!(load_model(&output).unwrap(), load_model(&input).unwrap());
    }
}

#[test]
fn strict_fails_when_rounds_run_out() {
    let f = Fixture::new();
    let input = f.model("m.ply", &elongated());
    let args = ["homogenize", "--input", &input, "--output", &f.out("h.ply"), "--max-rounds", "1"];
    ok(&args);
    let mut strict = args.to_vec();
    strict.push("--strict");
    let out = gsplit(&strict);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rounds"));
}

fn vertex_count(path: &Path) -> usize {
    let data = std::fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&data);
    let line = text.lines().find(|l| l.starts_with("element vertex")).unwrap();
    line.rsplit(' ').next().unwrap().parse().unwrap()
}

#[test]
fn densify_exports_points() {
    let f = Fixture::new();
    let m = elongated();
    let input = f.model("m.ply", &m);
    let points = f.path("points.ply");
    ok(&[
        "densify-points", "--input", &input, "--output", &f.out("d.ply"), "--points",
        points.to_str().unwrap(), "--max-rounds", "20",
    ]);
    assert!(vertex_count(&points) >= m.len());
}

#[test]
fn verify_passes_and_repeats() {
    let f = Fixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = f.model("r.ply", &random_model(&mut rng, 50, 1));
    let args = ["verify", "--input", &input, "--seed", "7", "--mc-samples", "20000", "--count", "20"];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a.stdout, b.stdout);
    let report = json(&a);
    assert_eq!(report["passed"], true);
    assert!(report["max_second_residual"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn merge_pairs_undoes_gapless_split() {
    let f = Fixture::new();
    let m = shell();
    let input = f.model("shell.ply", &m);
    let spec = plane_spec(0.0, r#""strategy":"ours","repeat":2"#);
    let origins = f.out("origins.json");
    let edited = f.out("e.ply");
    let o = ok(&["edit", "--input", &input, "--spec", &spec, "--output", &edited, "--origins", &origins]);
    // children peaking above 1 cannot be stored exactly; the save reports them
    let note = String::from_utf8_lossy(&o.stderr);
    let clamped: usize = note
        .lines()
        .find_map(|l| l.strip_prefix("warning: "))
        .map_or(0, |l| l.split(' ').next().unwrap().parse().unwrap());
    let merged = f.out("m.ply");
    ok(&["merge-pairs", "--input", &edited, "--origins", &origins, "--output", &merged]);
    let back = load_model(&merged).unwrap();
    let orig = load_model(&input).unwrap();
    assert_eq!(back.len(), orig.len());
    let mut mismatched = 0;
    for (a, b) in back.gaussians.iter().zip(&orig.gaussians) {
        let ca = a.covariance().into_inner();
        let cb = b.covariance().into_inner();
        let same = (ca - cb).norm() <= 1e-5 * cb.norm()
            && (a.position - b.position).norm() <= 1e-5 * (1.0 + b.position.norm())
            && (a.opacity_mass - b.opacity_mass).abs() <= 1e-5 * b.opacity_mass;
        if !same {
            mismatched += 1;
        }
    }
    assert!(mismatched <= clamped, "{mismatched} mismatched, {clamped} clamped");
    assert!(mismatched * 100 < orig.len());
}
