use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_precond-lab"));
    cmd.env_remove("PRECOND_LAB_SEED");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path
}

const MLP_CONFIG: &str = "\
model.kind = mlp
model.hidden = 4
model.activation = tanh
optim.kind = adam
optim.alpha = 0.01
run.steps = 40
run.seed = 11
data.source = synthetic
data.features = 3
data.samples = 50
data.scales = 1;10;100
";

#[test]
fn train_output_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), MLP_CONFIG);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = run(bin()
            .arg("train")
            .arg("--config")
            .arg(&cfg)
            .arg("--output")
            .arg(&out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("steps.csv")).unwrap());
        assert!(out.join("summary.json").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert_eq!(text.lines().next(), Some("step,loss,grad_norm,dist_to_opt"));
    assert_eq!(text.lines().count(), 42);
}

#[test]
fn seed_flag_beats_environment_beats_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), MLP_CONFIG);
    let steps = |args: &[&str], env: Option<&str>, name: &str| {
        let out = tmp.path().join(name);
        let mut cmd = bin();
        cmd.args(args)
            .arg("train")
            .arg("--config")
            .arg(&cfg)
            .arg("--output")
            .arg(&out);
        if let Some(e) = env {
            cmd.env("PRECOND_LAB_SEED", e);
        }
        assert!(run(&mut cmd).status.success());
        fs::read(out.join("steps.csv")).unwrap()
    };
    let config_seed = steps(&[], None, "c");
    let env_seed = steps(&[], Some("5"), "e");
    let flag_seed = steps(&["--seed", "5"], Some("999"), "f");
    assert_ne!(config_seed, env_seed);
    assert_eq!(env_seed, flag_seed);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(1));
    assert_eq!(
        run(bin().args(["verify", "no-such-suite"])).status.code(),
        Some(1)
    );
    assert_eq!(
        run(bin().args(["train", "--config", "/nonexistent/run.cfg"]))
            .status
            .code(),
        Some(1)
    );

    let bad = write_config(tmp.path(), "model.kind = quadratic\nmodel.colour = blue\n");
    let o = run(bin().arg("train").arg("--config").arg(&bad));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let diverging = write_config(
        tmp.path(),
        "model.dim = 4\nmodel.kappa = 10\noptim.alpha = 10\nrun.steps = 500\n",
    );
    let o = run(bin()
        .arg("train")
        .arg("--config")
        .arg(&diverging)
        .arg("--output")
        .arg(tmp.path().join("d")));
    assert_eq!(o.status.code(), Some(2));

    let o = run(bin()
        .args(["sweep", "--config"])
        .arg(&diverging)
        .args(["--alphas", "0.1,abc"]));
    assert_eq!(o.status.code(), Some(1));

    let o = run(bin().args(["diagnose", "--data", "/nonexistent.csv"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn diagnose_reads_csv_and_drops_targets() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("d.csv");
    let mut body = String::from("a,b,y\n");
    for j in 0..30 {
        let j = j as f64;
        body.push_str(&format!("{},{},{}\n", j.sin(), 1000.0 * j.cos() + 50.0, j));
    }
    fs::write(&path, body).unwrap();
    let o = run(bin()
        .arg("diagnose")
        .arg("--data")
        .arg(&path)
        .args(["--targets", "y"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("2 features, 30 samples"));
    assert!(text.contains("equilibrated"));
    assert!(text.contains(": holds"));
}

#[test]
fn sweep_writes_a_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sweep");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "model.dim = 5\nmodel.kappa = 20\nrun.steps = 100\noutput.dir = {}\n",
            out.display()
        ),
    );
    let o = run(bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .args(["--alphas", "0.01,0.1,1,10"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("<- best") && stdout.contains("diverged"));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn verify_single_suite() {
    let o = run(bin().args(["verify", "rmsprop-closed-form"]));
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1/1 suites passed"));
}

#[test]
fn shipped_configs_train() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("cfg") {
            continue;
        }
        seen += 1;
        let out = tmp.path().join(path.file_stem().unwrap());
        let o = run(bin()
            .arg("train")
            .arg("--config")
            .arg(&path)
            .arg("--output")
            .arg(&out));
        assert!(
            o.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(seen >= 4);
}
