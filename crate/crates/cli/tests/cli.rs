use std::path::Path;
use std::process::{Command, Output};

fn looplab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_looplab"))
        .args(args)
        .current_dir(dir)
        .env_remove("LOOPLAB_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SUBCOMMANDS: [&str; 8] = [
    "fixed-point",
    "jacobian-check",
    "grad-limit",
    "autonomous-regimes",
    "stability-map",
    "anisotropy",
    "train",
    "eval",
];

#[test]
fn help_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for sub in SUBCOMMANDS {
        let o = looplab(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.contains("--out"), "{sub}");
        assert!(text.contains("[default:"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&looplab(p, &["no-such-command"])), 2);
    assert_eq!(code(&looplab(p, &["anisotropy", "--bogus", "1"])), 2);
    assert_eq!(code(&looplab(p, &["fixed-point", "--d", "0"])), 2);
    assert_eq!(
        code(&looplab(p, &["grad-limit", "--recall", "autonomous"])),
        2
    );
    std::fs::write(p.join("bad.cfg"), "nonsense = 3\n").unwrap();
    assert_eq!(code(&looplab(p, &["--config", "bad.cfg", "anisotropy"])), 2);
    assert_eq!(std::fs::read_dir(p).unwrap().count(), 1);
}

#[test]
fn failed_verification_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = looplab(
        dir.path(),
        &[
            "jacobian-check",
            "--trials",
            "2",
            "--tol",
            "1e-14",
            "--out",
            "j.csv",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn flags_override_config_and_manifest_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("run.cfg"),
        "# small run\nn = 50\nseed = 3\nsigmas = 1,2\n",
    )
    .unwrap();
    let o = looplab(
        p,
        &[
            "--config",
            "run.cfg",
            "anisotropy",
            "--n",
            "80",
            "--out",
            "a.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(p.join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("80")));

    let manifest = std::fs::read_to_string(p.join("a.csv.manifest")).unwrap();
    assert!(manifest.starts_with("subcommand=anisotropy\n"));
    assert!(manifest.contains("\nn=80\n") && manifest.contains("\nseed=3\n"));

    std::fs::create_dir(p.join("again")).unwrap();
    let o = looplab(
        p,
        &[
            "--config",
            "a.csv.manifest",
            "anisotropy",
            "--out",
            "again/a.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(p.join("again/a.csv")).unwrap(),
        csv.as_bytes()
    );

    let o = looplab(p, &["--config", "a.csv.manifest", "stability-map"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["anisotropy", "--n", "300", "--out"];
    let one = looplab(p, &[&args[..], &["one.csv"]].concat());
    assert_eq!(code(&one), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_looplab"))
        .args([&args[..], &["env.csv"]].concat())
        .current_dir(p)
        .env("LOOPLAB_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(p.join("one.csv")).unwrap(),
        std::fs::read(p.join("env.csv")).unwrap()
    );
}
