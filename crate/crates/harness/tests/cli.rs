use std::path::Path;
use std::process::Command;

fn eggroll() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eggroll"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn help_exits_zero() {
    let out = eggroll().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["es-bench", "egg-train", "score-plot", "rank-decay", "rank-law", "microbench", "tune-threshold"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn bad_flag_prints_usage() {
    let out = eggroll().args(["rank-law", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.cfg");
    std::fs::write(&cfg, "seed = 1\nranks = 1, 2\nwibble = 3\n").unwrap();
    let out = eggroll()
        .args(["rank-decay", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("a.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("wibble"), "{err}");
    assert!(!dir.path().join("a.csv").exists());
}

#[test]
fn rank_decay_twice_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, "samples = 20000\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let st = eggroll()
            .args(["rank-decay", "--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("#schema=rank_decay/1\nr,frobenius_error\n"));
    assert!(text.lines().last().unwrap().starts_with("slope,"));
}

#[test]
fn egg_train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let st = eggroll()
        .args(["egg-train", "--config"])
        .arg(configs().join("egg_small.cfg"))
        .arg("--out")
        .arg(&out)
        .env("EGGROLL_THREADS", "2")
        .status()
        .unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("#schema=egg_train/1\n"));
    assert_eq!(csv.lines().count(), 2 + 20);
    let ck = std::fs::read(out.with_extension("egg")).unwrap();
    let ck = eggroll::egg::read_egg_checkpoint(&mut ck.as_slice()).unwrap();
    assert_eq!(ck.step, 20);
    assert!(ck.params.in_range());
}

#[test]
fn shipped_configs_parse() {
    use eggroll_harness::commands::{execute, Command as Cmd, RunOptions};
    use eggroll_harness::config::Config;
    // Each shipped config must be accepted by its command; run the cheap ones.
    let dir = tempfile::tempdir().unwrap();
    let mut es = Config::load(&configs().join("es_bench.cfg")).unwrap();
    es.set("steps", "3");
    es.set("num_seeds", "1");
    let files = execute(Cmd::EsBench, es, &RunOptions { out: Some(dir.path().join("es.csv")), ..Default::default() }).unwrap();
    assert_eq!(files.len(), 3);
    for name in ["egg_default.cfg", "rank_decay.cfg", "pop_trend.cfg"] {
        Config::load(&configs().join(name)).unwrap();
    }
}
