use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vbi_core::{ClientId, Props, SizeClass, Vbuid};
use vbi_sim::TraceEvent;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbi-sim")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_run_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    fs::create_dir(&traces).unwrap();
    let a = traces.join("a.trace");
    let b = traces.join("b.trace.gz");
    for (path, seed) in [(&a, "1"), (&b, "2")] {
        let o = sim(&["gen", "--spec", "kind=skew,vbs=4,accesses=3000", "--seed", seed, "--out", p(path)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&b).unwrap()[..2], [0x1f, 0x8b]);

    let stats = dir.path().join("stats.json");
    let o = sim(&["run", "--trace", p(&b), "--scenario", "vbi2", "--out", p(&stats)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(v["scenario"], "vbi2");
    assert_eq!(v["mem.accesses"], 3000);

    let o = sim(&["run", "--trace", p(&a), "--scenario", "native"]);
    assert!(o.status.success());
    let again = sim(&["run", "--trace", p(&a), "--scenario", "native"]);
    assert_eq!(o.stdout, again.stdout);

    let csv_path = dir.path().join("sweep.csv");
    let o = sim(&["sweep", "--traces", p(&traces), "--scenarios", "native,vbi1", "--out", p(&csv_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let header = rd.headers().unwrap().clone();
    assert_eq!(&header[0], "trace");
    assert_eq!(&header[3], "cycles");
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!((&rows[0][0], &rows[0][1]), ("a.trace", "native"));
}

#[test]
fn config_file_and_policy_override() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    assert!(sim(&["gen", "--spec", "kind=skew,accesses=2000", "--out", p(&trace)]).status.success());
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[memory]\npool_bytes = 67108864\n[hetero]\nepoch_cycles = 100000\n").unwrap();
    let o = sim(&["run", "--trace", p(&trace), "--scenario", "het_pcm_dram", "--config", p(&cfg), "--policy", "unaware"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["policy"], "unaware");
}

#[test]
fn bad_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    assert!(sim(&["gen", "--spec", "accesses=10", "--out", p(&trace)]).status.success());
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[core]\nbogus = 1\n").unwrap();
    let garbage = dir.path().join("g.trace");
    fs::write(&garbage, "# vbi-trace v1\nMEM X 0 0 0 0\n").unwrap();
    for args in [
        vec!["run", "--trace", p(&trace), "--scenario", "nope"],
        vec!["run", "--trace", p(&trace), "--scenario", "native", "--config", p(&cfg)],
        vec!["run", "--trace", p(&garbage), "--scenario", "native"],
        vec!["run", "--trace", p(&trace), "--scenario", "het_tldram", "--policy", "random"],
        vec!["gen", "--spec", "kind=skew,write_frac=2", "--out", p(&trace)],
    ] {
        let o = sim(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn lifecycle_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    let events = [
        TraceEvent::ReqVb { client: ClientId(0), size: 4096, props: Props::empty() },
        TraceEvent::Detach { client: ClientId(0), vbuid: Vbuid::new(SizeClass::KB4, 0) },
        TraceEvent::Detach { client: ClientId(0), vbuid: Vbuid::new(SizeClass::KB4, 0) },
    ];
    vbi_sim::trace::write_file(&trace, &events).unwrap();
    let o = sim(&["run", "--trace", p(&trace), "--scenario", "vbi1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("event 2"));
}
