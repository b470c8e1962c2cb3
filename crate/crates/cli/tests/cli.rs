use std::process::{Command, Output};

fn flexsimd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexsimd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn fig7_vlv_row_has_full_coverage() {
    let o = flexsimd(&["run", "--kernel", "fig7", "--vlen", "128", "--mode", "vlv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut rows = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let row = rows.records().next().unwrap().unwrap();
    let field = |name: &str| row[header.iter().position(|h| h == name).unwrap()].to_string();
    assert_eq!(field("kernel"), "fig7");
    assert_eq!(field("mode"), "vlv");
    assert_eq!(field("coverage").parse::<f64>().unwrap(), 1.0);
}

#[test]
fn host_dump_shows_two_vector_adds() {
    let o = flexsimd(&["run", "--kernel", "fig7", "--vlen", "128", "--mode", "vlv", "--dump-host-asm"]);
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8(o.stderr).unwrap();
    let adds: Vec<&str> = err.lines().filter(|l| l.contains("VADD.f32")).collect();
    assert_eq!(adds.len(), 2);
    assert!(adds[0].ends_with("k=4") && adds[1].ends_with("k=2"));
}

#[test]
fn csv_and_obj_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("r.csv");
    let obj_path = dir.path().join("r.json");
    let base = ["run", "--kernel", "fig7,saxpy-f32-t4", "--vlen", "128,256", "--mode", "baseline,vlv"];
    for (path, fmt) in [(&csv_path, "csv"), (&obj_path, "obj")] {
        let mut args = base.to_vec();
        args.extend(["--report", path.to_str().unwrap(), "--format", fmt]);
        assert_eq!(flexsimd(&args).status.code(), Some(0));
    }
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let objs: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&obj_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(objs.len(), 8);
    for (row, obj) in rows.iter().zip(&objs) {
        for (i, name) in header.iter().enumerate() {
            let v = &obj[name];
            match v {
                serde_json::Value::Null => assert_eq!(&row[i], ""),
                serde_json::Value::String(s) => assert_eq!(&row[i], s),
                serde_json::Value::Number(n) => assert_eq!(row[i].parse::<f64>().unwrap(), n.as_f64().unwrap()),
                other => panic!("unexpected value {other}"),
            }
        }
    }
}

#[test]
fn identical_runs_give_identical_reports() {
    let args = ["run", "--kernel", "scatter-8,alt", "--vlen", "128,512", "--format", "obj"];
    assert_eq!(stdout(&flexsimd(&args)), stdout(&flexsimd(&args)));
}

#[test]
fn injected_mismatch_fails_verification() {
    let o = flexsimd(&["run", "--kernel", "fig7", "--mode", "vlv", "--inject-mismatch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("oracle mismatch"));
}

#[test]
fn input_errors_exit_with_three() {
    for args in [
        &["run", "--kernel", "no-such-kernel"][..],
        &["run", "--kernel", "fig7", "--vlen", "100"],
        &["run", "--kernel", "fig7", "--mode", "fast"],
        &["run", "--kernel", "fig7", "--format", "xml"],
        &["run", "--kernel", "fig7", "--thresholds", "bias=3"],
        &["run", "--unknown-flag"],
    ] {
        assert_eq!(flexsimd(args).status.code(), Some(3), "{args:?}");
    }
}

#[test]
fn kernel_files_and_timing_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = dir.path().join("mine.s");
    std::fs::write(&kernel, flexsimd::corpus::fig7().source).unwrap();
    let timing = dir.path().join("timing.cfg");
    std::fs::write(&timing, "# slower memory\nmemory_latency = 300\n").unwrap();
    let o = flexsimd(&[
        "run",
        "--kernel",
        kernel.to_str().unwrap(),
        "--mode",
        "vlv",
        "--timing-config",
        timing.to_str().unwrap(),
        "--thresholds",
        "bbm=10,sbm=100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("mine,128,vlv,1.0"));
}

#[test]
fn list_and_show() {
    let list = stdout(&flexsimd(&["list"]));
    for id in ["fig7", "fig8", "saxpy-f64-t4", "scatter-16", "branchy", "alias", "interleaved"] {
        assert!(list.lines().any(|l| l.starts_with(id)), "{id}");
    }
    let fig7 = stdout(&flexsimd(&["show", "fig7"]));
    assert_eq!(fig7.lines().filter(|l| l.starts_with("ADD.f32")).count(), 6);
}
