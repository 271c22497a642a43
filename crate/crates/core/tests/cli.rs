use std::path::Path;
use std::process::{Command, Output};

use viewfuse::flowio::{read_flow, read_image};

fn viewfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewfuse")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}="))).unwrap_or_else(|| panic!("no {key} in {text}"))
}

fn synth(dir: &Path) -> String {
    let out = dir.join("s");
    let o = viewfuse(&["synth", "--seed", "3", "--size", "192", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    value(&stdout(&o), "overlap_rect").to_string()
}

#[test]
fn synth_fuse_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rect = synth(dir.path());
    assert_eq!(rect, "96,96,192,192");
    let s = dir.path().join("s");
    for f in ["wide.png", "tele.png", "flow.flo", "occlusion.pgm", "scene.txt"] {
        assert!(s.join(f).exists(), "{f}");
    }
    let out = dir.path().join("o");
    let dump = dir.path().join("d");
    let p = |f: &str| s.join(f).to_str().unwrap().to_string();
    let o = viewfuse(&[
        "fuse", "--wide", &p("wide.png"), "--tele", &p("tele.png"), "--flow", &p("flow.flo"),
        "--overlap-rect", &rect, "--out", out.to_str().unwrap(), "--dump-intermediates", dump.to_str().unwrap(),
        "--kernel", "101", "--rhe-block", "64", "--rhe-stride", "32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value(&text, "clip_bound_ok"), "true");
    let ratio: f64 = value(&text, "occlusion_ratio").parse().unwrap();
    assert!(ratio < 1.0, "{ratio}");

    let full = read_image(out.join("full.png")).unwrap();
    let wide = read_image(s.join("wide.png")).unwrap();
    assert_eq!(full.dims(), wide.dims());
    assert_eq!(read_image(out.join("overlap.png")).unwrap().dims(), (192, 192));
    // outside the overlap rectangle the frame is untouched
    for (x, y) in [(0, 0), (50, 300), (383, 383), (300, 10)] {
        assert_eq!(full.pixel(x, y), wide.pixel(x, y));
    }
    for f in ["transformed.flo", "clipped.flo", "distance.pgm", "occ_transformed.pgm", "timings.txt"] {
        assert!(dump.join(f).exists(), "{f}");
    }

    // the metrics subcommand agrees with fuse on the same flow
    let m = viewfuse(&[
        "metrics", "--flow", &p("flow.flo"), "--transformed-flow", dump.join("transformed.flo").to_str().unwrap(),
        "--kernel", "101",
    ]);
    assert!(m.status.success(), "{}", String::from_utf8_lossy(&m.stderr));
    assert_eq!(value(&stdout(&m), "occlusion_ratio"), value(&text, "occlusion_ratio"));
}

#[test]
fn zero_ratio_keeps_the_wide_view() {
    let dir = tempfile::tempdir().unwrap();
    let rect = synth(dir.path());
    let s = dir.path().join("s");
    let out = dir.path().join("o");
    let dump = dir.path().join("d");
    let p = |f: &str| s.join(f).to_str().unwrap().to_string();
    let o = viewfuse(&[
        "fuse", "--wide", &p("wide.png"), "--tele", &p("tele.png"), "--flow", &p("flow.flo"),
        "--overlap-rect", &rect, "--out", out.to_str().unwrap(), "--dump-intermediates", dump.to_str().unwrap(),
        "--ratio", "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "occlusion_ratio"), "1.0000");
    assert_eq!(read_flow(dump.join("transformed.flo")).unwrap(), read_flow(s.join("flow.flo")).unwrap());
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    let o = viewfuse(&["fuse", "--wide", missing.to_str().unwrap(), "--tele", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let rect = synth(dir.path());
    let s = dir.path().join("s");
    let p = |f: &str| s.join(f).to_str().unwrap().to_string();
    let o = viewfuse(&[
        "fuse", "--wide", &p("wide.png"), "--tele", &p("tele.png"), "--flow", &p("flow.flo"),
        "--overlap-rect", &rect, "--ratio=-1", "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ratio"));
}
