use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn wfcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfcheck"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn temp_file(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn version_flag() {
    let o = wfcheck(&["--version"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn analyze_secure_protocol_exits_zero() {
    let o = wfcheck(&["analyze", fixture("woolam_amended.wl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("overall: Secure"));
    assert_eq!(
        out.lines()
            .filter(|l| l.contains(" Ok") || l.contains("Vacuous"))
            .count(),
        7
    );
}

#[test]
fn analyze_table_is_deterministic() {
    let path = fixture("woolam_amended.wl");
    let a = stdout(&wfcheck(&["analyze", path.to_str().unwrap()]));
    let b = stdout(&wfcheck(&["analyze", path.to_str().unwrap()]));
    assert_eq!(a, b);
}

#[test]
fn analyze_json_for_every_function() {
    let path = fixture("woolam_amended.wl");
    for f in ["max", "n", "ek"] {
        let o = wfcheck(&[
            "analyze",
            path.to_str().unwrap(),
            "--function",
            f,
            "--format",
            "json",
        ]);
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 7, "{f}");
        assert!(v["function"].as_str().unwrap().contains(&f.to_uppercase()));
    }
}

#[test]
fn clear_text_variant_exits_one() {
    let o = wfcheck(&["analyze", fixture("woolam_cleartext.wl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Violation"));
}

#[test]
fn public_server_key_breaks_the_proof() {
    let ctx = temp_file("level kas public\n");
    let o = wfcheck(&[
        "analyze",
        fixture("woolam_amended.wl").to_str().unwrap(),
        "--context",
        ctx.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("overall: NotProved"));
}

#[test]
fn missing_file_exits_two() {
    let o = wfcheck(&["analyze", "/nonexistent/protocol.wl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read"));
    assert!(o.stdout.is_empty());
}

#[test]
fn parse_error_reports_position_and_exits_two() {
    let f = temp_file("protocol P\nagents A B\nmsg 1 A -> B : {A\n");
    let o = wfcheck(&["analyze", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("3:18"), "{}", stderr(&o));
}

#[test]
fn non_executable_protocol_exits_two() {
    let f = temp_file(
        "protocol P\nagents A B\nsymkey k level {A,B}\nfresh nonce n by A level {A,B}\n\
         msg 1 B -> A : n\n",
    );
    let o = wfcheck(&["analyze", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn roles_lists_message_set() {
    let o = wfcheck(&["roles", fixture("woolam_amended.wl").to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["A_G^1", "A_G^2", "B_G^1", "B_G^2", "B_G^3", "S_G^1"] {
        assert!(out.contains(&format!("{name} =")), "{name}");
    }
    assert!(out.contains("M_p^G (8 entries)"));
}

#[test]
fn origins_json() {
    let o = wfcheck(&[
        "origins",
        fixture("woolam_amended.wl").to_str().unwrap(),
        "--term",
        "{U, {A, V}kbs}kbs",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let found = v["origins"].as_array().unwrap();
    assert_eq!(found.len(), 2);
    assert_eq!(found[0]["sigma"]["U"], "Nb_3^i");
}

#[test]
fn origins_rejects_bad_term() {
    let o = wfcheck(&[
        "origins",
        fixture("woolam_amended.wl").to_str().unwrap(),
        "--term",
        "{U, A",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_example_message() {
    let ctx = fixture("example1.ctx");
    let run = |f: &str| {
        let o = wfcheck(&[
            "eval",
            "--function",
            f,
            "--atom",
            "alpha",
            "--term",
            "{A, {S, alpha, D}kas}kab",
            "--context",
            ctx.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o).trim().to_string()
    };
    assert_eq!(run("max"), "{A,B,D,S}");
    assert_eq!(run("n"), "{A,D,S}");
    assert_eq!(run("ek"), "{A,B}");
}

#[test]
fn eval_rejects_compound_subject() {
    let ctx = fixture("example1.ctx");
    let o = wfcheck(&[
        "eval",
        "--atom",
        "A, alpha",
        "--term",
        "{alpha}kab",
        "--context",
        ctx.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stderr(&o).contains("not an atom"));
}

#[test]
fn eval_clear_occurrence_is_public() {
    let ctx = fixture("example1.ctx");
    let o = wfcheck(&[
        "eval",
        "--atom",
        "alpha",
        "--term",
        "A, {alpha}kab, alpha",
        "--context",
        ctx.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "BOT");
}

#[test]
fn oracle_reports_leak_and_no_leak() {
    let ok = wfcheck(&[
        "oracle",
        fixture("woolam_amended.wl").to_str().unwrap(),
        "--sessions",
        "1",
        "--check-invariant",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("leaked none"));

    let bad = wfcheck(&[
        "oracle",
        fixture("woolam_cleartext.wl").to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(v["leaked"], serde_json::json!(["kab"]));
}

#[test]
fn oracle_resource_bound_exits_three() {
    let o = wfcheck(&[
        "oracle",
        fixture("woolam_amended.wl").to_str().unwrap(),
        "--check-invariant",
        "--max-terms",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
