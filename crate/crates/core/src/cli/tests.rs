use std::fs;

use super::*;
use crate::attention::InferMode;
use crate::Error;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn empty_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(&dir, "empty.cfg", "");
    let cfg = parse_args(["dcn", "bench", "--config", &cfg_path]).unwrap();
    let mut want = RunConfig::new(Command::Bench);
    assert_eq!(cfg, {
        want.command = Command::Bench;
        want
    });
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(&dir, "run.cfg", "# comment\nk=4\nlambda = 0.25\nmode=fine-only\n");
    let cfg = parse_args(["dcn", "bench", "--config", &cfg_path, "--k", "8"]).unwrap();
    assert_eq!(cfg.k, 8);
    assert_eq!(cfg.lambda, 0.25);
    assert_eq!(cfg.mode, InferMode::FineOnly);
}

#[test]
fn bad_keys_and_values_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(&dir, "bad.cfg", "kk=3\n");
    match parse_args(["dcn", "bench", "--config", &cfg_path]) {
        Err(Error::UnknownKey(k)) => assert_eq!(k, "kk"),
        other => panic!("{other:?}"),
    }
    match parse_args(["dcn", "bench", "--k", "four"]) {
        Err(Error::InvalidValue { key, .. }) => assert_eq!(key, "k"),
        other => panic!("{other:?}"),
    }
    match parse_args(["dcn", "bench", "--lambda", "1.5"]) {
        Err(e @ Error::InvalidValue { .. }) => assert!(e.to_string().contains("lambda")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_args(["dcn", "bench", "--scales", "1,0"]),
        Err(Error::InvalidValue { .. })
    ));
    let no_eq = write(&dir, "noeq.cfg", "k 3\n");
    assert!(matches!(parse_args(["dcn", "bench", "--config", &no_eq]), Err(Error::Malformed(_))));
    assert!(parse_args(["dcn", "frobnicate"]).is_err());
}

#[test]
fn read_commands_need_existing_paths() {
    assert!(matches!(parse_args(["dcn", "train"]), Err(Error::InvalidValue { .. })));
    assert!(matches!(
        parse_args(["dcn", "eval", "--data", "/nonexistent/data.dcn"]),
        Err(Error::MissingPath(_))
    ));
    assert!(matches!(
        parse_args(["dcn", "bench", "--scales", "1,0.5"]),
        Err(Error::InvalidValue { .. })
    ));
}

#[test]
fn echo_reproduces_the_config() {
    let cfg = parse_args([
        "dcn", "bench", "--preset", "seq", "--k", "6", "--scales", "1,0.75", "--input", "48x96", "--seed", "9",
    ])
    .unwrap();
    let mut again = RunConfig::new(Command::Bench);
    again.apply_text(&cfg.echo()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(parse_extent("input", "100x100").unwrap(), (100, 100));
    assert!(parse_extent("input", "100").is_err());
}
