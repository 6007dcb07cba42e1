use std::path::Path;
use std::process::{Command, Output};

fn thurston(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thurston")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

#[test]
fn render_writes_a_ppm_of_the_requested_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("torus.ppm");
    let o = thurston(&["render", "--config", "flat-torus", "--resolution", "16x12", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&out).unwrap();
    let header = b"P6\n16 12\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 16 * 12 * 3);
    let text = stdout(&o);
    assert_eq!(value(&text, "width"), "16");
    assert_eq!(value(&text, "numeric_failures"), "0");
}

#[test]
fn render_png_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("torus.png");
    let o = thurston(&["render", "--config", "flat-torus", "--resolution", "8x8", "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(&std::fs::read(&out).unwrap()[..4], b"\x89PNG");
}

#[test]
fn seed_controls_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let render = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = thurston(&[
            "render", "--config", "flat-torus", "--resolution", "12x12", "--spp", "4", "--indirect", "--seed", seed,
            "--output", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    let a = render("1", "a.ppm");
    let b = render("1", "b.ppm");
    let c = render("2", "c.ppm");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn validate_accepts_the_dodecahedral_spaces() {
    let o = thurston(&["validate", "--config", "poincare-sphere"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(value(&text, "edge_cycles"), "3,3,3,3,3,3,3,3,3,3");
    assert_eq!(value(&text, "euler"), "0");
    assert_eq!(value(&text, "valid"), "true");

    let o = thurston(&["validate", "--config", "seifert-weber"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(value(&text, "edge_cycles"), "5,5,5,5,5,5");
    assert!((value(&text, "dihedral_min_deg").parse::<f64>().unwrap() - 72.0).abs() < 1e-6);
}

#[test]
fn validate_rejects_a_broken_pairing() {
    let o = thurston(&["validate", "--config", &fixture("broken-torus.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_config_is_an_io_failure() {
    let o = thurston(&["render", "--config", "/nonexistent/scene.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_keys_are_config_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[manifold]\nbuiltin = \"flat-torus\"\n[render]\nwidht = 4\n").unwrap();
    let o = thurston(&["render", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("widht"));
}

#[test]
fn printed_defaults_render() {
    let o = thurston(&["render", "--print-defaults"]);
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("defaults.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let out = dir.path().join("d.ppm");
    let o = thurston(&["render", "--config", path.to_str().unwrap(), "--resolution", "8x8", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_reports_speed_drift() {
    let drift = |geometry: &str| {
        let o = thurston(&["bench", "--geometry", geometry, "--rays", "100", "--t", "10"]);
        assert!(o.status.success());
        let text = stdout(&o);
        assert_eq!(value(&text, "failures"), "0");
        (value(&text, "max_speed_error").parse::<f64>().unwrap(), text)
    };
    assert_eq!(drift("E3").0, 0.0);
    assert!(drift("Sol").0 < 1e-6);
    let (nil, text) = drift("Nil");
    assert!(nil < 1e-6);
    assert!(value(&text, "closed_form_vs_rk4").parse::<f64>().unwrap() < 1e-5);
}
