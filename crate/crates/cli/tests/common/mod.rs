#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tailrisk_core::rng::SimRng;
use tailrisk_core::Month;

pub fn tailrisk() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tailrisk"));
    c.env_remove("TAILRISK_CONFIG");
    c
}

/// Runs the binary with `--config`, `--out` and `--no-timestamp`; panics
/// unless it succeeds, and returns the run directory.
pub fn run_ok(config: &Path, out: &Path, args: &[&str]) -> PathBuf {
    let o = run(config, out, args);
    assert!(
        o.status.success(),
        "tailrisk {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

pub fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    tailrisk()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--no-timestamp")
        .args(args)
        .output()
        .unwrap()
}

/// Every file of a run directory, by name.
pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = read_csv(path);
    let j = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name} in {h:?}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

/// Monthly panel with `groups` outcome levels `y0, y1, ...` whose one-month
/// changes follow `0.5 d + c + e_g`, where `d = z + v` and each `e_g` has
/// correlation `rho` with `v`. With `exogenous`, `d` is independent of every
/// `e_g`.
pub fn sim_panel(path: &Path, seed: u64, months: usize, groups: usize, rho: f64) {
    let mut rng = SimRng::new(seed);
    let start = Month::new(1980, 1).unwrap();
    let mut levels = vec![5.0; groups];
    let mut text = String::from("date,d,z,c");
    for g in 0..groups {
        write!(text, ",y{g}").unwrap();
    }
    text.push('\n');
    for t in 0..months {
        let z = rng.normal();
        let v = rng.normal();
        let c = rng.normal();
        let d = z + v;
        write!(text, "{},{d},{z},{c}", start.offset(t as i64)).unwrap();
        for level in &levels {
            write!(text, ",{level}").unwrap();
        }
        text.push('\n');
        for level in levels.iter_mut() {
            let e = rho * v + (1.0 - rho * rho).sqrt() * rng.normal();
            *level += 0.5 * d + 0.3 * c + e;
        }
    }
    std::fs::write(path, text).unwrap();
}

/// Configuration over a simulated panel: one group per outcome, all in one
/// category, horizon one month, instrumented by `instrument` (a column name).
pub fn sim_config(dir: &Path, panel: &str, groups: usize, instrument: &str, extra: &str) -> PathBuf {
    let mut text = format!("seed = 7\n\n[data]\npath = \"{panel}\"\n\n{extra}\n");
    for g in 0..groups {
        write!(
            text,
            "[[groups]]\nname = \"g{g}\"\ncategory = \"sim\"\ndependent = \"y{g}\"\nhorizons = [1]\nendogenous = \"d\"\ncontrols = [\"c\"]\ninstruments = {{ iv = [\"{instrument}\"] }}\n\n"
        )
        .unwrap();
    }
    let path = dir.join("sim.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
