use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kscontrol::io::read_field_dump;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kscontrol"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    bin().args([cmd, config.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Column `name` of a CSV report.
fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

const LINE: &str = "[grid]\ndim = 1\ncells = [16]\nextent = [1.0]\n[time]\nfinal_time = 0.2\nsteps = 20\n";

#[test]
fn constant_data_forward_matches_decay() {
    let tmp = TempDir::new().unwrap();
    let o = run("forward", &configs_dir().join("constant_decay.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v = column(&tmp.path().join("diagnostics.csv"), "max_v");
    let exact = (-1.0f64).exp();
    assert!((v.last().unwrap() - exact).abs() <= 1e-3);
}

#[test]
fn zero_density_has_zero_mass_column() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("{LINE}[initial]\nu0 = {{ kind = \"constant\", value = 0.0 }}\nv0 = {{ kind = \"cosine\", mean = 1.0, amplitude = 0.5, wavenumbers = [1.0] }}\n"),
    );
    let o = run("forward", &cfg, &tmp.path().join("out"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(column(&tmp.path().join("out/diagnostics.csv"), "mass").iter().all(|&m| m == 0.0));
}

#[test]
fn diagnose_reports_criterion_and_monotone_max_v() {
    let tmp = TempDir::new().unwrap();
    let o = run("diagnose", &configs_dir().join("criterion.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let crit = column(&tmp.path().join("energy.csv"), "criterion_cum");
    assert!((crit.last().unwrap() - 2.0).abs() <= 1e-12);
    let e = column(&tmp.path().join("energy.csv"), "energy");
    assert!(e.iter().all(|x| (x - e[0]).abs() <= 1e-10));

    let cfg = write_config(
        tmp.path(),
        "neg.toml",
        &format!("{LINE}[initial]\nu0 = {{ kind = \"cosine\", mean = 1.0, amplitude = 0.5, wavenumbers = [2.0] }}\nv0 = {{ kind = \"cosine\", mean = 1.0, amplitude = 0.5, wavenumbers = [1.0] }}\n[control]\nmask_hi = [0.5]\ninitial = {{ kind = \"constant\", value = -3.0 }}\n"),
    );
    let o = run("diagnose", &cfg, &tmp.path().join("neg"));
    assert!(o.status.success(), "{}", stderr(&o));
    let max_v = column(&tmp.path().join("neg/diagnostics.csv"), "max_v");
    assert!(max_v.windows(2).all(|w| w[1] <= w[0] + 1e-10));
}

#[test]
fn error_categories_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let bad_key = write_config(tmp.path(), "k.toml", &format!("{LINE}[model]\nbogus = 1\n"));
    let o = run("forward", &bad_key, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let steep = "[grid]\ndim = 1\ncells = [16]\nextent = [1.0]\n[time]\nfinal_time = 5.0\nsteps = 1\n[initial]\nu0 = { kind = \"constant\", value = 1.0 }\nv0 = { kind = \"cosine\", mean = 1.0, amplitude = 0.9, wavenumbers = [1.0] }\n[control]\ninitial = { kind = \"random\", amplitude = 1.0 }\n";
    let cfl = write_config(tmp.path(), "cfl.toml", steep);
    let o = run("gradcheck", &cfl, tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[cfl]: "));

    let missing = write_config(
        tmp.path(),
        "m.toml",
        &format!("{LINE}[cost]\ndesired = {{ kind = \"files\", u = \"nope_u.field\", v = \"nope_v.field\" }}\n"),
    );
    let o = run("optimize", &missing, tmp.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).starts_with("error[io]: "));

    let o = run("forward", &tmp.path().join("absent.toml"), tmp.path());
    assert!(stderr(&o).starts_with("error[io]: "));

    let tight = write_config(tmp.path(), "cg.toml", &format!("{LINE}[initial]\nu0 = {{ kind = \"cosine\", mean = 1.0, amplitude = 0.5, wavenumbers = [1.0] }}\n[model]\ncg_tol = 1e-300\ncg_max_iter_factor = 1\n"));
    let o = run("forward", &tight, tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[solver]: "));
}

#[test]
fn gradcheck_desk_instance_passes() {
    let tmp = TempDir::new().unwrap();
    let o = run("gradcheck", &configs_dir().join("gradcheck_desk.toml"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["transpose"]["max"].as_f64().unwrap() <= 1e-10);
    assert!(report["gradient"]["max"].as_f64().unwrap() <= 1e-5);
    assert_eq!(report["zero_direction"]["transpose_discrepancy"], 0.0);
    assert_eq!(report["zero_direction"]["adjoint_derivative"], 0.0);
    assert_eq!(report["config"]["options"]["directions"], 20);
}

#[test]
fn failed_check_exits_one() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs_dir().join("gradcheck_desk.toml")).unwrap();
    let text = text.replace("directions = 20", "directions = 2\ngradient_tol = 1e-300");
    let cfg = write_config(tmp.path(), "g.toml", &text);
    let o = run("gradcheck", &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn simulate_save_track_round_trip() {
    let tmp = TempDir::new().unwrap();
    let base = "[grid]\ndim = 1\ncells = [16]\nextent = [1.0]\n[time]\nfinal_time = 0.5\nsteps = 20\n[initial]\nu0 = { kind = \"cosine\", mean = 1.0, amplitude = 0.5, wavenumbers = [1.0] }\nv0 = { kind = \"cosine\", mean = 1.0, amplitude = 0.2, wavenumbers = [1.0] }\n";
    let sim = write_config(
        tmp.path(),
        "sim.toml",
        &format!("{base}[control]\nmask_hi = [0.5]\ninitial = {{ kind = \"constant\", value = 0.5 }}\n[options]\ndump_fields = true\n"),
    );
    let o = run("forward", &sim, &tmp.path().join("target"));
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = read_field_dump(std::io::BufReader::new(fs::File::open(tmp.path().join("target/u.field")).unwrap())).unwrap();
    assert_eq!(dump.snapshots.len(), 21);
    assert_eq!(dump.time_index, 0);

    // Starting at the generating control, the tracking terms vanish: zero steps.
    let track = |init: &str, gamma_f: &str| {
        format!("{base}[control]\nmask_hi = [0.5]\nconstraint = {{ kind = \"box\", f_min = -2.0, f_max = 2.0 }}\ninitial = {init}\n[cost]\ngamma_f = {gamma_f}\ndesired = {{ kind = \"files\", u = \"target/u.field\", v = \"target/v.field\" }}\n[options]\ngrad_tol = 1e-6\n")
    };
    let at_star = write_config(tmp.path(), "star.toml", &track("{ kind = \"constant\", value = 0.5 }", "0.0"));
    let o = run("optimize", &at_star, &tmp.path().join("star"));
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("star/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 0);
    assert_eq!(summary["final_cost"], 0.0);

    let from_zero = write_config(tmp.path(), "zero.toml", &track("{ kind = \"zero\" }", "1e-4"));
    let o = run("optimize", &from_zero, &tmp.path().join("zero"));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("zero/summary.json")).unwrap()).unwrap();
    assert!(summary["cost_ratio"].as_f64().unwrap() <= 1e-2, "{}", String::from_utf8_lossy(&o.stdout));
    let j = column(&tmp.path().join("zero/iterations.csv"), "J");
    assert!(j.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn summary_echo_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let o = run("forward", &configs_dir().join("gradcheck_desk.toml"), &tmp.path().join("a"));
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a/summary.json")).unwrap()).unwrap();
    let echoed = toml::to_string(&summary["config"]).unwrap();
    let cfg = write_config(tmp.path(), "echo.toml", &echoed);
    let o = run("forward", &cfg, &tmp.path().join("b"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("a/diagnostics.csv")).unwrap(),
        fs::read(tmp.path().join("b/diagnostics.csv")).unwrap()
    );
}
