use std::process::{Command, Output};

fn gibbs1d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gibbs1d"))
        .args(args)
        .env_remove("GIBBS1D_CAP")
        .output()
        .unwrap()
}

fn summary_value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no {key} line in {stdout}"))
}

#[test]
fn summary_density_matches_steps_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = gibbs1d(&["free-energy", "--n", "8", "--l", "3", "--beta", "0.7", "--output", out]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let density = summary_value(&stdout, "density ");

    let mut reader = csv::Reader::from_path(dir.path().join("steps.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "log_ratio").unwrap();
    let mut sum = 0.0;
    let mut rows = 0;
    for rec in reader.records() {
        sum += rec.unwrap()[col].parse::<f64>().unwrap();
        rows += 1;
    }
    assert_eq!(rows, 7);
    let recomputed = 2f64.ln() + sum / 8.0;
    assert!((recomputed - density).abs() <= 1e-15, "{recomputed} vs {density}");
}

#[test]
fn beta_zero_gives_log_d() {
    let dir = tempfile::tempdir().unwrap();
    let o = gibbs1d(&["free-energy", "--beta", "0", "--n", "6", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let density = summary_value(&String::from_utf8(o.stdout).unwrap(), "density ");
    assert_eq!(density, 2f64.ln());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "n = 6\nbeta = hot\n").unwrap();
    let o = gibbs1d(&["free-energy", "--config", cfg.to_str().unwrap(), "--output", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));

    let o = gibbs1d(&["oracle", "--set", "transfer=on", "--output", out]);
    assert_eq!(o.status.code(), Some(4));

    let o = gibbs1d(&["oracle", "--n", "14", "--cap", "1024", "--output", out]);
    assert_eq!(o.status.code(), Some(3));

    let o = gibbs1d(&["free-energy", "--set", "nonsense=1", "--output", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = gibbs1d(&["free-energy", "--n", "7", "--beta", "0.25", "--print-config"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = dir.path().join("round.cfg");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let again = gibbs1d(&["free-energy", "--config", cfg.to_str().unwrap(), "--print-config"]);
    assert_eq!(again.stdout, o.stdout);
}
