use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn trapcool(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trapcool"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TRAPCOOL_OUT")
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn solve_writes_nine_small_voltages() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapcool(
        &["solve", "--species", "proton", "--f", "500e3", "--s0", "0.7e-3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&dir.path().join("voltages.csv"));
    assert_eq!(rows.len(), 9);
    for r in rows {
        let v: f64 = r[1].parse().unwrap();
        assert!(v.abs() < 10.0);
    }
    assert!(dir.path().join("potential.csv").exists());
    let wells: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("wells.json")).unwrap()).unwrap();
    assert!(wells["wells"]["a"]["depth"].as_f64().unwrap() > 1.0);
}

#[test]
fn usage_errors_are_distinct_from_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = trapcool(&["solve", "--f"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let bad_species = trapcool(&["solve", "--species", "electron"], dir.path());
    assert_eq!(bad_species.status.code(), Some(2));
    let no_seed = trapcool(&["campaign", "--n", "1"], dir.path());
    assert_eq!(no_seed.status.code(), Some(2));
    let outside = trapcool(&["solve", "--s0", "20e-3"], dir.path());
    assert_eq!(outside.status.code(), Some(3));
}

#[test]
fn flags_override_config_file_and_effective_config_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "species = \"antiproton\"\n[well]\nf_Hz = 400e3\ns0_m = 0.6e-3\n").unwrap();
    let out = dir.path().join("out");
    let o = trapcool(&["solve", "--config", cfg.to_str().unwrap(), "--f", "450e3"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let eff: toml::Value = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(eff["species"].as_str(), Some("antiproton"));
    assert_eq!(eff["well"]["f_Hz"].as_float(), Some(450e3));
    assert_eq!(eff["well"]["s0_m"].as_float(), Some(0.6e-3));
    assert_eq!(eff["noise"]["sigma_V"].as_float(), Some(250e-9));
}

#[test]
fn unknown_config_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[well]\nfrequency = 400e3\n").unwrap();
    let o = trapcool(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_duration_echoes_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapcool(&["simulate", "--duration", "0", "--e-init", "0.02"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&dir.path().join("trajectory.csv"));
    assert_eq!(rows.len(), 1);
    let t: f64 = rows[0][0].parse().unwrap();
    let e_a: f64 = rows[0][3].parse().unwrap();
    assert_eq!(t, 0.0);
    let k = 1.380_649e-23;
    assert!((e_a / k - 0.02).abs() < 0.02 * 1e-3);
}

#[test]
fn plot_carries_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapcool(&["sweep", "--species", "proton", "--n-waypoints", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = fs::read(dir.path().join("config.toml")).unwrap();
    let hash: String = Sha256::digest(&cfg).iter().map(|b| format!("{b:02x}")).collect();
    let svg = fs::read_to_string(dir.path().join("schedule.svg")).unwrap();
    assert!(svg.contains(&hash));
    let rows = read_csv(&dir.path().join("schedule.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn plan_prints_table_totals() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapcool(&["plan", "--species", "proton"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let total: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("total_time_s: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - 0.4914).abs() < 1e-3, "{total}");
    assert!(text.contains("detuning_Hz"));
}

#[test]
fn campaign_is_identical_across_thread_counts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "campaign",
        "--seed",
        "7",
        "--n",
        "3",
        "--sweep-duration",
        "2e-4",
        "--n-waypoints",
        "3",
    ];
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let mut a = args.to_vec();
        a.extend(["--threads", threads]);
        let o = trapcool(&a, &out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("samples.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn default_output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_trapcool"))
        .args(["plan", "--species", "antiproton"])
        .env("TRAPCOOL_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("plan.yaml").exists());
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn harmonic_run_beats_at_the_exchange_time() {
    let dir = tempfile::tempdir().unwrap();
    let solve = trapcool(&["solve", "--f", "500e3", "--s0", "0.6e-3"], &dir.path().join("solve"));
    assert_eq!(solve.status.code(), Some(0));
    let wells: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("solve/wells.json")).unwrap()).unwrap();
    let tau = wells["coupling"]["tau_ex"].as_f64().unwrap();
    let out = dir.path().join("sim");
    let duration = format!("{}", 2.2 * tau);
    let o = trapcool(
        &[
            "simulate",
            "--f",
            "500e3",
            "--s0",
            "0.6e-3",
            "--e-init",
            "0.01",
            "--duration",
            &duration,
            "--trace-stride",
            "1000",
        ],
        &out,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("trajectory.csv"));
    let trace: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    let e0 = trace[0].1;
    let (t_min, e_min) = trace
        .iter()
        .copied()
        .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    assert!(e_min < 1e-3 * e0);
    assert!((t_min - tau).abs() < 0.05 * tau, "{t_min} vs {tau}");
    // the energy comes back after a second exchange
    let late = trace
        .iter()
        .filter(|p| p.0 > 1.8 * tau)
        .map(|p| p.1)
        .fold(0.0, f64::max);
    assert!(late > 0.9 * e0);
    assert!(out.join("energy.svg").exists());
}
