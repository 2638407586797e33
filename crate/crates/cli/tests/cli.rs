use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use num_complex::Complex64;
use serde_json::Value;
use shot_core::io::{
    field_to_bytes, point_from_degrees, read_coeffs, read_field, uniform_random_field, vmf_field,
    write_coeffs, FileHeader, RunConfig,
};
use shot_core::{
    build_grid, default_bands, divergence, divergence_gradient, heat_conv, heat_multipliers,
    regional_rms, Field, Grid, ShtPlan, SinkhornParams, SpectralCoeffs,
};
use tempfile::TempDir;

fn shot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shot"))
        .args(args)
        .output()
        .expect("run shot")
}

fn grid(l: usize) -> Arc<Grid> {
    Arc::new(build_grid(l).unwrap())
}

fn save(dir: &TempDir, name: &str, f: &Field) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, field_to_bytes(f, &FileHeader::for_field(f.grid())).unwrap()).unwrap();
    path
}

fn load(path: &Path) -> (Field, FileHeader) {
    read_field(&mut std::fs::File::open(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_code(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["code"].as_str().unwrap().to_string()
}

fn bits(v: &Value) -> u64 {
    v.as_f64().unwrap().to_bits()
}

fn bump(g: &Arc<Grid>, lat: f64, lon: f64) -> Field {
    vmf_field(g.clone(), 5.0, &point_from_degrees(lat, lon), 0.05).unwrap()
}

#[test]
fn generate_matches_library() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("u.bin");
    let o = shot(&["generate", "uniform", "--band-limit", "8", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success());
    let f = uniform_random_field(grid(8), 7).unwrap();
    let expected = field_to_bytes(&f, &FileHeader::for_field(f.grid())).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), expected);

    let o = shot(&[
        "generate", "vmf", "--kappa", "10", "--lat", "-20", "--lon", "45", "--background", "0.1",
        "--band-limit", "8",
    ]);
    assert!(o.status.success());
    let f = vmf_field(grid(8), 10.0, &point_from_degrees(-20.0, 45.0), 0.1).unwrap();
    assert_eq!(o.stdout, field_to_bytes(&f, &FileHeader::for_field(f.grid())).unwrap());
}

#[test]
fn generate_is_seed_deterministic() {
    let a = shot(&["generate", "uniform", "--band-limit", "6", "--seed", "3"]);
    let b = shot(&["generate", "uniform", "--band-limit", "6", "--seed", "3"]);
    let c = shot(&["generate", "uniform", "--band-limit", "6", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn generate_needs_band_limit() {
    let o = shot(&["generate", "uniform"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "parameter");
}

#[test]
fn divergence_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let p = save(&dir, "p.bin", &bump(&grid(8), 20.0, 0.0));
    let o = shot(&["divergence", s(&p), s(&p), "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout_json(&o)["divergence"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn balanced_mass_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let g = grid(8);
    let p = uniform_random_field(g.clone(), 1).unwrap();
    let q = Field::new(g.clone(), p.values().iter().map(|x| 2.0 * x).collect()).unwrap();
    let (p, q) = (save(&dir, "p.bin", &p), save(&dir, "q.bin", &q));
    let o = shot(&["divergence", s(&p), s(&q), "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "mass-mismatch");
    assert!(o.stdout.is_empty());
}

#[test]
fn divergence_matches_library_bits() {
    let dir = TempDir::new().unwrap();
    let g = grid(48);
    let (p, q) = (bump(&g, 30.0, 0.0), bump(&g, -30.0, 60.0));
    let (pf, qf) = (save(&dir, "p.bin", &p), save(&dir, "q.bin", &q));
    let o = shot(&[
        "divergence", s(&pf), s(&qf), "--eps", "0.1", "--tau", "100", "--max-iter", "300",
    ]);
    let mut params = SinkhornParams::new(0.1, 100.0);
    params.max_iter = 300;
    let r = divergence(&p, &q, &params).unwrap();
    let v = stdout_json(&o);
    assert!(r.value > 0.0);
    assert_eq!(bits(&v["divergence"]), r.value.to_bits());
    assert_eq!(bits(&v["cost_pq"]), r.cost_pq.to_bits());
    assert_eq!(bits(&v["cost_pp"]), r.cost_pp.to_bits());
    assert_eq!(bits(&v["cost_qq"]), r.cost_qq.to_bits());
    assert_eq!(bits(&v["mass_p"]), r.mass_p.to_bits());
    assert_eq!(bits(&v["mass_q"]), r.mass_q.to_bits());
    for k in 0..3 {
        assert_eq!(v["iterations"][k].as_u64().unwrap() as usize, r.iterations[k]);
        assert_eq!(v["converged"][k].as_bool().unwrap(), r.converged[k]);
        assert_eq!(bits(&v["marginal_errors"][k]), r.marginal_errors[k].to_bits());
    }
    assert_eq!(v["clamped_entries"].as_u64().unwrap() as usize, r.clamped_entries);
    let expected = if r.converged() { 0 } else { 2 };
    assert_eq!(o.status.code(), Some(expected));
}

#[test]
fn unconverged_solve_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let g = grid(8);
    let (p, q) = (save(&dir, "p.bin", &bump(&g, 30.0, 0.0)), save(&dir, "q.bin", &bump(&g, -30.0, 90.0)));
    let o = shot(&["divergence", s(&p), s(&q), "--eps", "0.5", "--max-iter", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let v = stdout_json(&o);
    assert_eq!(v["converged"][0], Value::Bool(false));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let g = grid(8);
    let (p, q) = (save(&dir, "p.bin", &bump(&g, 30.0, 0.0)), save(&dir, "q.bin", &bump(&g, -30.0, 90.0)));
    let config = RunConfig { eps: 0.5, max_iter: 2, ..RunConfig::default() };
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, config.to_json()).unwrap();

    let o = shot(&["divergence", s(&p), s(&q), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let o = shot(&["divergence", s(&p), s(&q), "--config", s(&cfg), "--max-iter", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let mut params = config.params().unwrap();
    params.max_iter = 1000;
    let r = divergence(&load(&p).0, &load(&q).0, &params).unwrap();
    assert_eq!(bits(&stdout_json(&o)["divergence"]), r.value.to_bits());

    std::fs::write(&cfg, r#"{"eps": 0.5, "epsilon": 1}"#).unwrap();
    let o = shot(&["divergence", s(&p), s(&q), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "parameter");
}

#[test]
fn tau_flag_accepts_inf_and_rejects_garbage() {
    let dir = TempDir::new().unwrap();
    let p = save(&dir, "p.bin", &bump(&grid(8), 10.0, 0.0));
    let o = shot(&["divergence", s(&p), s(&p), "--eps", "0.5", "--tau", "inf"]);
    assert_eq!(o.status.code(), Some(0));
    let o = shot(&["divergence", s(&p), s(&p), "--eps", "0.5", "--tau", "lots"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "parameter");
}

#[test]
fn band_limit_flag_must_match_file() {
    let dir = TempDir::new().unwrap();
    let p = save(&dir, "p.bin", &bump(&grid(8), 10.0, 0.0));
    let o = shot(&["divergence", s(&p), s(&p), "--eps", "0.5", "--band-limit", "16"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "band-limit-mismatch");
    let o = shot(&["divergence", s(&p), s(&p), "--eps", "0.5", "--band-limit", "8"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn grid_mismatch_is_an_error() {
    let dir = TempDir::new().unwrap();
    let p = save(&dir, "p.bin", &bump(&grid(8), 10.0, 0.0));
    let q = save(&dir, "q.bin", &bump(&grid(6), 10.0, 0.0));
    let o = shot(&["divergence", s(&p), s(&q), "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "grid-mismatch");
}

#[test]
fn usage_errors_are_json_and_help_succeeds() {
    let o = shot(&["divergence", "only-one"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "usage");
    let o = shot(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("divergence"));
}

#[test]
fn missing_file_is_an_io_error() {
    let o = shot(&["divergence", "/nonexistent/p.bin", "/nonexistent/q.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "io");
}

#[test]
fn convolve_matches_library_and_echoes_time() {
    let dir = TempDir::new().unwrap();
    let f = bump(&grid(12), 40.0, 100.0);
    let input = save(&dir, "f.bin", &f);
    let out = dir.path().join("c.bin");
    let o = shot(&["convolve", s(&input), "--time", "0.05", "--out", s(&out)]);
    assert!(o.status.success());
    let (got, header) = load(&out);
    let expected = heat_conv(&f, &heat_multipliers(0.05, 12).unwrap()).unwrap();
    assert_eq!(got.values(), expected.values());
    let applied = header.applied.unwrap();
    assert_eq!(applied["operation"], "heat_conv");
    assert_eq!(applied["t"].as_f64(), Some(0.05));
}

#[test]
fn convolve_examples() {
    let dir = TempDir::new().unwrap();
    let g = grid(10);
    let f = bump(&g, -10.0, 200.0);
    let input = save(&dir, "f.bin", &f);

    let smooth = band_limited(&g);
    let b = save(&dir, "b.bin", &smooth);
    let o = shot(&["convolve", s(&b), "--time", "0"]);
    let (id, _) = read_field(&mut o.stdout.as_slice()).unwrap();
    assert!(id.sup_distance(&smooth) < 1e-12);

    let c = save(&dir, "c.bin", &Field::constant(g.clone(), 0.3));
    let o = shot(&["convolve", s(&c), "--time", "0.7"]);
    let (cc, _) = read_field(&mut o.stdout.as_slice()).unwrap();
    assert!(cc.values().iter().all(|x| (x - 0.3).abs() < 1e-10));

    let half = dir.path().join("half.bin");
    let twice = dir.path().join("twice.bin");
    shot(&["convolve", s(&input), "--time", "0.05", "--out", s(&half)]);
    shot(&["convolve", s(&half), "--time", "0.05", "--out", s(&twice)]);
    let o = shot(&["convolve", s(&input), "--time", "0.1"]);
    let (once, _) = read_field(&mut o.stdout.as_slice()).unwrap();
    assert!(load(&twice).0.sup_distance(&once) < 1e-9);
}

/// Real band-limited field from a fixed pattern of coefficients.
fn band_limited(g: &Arc<Grid>) -> Field {
    let l_max = g.band_limit();
    let mut c = SpectralCoeffs::zeros(l_max);
    for l in 0..l_max {
        for m in 0..=l {
            let x = ((3 * l + 7 * m) as f64).sin();
            let y = if m == 0 { 0.0 } else { ((5 * l + m) as f64).cos() };
            c.set(l, m, Complex64::new(x, y) / (1.0 + l as f64));
        }
    }
    ShtPlan::new(g.clone()).inverse(&c).unwrap()
}

#[test]
fn transform_round_trip_and_library_bits() {
    let dir = TempDir::new().unwrap();
    let g = grid(16);
    let f = band_limited(&g);
    let input = save(&dir, "f.bin", &f);
    let coef = dir.path().join("f.coef");
    let back = dir.path().join("back.bin");
    let o = shot(&["transform", s(&input), "--direction", "forward", "--out", s(&coef)]);
    assert!(o.status.success());
    let mut expected = Vec::new();
    write_coeffs(&mut expected, &ShtPlan::new(g.clone()).forward(&f).unwrap()).unwrap();
    assert_eq!(std::fs::read(&coef).unwrap(), expected);

    let o = shot(&["transform", s(&coef), "--direction", "inverse", "--out", s(&back)]);
    assert!(o.status.success());
    assert!(load(&back).0.sup_distance(&f) < 1e-10);
}

#[test]
fn transform_of_constant_has_one_coefficient() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "c.bin", &Field::constant(grid(8), 2.0));
    let o = shot(&["transform", s(&input), "--direction", "forward"]);
    let (c, header) = read_coeffs(&mut o.stdout.as_slice()).unwrap();
    assert_eq!(header.format, "shot-coeffs/1");
    let values = c.as_slice();
    assert!(values[0].norm() > 1.0);
    assert!(values[1..].iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn malformed_header_is_reported() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"{\"format\": \"shot-field/1\", \"grid\": \"healpix\"}\n").unwrap();
    let o = shot(&["transform", s(&bad), "--direction", "forward"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "bad-header");

    std::fs::write(&bad, b"not json at all\n\x00\x00").unwrap();
    let o = shot(&["convolve", s(&bad), "--time", "0.1"]);
    assert_eq!(error_code(&o), "bad-header");

    let g = grid(4);
    let mut bytes = field_to_bytes(&Field::constant(g.clone(), 1.0), &FileHeader::for_field(&g)).unwrap();
    bytes.pop();
    std::fs::write(&bad, bytes).unwrap();
    let o = shot(&["convolve", s(&bad), "--time", "0.1"]);
    assert_eq!(error_code(&o), "bad-payload");
}

#[test]
fn gradient_matches_library_and_file() {
    let dir = TempDir::new().unwrap();
    let g = grid(8);
    let (p, q) = (bump(&g, 20.0, 0.0), bump(&g, -40.0, 120.0));
    let (pf, qf) = (save(&dir, "p.bin", &p), save(&dir, "q.bin", &q));
    let out = dir.path().join("grad.bin");
    let o = shot(&["gradient", s(&pf), s(&qf), "--eps", "0.5", "--tau", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));

    let report = divergence_gradient(&p, &q, &SinkhornParams::new(0.5, 1.0)).unwrap();
    let (file, header) = load(&out);
    assert_eq!(file.values(), report.centered.values());
    assert_eq!(header.applied.unwrap()["operation"], "divergence_gradient");

    let v = stdout_json(&o);
    let bands = v["bands"].as_object().unwrap();
    let names: Vec<_> = default_bands().into_iter().map(|b| b.name).collect();
    assert_eq!(bands.len(), 5);
    for band in default_bands() {
        let from_file = regional_rms(&file, &band).unwrap();
        assert!((bands[&band.name].as_f64().unwrap() - from_file).abs() < 1e-12);
        assert!(names.contains(&band.name));
    }
    assert_eq!(bits(&v["divergence"]["divergence"]), report.divergence.value.to_bits());
}

#[test]
fn gradient_at_equal_inputs_vanishes() {
    let dir = TempDir::new().unwrap();
    let p = save(&dir, "p.bin", &bump(&grid(8), 20.0, 0.0));
    let o = shot(&["gradient", s(&p), s(&p), "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    for (_, rms) in stdout_json(&o)["bands"].as_object().unwrap() {
        assert!(rms.as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn gradient_custom_bands() {
    let dir = TempDir::new().unwrap();
    let p = save(&dir, "p.bin", &bump(&grid(8), 20.0, 0.0));
    let q = save(&dir, "q.bin", &bump(&grid(8), -20.0, 0.0));
    let o = shot(&[
        "gradient", s(&p), s(&q), "--eps", "0.5", "--band", "South:-90:0", "--band", "a:b:0:90",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    let bands = v["bands"].as_object().unwrap();
    assert_eq!(bands.len(), 2);
    assert!(bands.contains_key("South") && bands.contains_key("a:b"));

    let o = shot(&["gradient", s(&p), s(&q), "--eps", "0.5", "--band", "bad:10"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "parameter");
}

#[test]
fn csv_export_is_lossless_to_seventeen_digits() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("u.csv");
    let o = shot(&["generate", "uniform", "--band-limit", "6", "--seed", "2", "--csv", s(&csv)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let f = uniform_random_field(grid(6), 2).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lat_deg,lon_deg,value"));
    let values: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values, f.values());
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn benchmark_table_shape() {
    let o = shot(&[
        "benchmark", "--l-list", "4,8", "--repeats", "3", "--methods", "spectral,dense", "--eps",
        "1", "--max-iter", "20",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(
        text.lines().next(),
        Some("L,n,method,eps,iterations,wall_seconds_mean,wall_seconds_std,status")
    );
    let rows = csv_rows(&o);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert_eq!(row.len(), 8);
        assert!(row[5].parse::<f64>().unwrap() > 0.0);
        assert!(row[6].parse::<f64>().unwrap() >= 0.0);
        assert!(["ok", "unconverged"].contains(&row[7].as_str()));
    }
    assert_eq!(rows[0][1], "56");
    assert_eq!(rows[1][2], "dense");
}

#[test]
fn benchmark_dense_rows_respect_the_guard() {
    let o = shot(&["benchmark", "--l-list", "91", "--repeats", "1", "--methods", "dense"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&o);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][7], "oom-guard");
    assert!(rows[0][5].is_empty());
}

#[test]
fn benchmark_records_per_cell_failures() {
    let o = shot(&["benchmark", "--l-list", "4", "--repeats", "2", "--methods", "spectral", "--eps", "0.01"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(csv_rows(&o)[0][7], "stability-guard");
}
