use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Map, Value};
use shot_core::io::{
    point_from_degrees, read_coeffs, read_field, uniform_random_field, vmf_field, write_coeffs,
    write_field, write_field_csv, FileHeader, RunConfig,
};
use shot_core::reference::dense_geodesic_sinkhorn;
use shot_core::{
    build_grid, default_bands, divergence, divergence_gradient, heat_conv, heat_multipliers,
    regional_rms, solve, DivergenceReport, Field, Grid, LatBand, Result, ShotError, ShtPlan,
    SinkhornSolution, DENSE_GUARD,
};

use crate::{Command, Common, Direction, GenerateKind, Method};

pub enum Outcome {
    Converged,
    Unconverged,
}

impl Outcome {
    fn from(converged: bool) -> Self {
        if converged {
            Outcome::Converged
        } else {
            Outcome::Unconverged
        }
    }
}

pub fn run(cmd: &Command, common: &Common, config: &RunConfig) -> Result<Outcome> {
    match cmd {
        Command::Divergence { p, q } => {
            let params = config.params()?;
            let p = load_field(p, config)?;
            let q = load_field(q, config)?;
            let report = divergence(&p, &q, &params)?;
            print_json(&divergence_json(&report))?;
            Ok(Outcome::from(report.converged()))
        }
        Command::Convolve { input, t } => {
            let f = load_field(input, config)?;
            let h = heat_multipliers(*t, f.grid().band_limit())?;
            let out = heat_conv(&f, &h)?;
            let header = FileHeader::for_field(f.grid())
                .with_applied(json!({ "operation": "heat_conv", "t": t }));
            emit_field(&out, &header, common)?;
            Ok(Outcome::Converged)
        }
        Command::Transform { input, direction } => {
            match direction {
                Direction::Forward => {
                    let f = load_field(input, config)?;
                    let c = ShtPlan::new(f.grid().clone()).forward(&f)?;
                    emit(common.out.as_deref(), |w| write_coeffs(w, &c))?;
                }
                Direction::Inverse => {
                    let (c, header) = read_coeffs(&mut BufReader::new(File::open(input)?))?;
                    check_band_limit(header.band_limit, config)?;
                    let g = Arc::new(build_grid(c.band_limit())?);
                    let f = ShtPlan::new(g).inverse(&c)?;
                    emit_field(&f, &FileHeader::for_field(f.grid()), common)?;
                }
            }
            Ok(Outcome::Converged)
        }
        Command::Gradient { p, q, bands } => {
            let params = config.params()?;
            let p = load_field(p, config)?;
            let q = load_field(q, config)?;
            let bands = if bands.is_empty() {
                default_bands()
            } else {
                bands.iter().map(|s| parse_band(s)).collect::<Result<_>>()?
            };
            let report = divergence_gradient(&p, &q, &params)?;
            let mut table = Map::new();
            for band in &bands {
                table.insert(band.name.clone(), json!(regional_rms(&report.centered, band)?));
            }
            if common.out.is_some() || common.csv.is_some() {
                let header = FileHeader::for_field(p.grid())
                    .with_applied(json!({ "operation": "divergence_gradient", "centered": true }));
                emit_field(&report.centered, &header, common)?;
            }
            print_json(&json!({
                "bands": table,
                "divergence": divergence_json(&report.divergence),
            }))?;
            Ok(Outcome::from(report.divergence.converged()))
        }
        Command::Benchmark { l_list, repeats, methods } => {
            benchmark(config, l_list, *repeats, methods, common)?;
            Ok(Outcome::Converged)
        }
        Command::Generate { kind } => {
            let l = config.band_limit.ok_or_else(|| {
                ShotError::Parameter("generate needs --band-limit".into())
            })?;
            let g = Arc::new(build_grid(l)?);
            let f = match kind {
                GenerateKind::Uniform => uniform_random_field(g, config.seed)?,
                GenerateKind::Vmf { kappa, lat, lon, background } => {
                    vmf_field(g, *kappa, &point_from_degrees(*lat, *lon), *background)?
                }
            };
            emit_field(&f, &FileHeader::for_field(f.grid()), common)?;
            Ok(Outcome::Converged)
        }
    }
}

fn check_band_limit(found: usize, config: &RunConfig) -> Result<()> {
    match config.band_limit {
        Some(allowed) if allowed != found => Err(ShotError::BandLimitMismatch { found, allowed }),
        _ => Ok(()),
    }
}

fn load_field(path: &Path, config: &RunConfig) -> Result<Field> {
    let (f, _) = read_field(&mut BufReader::new(File::open(path)?))?;
    check_band_limit(f.grid().band_limit(), config)?;
    Ok(f)
}

/// Runs `write` against the `--out` file, or standard output.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut Box<dyn Write>) -> Result<()>) -> Result<()> {
    let mut w: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn emit_field(f: &Field, header: &FileHeader, common: &Common) -> Result<()> {
    if let Some(path) = &common.csv {
        let mut w = BufWriter::new(File::create(path)?);
        write_field_csv(&mut w, f)?;
        w.flush()?;
    }
    if common.out.is_none() && common.csv.is_some() {
        return Ok(());
    }
    emit(common.out.as_deref(), |w| write_field(w, f, header))
}

fn print_json(v: &Value) -> Result<()> {
    let mut w = std::io::stdout().lock();
    writeln!(w, "{v}")?;
    Ok(())
}

fn divergence_json(r: &DivergenceReport) -> Value {
    json!({
        "divergence": r.value,
        "cost_pq": r.cost_pq,
        "cost_pp": r.cost_pp,
        "cost_qq": r.cost_qq,
        "mass_p": r.mass_p,
        "mass_q": r.mass_q,
        "iterations": r.iterations,
        "converged": r.converged,
        "marginal_errors": r.marginal_errors,
        "clamped_entries": r.clamped_entries,
    })
}

/// Parses `NAME:LO:HI`; the name may itself contain colons.
fn parse_band(s: &str) -> Result<LatBand> {
    let bad = || ShotError::Parameter(format!("band must be NAME:LO:HI, got {s:?}"));
    let mut parts = s.rsplitn(3, ':');
    let hi = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
    let lo = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
    let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(bad)?;
    LatBand::new(name, lo, hi)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn benchmark(
    config: &RunConfig,
    l_list: &[usize],
    repeats: usize,
    methods: &[Method],
    common: &Common,
) -> Result<()> {
    if repeats == 0 {
        return Err(ShotError::Parameter("repeats must be positive".into()));
    }
    let params = config.params()?;
    emit(common.out.as_deref(), |w| {
        writeln!(w, "L,n,method,eps,iterations,wall_seconds_mean,wall_seconds_std,status")?;
        for &l in l_list {
            let g: Arc<Grid> = Arc::new(build_grid(l)?);
            let n = g.len();
            let p = uniform_random_field(g.clone(), config.seed)?;
            let q = uniform_random_field(g.clone(), config.seed + 1)?;
            for &method in methods {
                let name = match method {
                    Method::Spectral => "spectral",
                    Method::Dense => "dense",
                };
                if method == Method::Dense && n > DENSE_GUARD {
                    writeln!(w, "{l},{n},{name},{},,,,oom-guard", params.eps)?;
                    continue;
                }
                let mut times = Vec::with_capacity(repeats);
                let mut last: Option<Result<SinkhornSolution>> = None;
                for _ in 0..repeats {
                    let start = Instant::now();
                    let sol = match method {
                        Method::Spectral => solve(&p, &q, &params),
                        Method::Dense => dense_geodesic_sinkhorn(&p, &q, &params),
                    };
                    times.push(start.elapsed().as_secs_f64());
                    let failed = sol.is_err();
                    last = Some(sol);
                    if failed {
                        break;
                    }
                }
                match last.expect("at least one repeat") {
                    Ok(sol) => {
                        let (mean, std) = mean_std(&times);
                        let status = if sol.converged { "ok" } else { "unconverged" };
                        writeln!(
                            w,
                            "{l},{n},{name},{},{},{mean:e},{std:e},{status}",
                            params.eps, sol.iterations_used
                        )?;
                    }
                    Err(e) => writeln!(w, "{l},{n},{name},{},,,,{}", params.eps, e.code())?,
                }
                w.flush()?;
            }
        }
        Ok(())
    })
}
