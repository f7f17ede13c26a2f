//! Executes a validated config and renders the result document.

use std::io::Write;

use cpn_thermal::canonical::{self, McOptions};
use cpn_thermal::fokker_planck::{solve, Density1D, FpOperator, FpParams};
use cpn_thermal::moments::{liouville_rhs, verify_liouville};
use cpn_thermal::sde::{simulate_ensemble, EnsembleOptions, InitialLaw};
use cpn_thermal::{DensityMatrix, HermitianOperator, PureState, SecondMoment, C64};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{parse_complex, Format, Mode, RunConfig};
use crate::error::CliError;
use crate::output::{document, Table};

const DEFAULT_SAMPLES: usize = 100_000;

/// Initial law for the SDE modes: `uniform` (default), `equal`, `eigen:K`
/// (K-th level in ascending order) or a JSON amplitude list.
pub fn initial_law(config: &RunConfig, dim: usize) -> Result<InitialLaw, CliError> {
    let bad = |msg: String| CliError::validation(format!("`initial`: {msg}"));
    let spec = config.initial.as_deref().unwrap_or("uniform").trim();
    let state = if spec == "uniform" {
        return Ok(InitialLaw::Uniform);
    } else if spec == "equal" {
        PureState::from_real(&vec![1.0; dim]).map_err(|e| bad(e.to_string()))?
    } else if let Some(k) = spec.strip_prefix("eigen:") {
        let k: usize = k.trim().parse().map_err(|e| bad(format!("bad level index: {e}")))?;
        if k >= dim {
            return Err(bad(format!("level {k} out of range for dimension {dim}")));
        }
        let spectrum = config.hamiltonian()?.spectrum();
        PureState::from_vector(spectrum.vectors().column(k).into_owned()).map_err(|e| bad(e.to_string()))?
    } else if spec.starts_with('[') {
        let value: Value = serde_json::from_str(spec).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        let amps: Option<Vec<C64>> = value.as_array().map(|a| a.iter().map(parse_complex).collect()).unwrap_or(None);
        let amps = amps.ok_or_else(|| bad("expected numbers or [re, im] pairs".into()))?;
        if amps.len() != dim {
            return Err(bad(format!("expected {dim} amplitudes, found {}", amps.len())));
        }
        PureState::new(amps).map_err(|e| bad(e.to_string()))?
    } else {
        return Err(bad(format!("unrecognised value `{spec}`")));
    };
    Ok(InitialLaw::Fixed(state))
}

/// Initial density for mode fp: `stationary` (default), `uniform`, or
/// `gaussian` with `center` (default 0) and `width` (default 0.1).
pub fn fp_initial(config: &RunConfig, cells: usize) -> Result<Density1D, CliError> {
    let spec = config.initial.as_deref().unwrap_or("stationary").trim();
    let h = config.h.unwrap_or(1.0);
    let density = match spec {
        "stationary" => Density1D::stationary(cells, h, config.beta()?),
        "uniform" => Density1D::uniform(cells),
        "gaussian" => Density1D::gaussian(cells, config.center.unwrap_or(0.0), config.width.unwrap_or(0.1)),
        other => return Err(CliError::validation(format!("`initial`: unrecognised value `{other}` for mode fp"))),
    };
    density.map_err(CliError::from_core)
}

fn core<T>(r: cpn_thermal::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from_core)
}

fn render(config: &RunConfig, table: Table) -> String {
    match config.format() {
        Format::Csv => table.to_csv(config),
        Format::Json => table.to_json(config),
    }
}

fn matrix_json(m: &DMatrix<C64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!([m[(i, j)].re, m[(i, j)].im])).collect()))
            .collect(),
    )
}

fn simulate(config: &RunConfig, threads: Option<usize>) -> Result<String, CliError> {
    let h = config.hamiltonian()?;
    let params = config.sde_params()?;
    let law = initial_law(config, h.dim())?;
    let options = EnsembleOptions {
        workers: threads,
        ..Default::default()
    };
    let series = core(simulate_ensemble(&law, &h, &params, &options))?;
    let rows = (0..series.times.len())
        .map(|k| {
            vec![
                series.times[k],
                series.mean_energy[k],
                series.energy_se[k],
                series.mean_variance[k],
                series.variance_se[k],
            ]
        })
        .collect();
    Ok(render(
        config,
        Table {
            columns: vec!["t", "U", "U_se", "EV", "EV_se"],
            rows,
        },
    ))
}

fn equilibrium(config: &RunConfig) -> Result<String, CliError> {
    let spectrum = config.hamiltonian()?.spectrum();
    let mut rows = Vec::new();
    for beta in config.beta_values()? {
        let r = core(canonical::canonical(&spectrum, beta))?;
        let identity = core(canonical::capacity_identity(&spectrum, beta))?;
        let vn = core(canonical::von_neumann_energy(&spectrum, beta))?;
        rows.push(vec![beta, r.z_rel, r.u, r.var_total, r.c, identity.residual(), vn]);
    }
    Ok(render(
        config,
        Table {
            columns: vec!["beta", "z_rel", "U", "var_total", "C", "identity_residual", "U_von_neumann"],
            rows,
        },
    ))
}

fn fokker_planck(config: &RunConfig) -> Result<String, CliError> {
    let cells = config.grid.expect("validated");
    let (h, beta, kappa) = (config.h.unwrap_or(1.0), config.beta()?, config.kappa()?);
    let op = core(FpOperator::new(cells, h, beta, kappa))?;
    let params = FpParams {
        h,
        beta,
        kappa,
        dt: config.dt,
        t_max: config.fp_t_max(op.max_dt())?,
        record_stride: config.record_stride.unwrap_or(100),
    };
    let initial = fp_initial(config, cells)?;
    let run = core(solve(&initial, &params))?;
    let s = &run.series;
    let rows = (0..s.len())
        .map(|k| {
            vec![
                s.times[k],
                s.entropy[k],
                s.energy[k],
                s.entropy_rate[k],
                s.energy_rate[k],
                s.production[k],
                s.residual[k],
                s.energy_rhs[k],
                s.l1_distance[k],
            ]
        })
        .collect();
    Ok(render(
        config,
        Table {
            columns: vec!["t", "S", "U", "dSdt", "dUdt", "production", "residual", "dUdt_rhs", "l1_distance"],
            rows,
        },
    ))
}

fn verify(config: &RunConfig, threads: Option<usize>) -> Result<String, CliError> {
    let h = config.hamiltonian()?;
    let params = config.sde_params()?;
    let law = initial_law(config, h.dim())?;
    let options = EnsembleOptions {
        track_moments: true,
        workers: threads,
        ..Default::default()
    };
    let series = core(simulate_ensemble(&law, &h, &params, &options))?;
    let snapshots = series.moments.expect("moments were requested");
    let report = core(verify_liouville(&snapshots, &h, params.beta, params.kappa))?;
    let points: Vec<Value> = report
        .points
        .iter()
        .map(|p| {
            json!({
                "t": p.time,
                "components": p.components.iter().map(|c| json!({
                    "row": c.row,
                    "col": c.col,
                    "part": if c.imaginary { "im" } else { "re" },
                    "derivative": c.derivative,
                    "rhs": c.rhs,
                    "residual": c.residual,
                    "error": c.error,
                    "normalized": c.normalized,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(document(
        config,
        json!({
            "summary": {
                "snapshots": snapshots.len(),
                "fraction_within_3": report.fraction_within_3,
                "max_abs_normalized": report.max_abs_normalized,
                "max_trace": report.max_trace,
                "max_hermiticity": report.max_hermiticity,
            },
            "points": points,
        }),
    ))
}

fn sample(config: &RunConfig, threads: Option<usize>) -> Result<String, CliError> {
    let h: HermitianOperator = config.hamiltonian()?;
    let beta = config.beta()?;
    let options = McOptions {
        samples: config.samples.unwrap_or(DEFAULT_SAMPLES),
        seed: config.seed,
        workers: threads,
    };
    let mc = core(canonical::equilibrium_moments_mc(&h, beta, &options))?;
    let rho_exact = core(canonical::equilibrium_density_matrix(&h, beta))?;
    let r2_exact: SecondMoment = core(canonical::equilibrium_second_moment(&h, beta))?;
    let energy_exact = core(rho_exact.expectation(&h))?;
    let von_neumann = DensityMatrix::von_neumann(&h, beta);
    let kappa = config.kappa.unwrap_or(1.0);
    let rho_mc = DensityMatrix::new(mc.rho.clone()).map_err(|e| CliError::runtime(e.to_string()))?;
    let rhs_mc = core(liouville_rhs(&rho_mc, &mc.r2, &h, beta, kappa))?;
    let rhs_exact = core(liouville_rhs(&rho_exact, &r2_exact, &h, beta, kappa))?;
    Ok(document(
        config,
        json!({
            "samples": mc.samples,
            "rho": matrix_json(&mc.rho),
            "rho_se": matrix_json(&mc.rho_se),
            "rho_exact": matrix_json(rho_exact.matrix()),
            "rho_von_neumann": matrix_json(von_neumann.matrix()),
            "energy": { "value": mc.energy.value, "se": mc.energy.std_error },
            "energy_exact": energy_exact,
            "energy_von_neumann": core(von_neumann.expectation(&h))?,
            "mean_variance": { "value": mc.mean_variance.value, "se": mc.mean_variance.std_error },
            "rhs_norm": rhs_mc.norm(),
            "rhs_norm_exact": rhs_exact.norm(),
        }),
    ))
}

/// Runs the study and returns the output document. `threads` only affects
/// speed; the document is identical for any value.
pub fn execute(config: &RunConfig, threads: Option<usize>) -> Result<String, CliError> {
    config.validate()?;
    match config.mode {
        Mode::Simulate => simulate(config, threads),
        Mode::Equilibrium => equilibrium(config),
        Mode::Fp => fokker_planck(config),
        Mode::VerifyLiouville => verify(config, threads),
        Mode::Sample => sample(config, threads),
    }
}

/// Executes and writes to `config.out`, or to stdout when unset.
pub fn run(config: &RunConfig, threads: Option<usize>) -> Result<(), CliError> {
    let text = execute(config, threads)?;
    match &config.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::runtime(format!("cannot write to stdout: {e}"))),
    }
}
