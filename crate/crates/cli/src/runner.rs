//! Model construction, topology assembly, execution, and artifact writing.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use async_gibbs::diagnostics::{batch_means_se, ratio_diagnostic_summary};
use async_gibbs::engine::{
    run_jacobi, run_simulated, run_threaded, Mode, RunOptions, RunResult, WorkerConfig,
};
use async_gibbs::models::gaussian::GaussianTarget;
use async_gibbs::models::gp::{generate_data as gp_generate, GpConfig, GpData, GpModel};
use async_gibbs::models::mixed::{
    generate_data as mixed_generate, read_jsonl, MixedConfig, MixedModel, TrueParams,
};
use async_gibbs::{linalg, CoordinateId, StateLayout, TargetModel};

use crate::config::ExperimentConfig;

/// One constructed target plus whatever side information the summary needs.
pub enum BuiltModel {
    Gaussian(GaussianTarget<f64>),
    Gp(Box<GpModel<f64>>, GpData),
    Mixed(Box<MixedModel<f64>>, TrueParams),
}

pub fn build_model(cfg: &ExperimentConfig) -> anyhow::Result<BuiltModel> {
    let m = &cfg.model;
    match m.family.as_str() {
        "jacobi" => {
            let dim = m.dim.ok_or_else(|| anyhow::anyhow!("model.dim: required for jacobi"))?;
            let block = m.block_size.unwrap_or(1);
            Ok(BuiltModel::Gaussian(GaussianTarget::jacobi(dim, block)?))
        }
        "expcov" => {
            let dim = m.dim.ok_or_else(|| anyhow::anyhow!("model.dim: required for expcov"))?;
            let phi = m.phi.unwrap_or(0.5);
            let block = m.block_size.unwrap_or(1);
            Ok(BuiltModel::Gaussian(GaussianTarget::exponential(
                dim, phi, block,
            )?))
        }
        "gp" => {
            let defaults = GpConfig::default();
            let config = GpConfig {
                n: m.n.unwrap_or(defaults.n),
                rho: m.rho.unwrap_or(defaults.rho),
                phi: m.phi.unwrap_or(defaults.phi),
                block_size: m.block_size.unwrap_or(defaults.block_size),
                band_width: m.band_width,
                noise_sd: m.noise_sd.unwrap_or(defaults.noise_sd),
                ..defaults
            };
            let data = match &m.data_file {
                Some(path) => GpData::read_csv(Path::new(path))?,
                None => gp_generate(&config, m.data_seed.unwrap_or(1))?,
            };
            let model = GpModel::new(config, &data)?;
            Ok(BuiltModel::Gp(Box::new(model), data))
        }
        "mixed" => {
            let defaults = MixedConfig::default();
            let config = MixedConfig {
                n: m.n.unwrap_or(defaults.n),
                d: m.d.unwrap_or(defaults.d),
                t_len: m.t_len.unwrap_or(defaults.t_len),
                p_lags: m.p_lags.unwrap_or(defaults.p_lags),
                kappa_mu: m.kappa_mu.unwrap_or(defaults.kappa_mu),
                kappa_gamma: m.kappa_gamma.unwrap_or(defaults.kappa_gamma),
                epsilon: m.epsilon.unwrap_or(defaults.epsilon),
            };
            let (data, truth) = match &m.data_file {
                Some(path) => read_jsonl::<f64>(Path::new(path))?,
                None => mixed_generate::<f64>(&config, m.data_seed.unwrap_or(1))?,
            };
            Ok(BuiltModel::Mixed(Box::new(MixedModel::new(data)), truth))
        }
        other => anyhow::bail!("model.family: unknown family {other:?}"),
    }
}

/// Transmitted/local coordinate split per family.
fn coordinate_split(model: &BuiltModel) -> (Vec<CoordinateId>, Vec<CoordinateId>) {
    match model {
        BuiltModel::Gaussian(g) => ((0..g.coord_count()).map(CoordinateId).collect(), vec![]),
        BuiltModel::Gp(gp, _) => (
            (0..gp.n_blocks()).map(CoordinateId).collect(),
            (gp.n_blocks()..gp.coord_count()).map(CoordinateId).collect(),
        ),
        BuiltModel::Mixed(mm, _) => {
            let n = mm.config().n;
            (
                (0..n).map(CoordinateId).collect(),
                (n..mm.coord_count()).map(CoordinateId).collect(),
            )
        }
    }
}

/// Contiguous ownership: split the transmitted coordinates into `workers`
/// runs whose lengths differ by at most one.
fn contiguous_topology(
    transmitted: &[CoordinateId],
    local: &[CoordinateId],
    workers: usize,
    mode: Mode,
    diag_sample_prob: f64,
) -> anyhow::Result<Vec<WorkerConfig>> {
    if workers > transmitted.len() {
        anyhow::bail!(
            "topology.workers: {workers} workers but only {} transmitted coordinates",
            transmitted.len()
        );
    }
    let base = transmitted.len() / workers;
    let extra = transmitted.len() % workers;
    let mut cfgs = Vec::with_capacity(workers);
    let mut at = 0usize;
    for w in 0..workers {
        let take = base + usize::from(w < extra);
        let owned = transmitted[at..at + take].to_vec();
        at += take;
        cfgs.push(WorkerConfig::uniform(
            w,
            owned,
            local.to_vec(),
            mode,
            diag_sample_prob,
        ));
    }
    Ok(cfgs)
}

fn default_traced_dims(model: &BuiltModel, layout: &StateLayout) -> Vec<usize> {
    match model {
        BuiltModel::Gaussian(_) => {
            if layout.flat_len() <= 16 {
                (0..layout.flat_len()).collect()
            } else {
                vec![0]
            }
        }
        BuiltModel::Gp(gp, _) => vec![
            layout.offset(gp.mu_coord()),
            layout.offset(gp.sigma2_coord()),
            layout.offset(gp.tau2_coord()),
        ],
        BuiltModel::Mixed(mm, _) => {
            let mut dims: Vec<usize> = Vec::new();
            let d = mm.config().d;
            let obs = mm.config().obs_len();
            let mu0 = layout.offset(mm.mu_coord());
            dims.extend(mu0..mu0 + d);
            let g0 = layout.offset(mm.gamma_coord());
            dims.extend(g0..g0 + obs);
            dims.push(layout.offset(mm.nu_coord()));
            dims
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub id: usize,
    pub steps: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Present when the flat dimension is small enough to track.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub trace_se: Vec<f64>,
    pub messages_sent: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub stale: u64,
    pub recorded_ratios: u64,
    pub inbox_high_water: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetSummary {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub reservoir_seen: u64,
    pub reservoir_len: usize,
    /// Fraction of recorded ratios below 0.5, absent when nothing was recorded.
    pub fraction_below_half: Option<f64>,
    pub histogram: Option<Vec<f64>>,
    pub acceptance_rate: Option<f64>,
    pub divergence_flagged_at: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianInfo {
    pub analytic_mean: Vec<f64>,
    pub analytic_cov: Vec<Vec<f64>>,
    pub jacobi_spectral_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpInfo {
    pub band_width: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub truth: Vec<f64>,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub mu_mean: f64,
    pub sigma2_mean: f64,
    pub tau2_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedInfo {
    pub true_mu: Vec<f64>,
    pub true_gamma: Vec<f64>,
    pub true_nu: f64,
    pub posterior_mu: Vec<f64>,
    pub posterior_gamma: Vec<f64>,
    pub posterior_nu: f64,
    pub mu_signs_agree: bool,
    pub gamma_signs_agree: bool,
    pub rejection_probability: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInfo {
    pub family: String,
    pub flat_len: usize,
    pub coord_offsets: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixed: Option<MixedInfo>,
}

/// Everything `run` writes into `summary.json`. Field order is fixed, floats
/// print via shortest round-trip, and no clocks or paths are embedded, so
/// the file is byte-identical across reruns of the same seeded config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub config: ExperimentConfig,
    pub traced_dims: Vec<usize>,
    pub workers: Vec<WorkerSummary>,
    pub pooled: PooledSummary,
    pub net: NetSummary,
    pub diagnostics: DiagnosticsSummary,
    pub model_info: ModelInfo,
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Execute a parsed configuration and write its artifacts.
pub fn run_experiment_config(
    cfg: &ExperimentConfig,
    out_root: &Path,
) -> anyhow::Result<RunArtifacts> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let (transmitted, local) = coordinate_split(&model);
    let mode = match cfg.run.mode.as_str() {
        "exact" => Mode::Exact,
        _ => Mode::Approximate,
    };

    let layout = match &model {
        BuiltModel::Gaussian(g) => StateLayout::of(&g.initial_state()),
        BuiltModel::Gp(gp, _) => StateLayout::of(&gp.initial_state()),
        BuiltModel::Mixed(mm, _) => StateLayout::of(&mm.initial_state()),
    };
    let traced_dims = cfg
        .run
        .trace_dims
        .clone()
        .unwrap_or_else(|| default_traced_dims(&model, &layout));

    let mut opts = RunOptions::new(cfg.run.steps, cfg.run.seed);
    opts.burn_in = cfg.run.burn_in.unwrap_or(cfg.run.steps / 10);
    opts.thin = cfg.run.thin.max(1);
    opts.traced_dims = traced_dims.clone();
    opts.track_cross_moments = layout.flat_len() <= 64;
    opts.divergence_bound = cfg.run.divergence_bound;
    opts.allow_shared_ownership = cfg.topology.allow_shared_ownership;

    let run = execute(cfg, &model, &transmitted, &local, mode, &opts)?;

    let name = Path::new(&cfg.output.dir)
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    let summary = summarize(name, cfg, &model, &run, &traced_dims);

    let dir = if Path::new(&cfg.output.dir).is_absolute() {
        PathBuf::from(&cfg.output.dir)
    } else {
        out_root.join(&cfg.output.dir)
    };
    write_artifacts(&dir, &summary, &run, cfg)?;
    Ok(RunArtifacts { dir, summary })
}

fn execute(
    cfg: &ExperimentConfig,
    model: &BuiltModel,
    transmitted: &[CoordinateId],
    local: &[CoordinateId],
    mode: Mode,
    opts: &RunOptions,
) -> anyhow::Result<RunResult> {
    if cfg.run.transport == "jacobi" {
        let gaussian = match model {
            BuiltModel::Gaussian(g) => g,
            _ => anyhow::bail!("run.transport: \"jacobi\" requires a gaussian family"),
        };
        let jrun = run_jacobi(
            gaussian,
            nalgebra::DVector::zeros(gaussian.dim()),
            cfg.run.steps,
            cfg.run.burn_in.unwrap_or(cfg.run.steps / 10),
            cfg.run.seed,
            cfg.run.divergence_bound,
            &opts.traced_dims,
        )?;
        // Present the synchronous run through the common result shape.
        return Ok(jacobi_as_run_result(gaussian, jrun, opts));
    }

    let workers = contiguous_topology(
        transmitted,
        local,
        cfg.topology.workers,
        mode,
        cfg.run.diag_sample_prob,
    )?;
    let net = cfg.network_config()?;
    let schedule = cfg.schedule();
    let wall = std::time::Duration::from_secs(cfg.run.wall_clock_limit_secs);
    let result = match (cfg.run.transport.as_str(), model) {
        ("simulated", BuiltModel::Gaussian(g)) => run_simulated(g, &workers, &net, &schedule, opts)?,
        ("simulated", BuiltModel::Gp(gp, _)) => run_simulated(&**gp, &workers, &net, &schedule, opts)?,
        ("simulated", BuiltModel::Mixed(mm, _)) => {
            run_simulated(&**mm, &workers, &net, &schedule, opts)?
        }
        ("threaded", BuiltModel::Gaussian(g)) => run_threaded(g, &workers, opts, wall)?,
        ("threaded", BuiltModel::Gp(gp, _)) => run_threaded(&**gp, &workers, opts, wall)?,
        ("threaded", BuiltModel::Mixed(mm, _)) => run_threaded(&**mm, &workers, opts, wall)?,
        (other, _) => anyhow::bail!("run.transport: unknown transport {other:?}"),
    };
    Ok(result)
}

fn jacobi_as_run_result(
    gaussian: &GaussianTarget<f64>,
    jrun: async_gibbs::engine::JacobiRun,
    opts: &RunOptions,
) -> RunResult {
    use async_gibbs::diagnostics::Reservoir;
    use async_gibbs::engine::{NetCounters, WorkerCounters, WorkerResult};
    let final_values = Vec::new();
    RunResult {
        workers: vec![WorkerResult {
            worker_id: 0,
            final_values,
            moments: jrun.moments,
            traces: jrun.traces,
            counters: WorkerCounters {
                own_samples: jrun.steps_run,
                ..WorkerCounters::default()
            },
        }],
        reservoir: Reservoir::new(opts.reservoir_capacity),
        divergence_flagged_at: jrun.divergence_flagged_at,
        net: NetCounters::default(),
        traced_dims: opts.traced_dims.clone(),
        coord_offsets: (0..gaussian.dim()).collect(),
        flat_len: gaussian.dim(),
    }
}

fn summarize(
    name: String,
    cfg: &ExperimentConfig,
    model: &BuiltModel,
    run: &RunResult,
    traced_dims: &[usize],
) -> RunSummary {
    let workers = run
        .workers
        .iter()
        .map(|w| WorkerSummary {
            id: w.worker_id,
            steps: w.counters.own_samples,
            mean: w.moments.mean().to_vec(),
            variance: w.moments.variance(),
            covariance: w.moments.covariance(),
            trace_se: w.traces.iter().map(|t| batch_means_se(t)).collect(),
            messages_sent: w.counters.messages_sent,
            accepted: w.counters.accepted,
            rejected: w.counters.rejected,
            stale: w.counters.stale,
            recorded_ratios: w.counters.recorded_ratios,
            inbox_high_water: w.counters.inbox_high_water,
        })
        .collect::<Vec<_>>();

    let pooled_moments = run.pooled_moments();
    let pooled = PooledSummary {
        mean: pooled_moments.mean().to_vec(),
        variance: pooled_moments.variance(),
        covariance: pooled_moments.covariance(),
    };

    let (frac, hist) = match ratio_diagnostic_summary(&run.reservoir, 0.5) {
        Ok((f, h)) => (Some(f), Some(h.bins)),
        Err(_) => (None, None),
    };
    let (acc, rej) = run.workers.iter().fold((0u64, 0u64), |(a, r), w| {
        (a + w.counters.accepted, r + w.counters.rejected)
    });
    let diagnostics = DiagnosticsSummary {
        reservoir_seen: run.reservoir.seen(),
        reservoir_len: run.reservoir.len(),
        fraction_below_half: frac,
        histogram: hist,
        acceptance_rate: (acc + rej > 0).then(|| acc as f64 / (acc + rej) as f64),
        divergence_flagged_at: run.divergence_flagged_at,
    };

    let mut info = ModelInfo {
        family: cfg.model.family.clone(),
        flat_len: run.flat_len,
        coord_offsets: run.coord_offsets.clone(),
        gaussian: None,
        gp: None,
        mixed: None,
    };
    match model {
        BuiltModel::Gaussian(g) => {
            let dim = g.dim();
            info.gaussian = Some(GaussianInfo {
                analytic_mean: g.mean().iter().copied().collect(),
                analytic_cov: (0..dim)
                    .map(|i| (0..dim).map(|j| g.covariance()[(i, j)]).collect())
                    .collect(),
                jacobi_spectral_radius: linalg::jacobi_spectral_radius(g.precision())
                    .unwrap_or(f64::NAN),
            });
        }
        BuiltModel::Gp(gp, data) => {
            let n = gp.config().n;
            let mean = &pooled.mean;
            let var = &pooled.variance;
            info.gp = Some(GpInfo {
                band_width: gp.band_width(),
                x: data.x.clone(),
                y: data.y.clone(),
                truth: data
                    .x
                    .iter()
                    .map(|&x| async_gibbs::models::gp::true_function(x))
                    .collect(),
                posterior_mean: mean[..n].to_vec(),
                posterior_sd: var[..n].iter().map(|v| v.sqrt()).collect(),
                mu_mean: mean[n],
                sigma2_mean: mean[n + 1],
                tau2_mean: mean[n + 2],
            });
        }
        BuiltModel::Mixed(mm, truth) => {
            let d = mm.config().d;
            let obs = mm.config().obs_len();
            let mu0 = run.coord_offsets[mm.mu_coord().0];
            let g0 = run.coord_offsets[mm.gamma_coord().0];
            let nu0 = run.coord_offsets[mm.nu_coord().0];
            let mean = &pooled.mean;
            let posterior_mu = mean[mu0..mu0 + d].to_vec();
            let posterior_gamma = mean[g0..g0 + obs].to_vec();
            let signs = |est: &[f64], truth: &[f64]| {
                est.iter()
                    .zip(truth)
                    .all(|(e, t)| e.signum() == t.signum())
            };
            let rejection = (!run.reservoir.is_empty()).then(|| {
                1.0 - run.reservoir.items().iter().map(|s| s.alpha).sum::<f64>()
                    / run.reservoir.len() as f64
            });
            info.mixed = Some(MixedInfo {
                true_mu: truth.mu.clone(),
                true_gamma: truth.gamma.clone(),
                true_nu: truth.nu,
                mu_signs_agree: signs(&posterior_mu, &truth.mu),
                gamma_signs_agree: signs(&posterior_gamma, &truth.gamma),
                posterior_mu,
                posterior_gamma,
                posterior_nu: mean[nu0],
                rejection_probability: rejection,
            });
        }
    }

    RunSummary {
        name,
        config: cfg.clone(),
        traced_dims: traced_dims.to_vec(),
        workers,
        pooled,
        net: NetSummary {
            sent: run.net.sent,
            delivered: run.net.delivered,
            dropped: run.net.dropped,
        },
        diagnostics,
        model_info: info,
    }
}

fn write_artifacts(
    dir: &Path,
    summary: &RunSummary,
    run: &RunResult,
    cfg: &ExperimentConfig,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(summary)?;
    std::fs::write(dir.join("summary.json"), &json)?;

    if cfg.output.formats.iter().any(|f| f == "csv") {
        if let Some(hist) = &summary.diagnostics.histogram {
            let mut out = String::from("bin_lo,bin_hi,mass\n");
            let nb = hist.len();
            for (k, mass) in hist.iter().enumerate() {
                let lo = k as f64 / nb as f64;
                let hi = (k + 1) as f64 / nb as f64;
                out.push_str(&format!("{lo},{hi},{mass}\n"));
            }
            std::fs::write(dir.join("histogram.csv"), out)?;
        }
        if !run.traced_dims.is_empty() {
            let tdir = dir.join("traces");
            std::fs::create_dir_all(&tdir)?;
            for w in &run.workers {
                let mut f =
                    std::io::BufWriter::new(std::fs::File::create(tdir.join(format!(
                        "trace_w{}.csv",
                        w.worker_id
                    )))?);
                write!(f, "step")?;
                for dim in &run.traced_dims {
                    write!(f, ",dim{dim}")?;
                }
                writeln!(f)?;
                let len = w.traces.first().map_or(0, |t| t.len());
                for k in 0..len {
                    write!(f, "{k}")?;
                    for t in &w.traces {
                        write!(f, ",{}", t[k])?;
                    }
                    writeln!(f)?;
                }
            }
        }
    }
    Ok(())
}

/// Parse, run, and write one experiment from a config file path.
pub fn run_experiment(config_path: &Path, out_root: &Path) -> anyhow::Result<RunArtifacts> {
    let cfg = ExperimentConfig::from_path(config_path)?;
    run_experiment_config(&cfg, out_root)
}
