//! Experiment orchestration: single runs, estimation, sweeps, comparisons.

use std::path::Path;
use std::sync::Arc;

use crate::compression::{dense_bytes, omega_bytes, payload_bytes};
use crate::convergence::{
    bound_coefficients, estimate_params, BoundCoefficients, ConvergenceParams,
    FirstRoundObservations,
};
use crate::learning::{
    generate_federated, gradient, init_model, load_csv, loss, Architecture, DataSpec,
    FederatedDataset, ParamVector,
};
use crate::optimizer::{
    acs_solve, acs_solve_multistart, minimize_1d_convex, reoptimize_on_env_change,
    Objective,
};
use crate::protocol::{
    run_experiment_with, ExperimentLog, Mode, RoundRecord, RunControl, Simulation, SystemConfig,
};
use crate::rngstream::derive_seed;
use crate::timecost::{h_coefficients, h_direct, NetworkEnv};

use super::config::{frac_to_k, ExperimentConfig, LambdaChoice, Strategy, TauLocalChoice};
use super::HarnessError;

/// The static pieces of an experiment: model, data, network.
pub struct World {
    pub arch: Architecture,
    pub d: usize,
    pub data: Arc<FederatedDataset>,
    pub env: NetworkEnv,
    pub initial_model: ParamVector,
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<World, HarnessError> {
    cfg.validate()?;
    let arch = cfg.architecture();
    arch.validate()?;
    let d = arch.param_count();
    let data = match &cfg.csv_path {
        Some(path) => {
            let data = load_csv(path, cfg.n_clients, cfg.csv_test_fraction, cfg.data_seed())?;
            if data.label_count != cfg.label_count {
                return Err(HarnessError::Config(format!(
                    "csv has {} labels but label_count={}",
                    data.label_count, cfg.label_count
                )));
            }
            if data.clients[0][0].features.len() != cfg.feature_dim {
                return Err(HarnessError::Config(format!(
                    "csv has {} features but feature_dim={}",
                    data.clients[0][0].features.len(),
                    cfg.feature_dim
                )));
            }
            data
        }
        None => {
            let spec = DataSpec {
                n_clients: cfg.n_clients,
                per_client: cfg.total_samples / cfg.n_clients,
                labels_per_client: cfg.labels_per_client,
                label_count: cfg.label_count,
                feature_dim: cfg.feature_dim,
                test_samples: cfg.test_samples,
                center_scale: cfg.center_scale,
                noise: cfg.noise,
            };
            generate_federated(&spec, cfg.data_seed())?
        }
    };
    let env = cfg.network_env(d)?;
    let initial_model = init_model(&arch, cfg.init_seed())?;
    Ok(World {
        arch,
        d,
        data: Arc::new(data),
        env,
        initial_model,
    })
}

/// `argmin_lambda h(k, lambda)` on a log bracket; the squared bound
/// objective is increasing in `h` for fixed `k`, so this is also its
/// per-`k` optimal block rate.
pub fn auto_lambda(env: &NetworkEnv, k: usize, lo: f64, hi: f64) -> Result<f64, HarnessError> {
    let h = move |lambda: f64| match h_direct(k as f64, lambda, env) {
        Ok(v) => v,
        Err(_) => f64::INFINITY,
    };
    Ok(minimize_1d_convex(|u| h(u.exp()), lo.ln(), hi.ln(), 1e-10)?.exp())
}

fn resolve_lambda(cfg: &ExperimentConfig, env: &NetworkEnv, k: usize) -> Result<f64, HarnessError> {
    match cfg.lambda {
        LambdaChoice::Fixed(l) => Ok(l),
        LambdaChoice::Auto => auto_lambda(env, k, cfg.lambda_min, cfg.lambda_max),
    }
}

fn system_config(cfg: &ExperimentConfig, k: usize, lambda: f64) -> SystemConfig {
    SystemConfig {
        n_clients: cfg.n_clients,
        n_miners: cfg.n_miners,
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch: cfg.batch,
        k,
        lambda,
        budget: cfg.budget_s,
        seed: cfg.seed,
        mode: cfg.mode,
        dropout: cfg.dropout,
        max_rounds: cfg.max_rounds,
        mining: cfg.pow,
        grad_diag_stride: cfg.grad_diag_stride,
        auto_tau_local_factor: match cfg.tau_local_s {
            TauLocalChoice::Auto => Some(cfg.compute_speed_factor),
            TauLocalChoice::Fixed(_) => None,
        },
    }
}

/// One `(k, lambda)` decision and the round it takes effect.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SolutionPoint {
    pub applied_from_round: u32,
    pub k: usize,
    pub lambda: f64,
    /// Squared bound objective at the solution; absent for the probe entry.
    pub objective: Option<f64>,
}

/// A finished run: the simulation (ledger included), its log, and the
/// `(k*, lambda*)` trace when the optimal strategy was used.
pub struct SimRun {
    pub cfg: ExperimentConfig,
    pub sim: Simulation,
    pub log: ExperimentLog,
    pub trace: Vec<SolutionPoint>,
    pub estimated: Option<ConvergenceParams>,
}

impl SimRun {
    pub fn k_final(&self) -> usize {
        self.sim.cfg.k
    }

    pub fn lambda_final(&self) -> f64 {
        self.sim.cfg.lambda
    }
}

/// Per-client full gradients and losses at `w`, in client order.
fn observations_at(
    world: &World,
    w: &ParamVector,
) -> Result<(Vec<ParamVector>, Vec<f64>), HarnessError> {
    let mut grads = Vec::with_capacity(world.data.n_clients());
    let mut losses = Vec::with_capacity(world.data.n_clients());
    for client in &world.data.clients {
        grads.push(gradient(w, &world.arch, client.iter())?);
        losses.push(loss(w, &world.arch, client.iter())?);
    }
    Ok((grads, losses))
}

fn estimate_from_probe(
    cfg: &ExperimentConfig,
    world: &World,
    w0: &ParamVector,
    grads_w0: Vec<ParamVector>,
    w_e: &ParamVector,
) -> Result<ConvergenceParams, HarnessError> {
    let (grads_we, losses_we) = observations_at(world, w_e)?;
    let obs = FirstRoundObservations {
        w0: w0.clone(),
        w_e: w_e.clone(),
        client_grads_w0: grads_w0,
        client_grads_we: grads_we,
        client_losses_we: losses_we,
    };
    let batch = cfg
        .batch
        .unwrap_or_else(|| world.data.clients.iter().map(Vec::len).min().unwrap_or(1));
    let mut params = estimate_params(&obs, cfg.c_const, cfg.epochs, batch)?;
    if cfg.batch.is_some() {
        params.sigma2 = estimate_sigma2(world, w0, &obs.client_grads_w0)?;
    }
    Ok(params)
}

/// Per-client variance of single-sample gradients around the full local
/// gradient, used when mini-batches make the variance term active.
fn estimate_sigma2(
    world: &World,
    w: &ParamVector,
    full_grads: &[ParamVector],
) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::with_capacity(world.data.n_clients());
    for (client, full) in world.data.clients.iter().zip(full_grads) {
        let mut acc = 0.0;
        for sample in client {
            let g = gradient(w, &world.arch, std::iter::once(sample))?;
            acc += g.sub(full).norm_sq();
        }
        out.push(acc / client.len() as f64);
    }
    Ok(out)
}

pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimRun, HarnessError> {
    run_simulation_with(cfg, RunControl::default())
}

pub fn run_simulation_with(
    cfg: &ExperimentConfig,
    control: RunControl,
) -> Result<SimRun, HarnessError> {
    let world = build_world(cfg)?;
    match cfg.strategy {
        Strategy::Fixed => {
            let k = cfg.resolve_k(world.d)?;
            let lambda = resolve_lambda(cfg, &world.env, k)?;
            let mut sim = Simulation::new(
                system_config(cfg, k, lambda),
                world.arch.clone(),
                world.data.clone(),
                world.env.clone(),
                world.initial_model.clone(),
            )?;
            let log = run_experiment_with(&mut sim, &control, |_, _| Ok(()), Vec::new())?;
            Ok(SimRun {
                cfg: cfg.clone(),
                sim,
                log,
                trace: Vec::new(),
                estimated: None,
            })
        }
        Strategy::Optimal => run_optimal(cfg, world, control),
    }
}

fn run_optimal(
    cfg: &ExperimentConfig,
    world: World,
    control: RunControl,
) -> Result<SimRun, HarnessError> {
    let k_probe = frac_to_k(cfg.probe_k_frac, world.d);
    let lambda_probe = resolve_lambda(cfg, &world.env, k_probe)?;
    let mut sim = Simulation::new(
        system_config(cfg, k_probe, lambda_probe),
        world.arch.clone(),
        world.data.clone(),
        world.env.clone(),
        world.initial_model.clone(),
    )?;
    let mut trace = vec![SolutionPoint {
        applied_from_round: 1,
        k: k_probe,
        lambda: lambda_probe,
        objective: None,
    }];

    // gradients at w0 must be taken before the probe round moves the model
    let w0 = world.initial_model.clone();
    let (grads_w0, _losses_w0) = observations_at(&world, &w0)?;

    let probe = sim.simulate_round()?;
    if sim.clock + probe.duration() > sim.cfg.budget {
        // budget cannot fit even the probe round
        let log = run_experiment_with(&mut sim, &control, |_, _| Ok(()), Vec::new())?;
        return Ok(SimRun {
            cfg: cfg.clone(),
            sim,
            log,
            trace,
            estimated: None,
        });
    }
    let probe_record = sim.commit_round(probe)?;

    let params = estimate_from_probe(cfg, &world, &w0, grads_w0, &sim.global_model)?;
    let coeffs = bound_coefficients(&params)?;

    // rate estimates start from the probe round's observations
    let mut ema_up = probe_record.observed_up_rate;
    let mut ema_down = probe_record.observed_down_rate;
    let mut ema_miner = probe_record.observed_miner_rate;
    let alpha = cfg.ema_alpha;

    let objective = build_objective(cfg, &world, &sim, ema_up, ema_down, ema_miner, &coeffs)?;
    let warm = acs_solve(&objective, k_probe as f64, lambda_probe, cfg.acs_tol, cfg.acs_max_sweeps)?;
    let multi = acs_solve_multistart(&objective, cfg.acs_tol, cfg.acs_max_sweeps)?;
    let mut solution = if warm.objective_real <= multi.objective_real {
        warm
    } else {
        multi
    };
    sim.set_compression(solution.k_int)?;
    sim.set_lambda(solution.lambda)?;
    trace.push(SolutionPoint {
        applied_from_round: 2,
        k: solution.k_int,
        lambda: solution.lambda,
        objective: Some(solution.objective_int),
    });

    let cadence = if cfg.mode == Mode::Stochastic {
        cfg.reoptimize_every
    } else {
        // analytic rates never drift, so re-solving cannot change anything
        0
    };
    let mut pending_trace: Vec<SolutionPoint> = Vec::new();
    let log = {
        let world_ref = &world;
        let coeffs_ref = &coeffs;
        let cfg_ref = cfg;
        let trace_ref = &mut pending_trace;
        let solution_ref = &mut solution;
        let ema = (&mut ema_up, &mut ema_down, &mut ema_miner);
        let (ema_up_ref, ema_down_ref, ema_miner_ref) = ema;
        run_experiment_with(
            &mut sim,
            &control,
            move |sim, record| {
                *ema_up_ref = alpha * record.observed_up_rate + (1.0 - alpha) * *ema_up_ref;
                *ema_down_ref = alpha * record.observed_down_rate + (1.0 - alpha) * *ema_down_ref;
                *ema_miner_ref = alpha * record.observed_miner_rate + (1.0 - alpha) * *ema_miner_ref;
                if cadence > 0 && record.round % cadence as u32 == 0 {
                    let objective = build_objective(
                        cfg_ref,
                        world_ref,
                        sim,
                        *ema_up_ref,
                        *ema_down_ref,
                        *ema_miner_ref,
                        coeffs_ref,
                    )
                    .map_err(|e| {
                        crate::protocol::ProtocolError::InvalidConfig(format!(
                            "re-optimization failed: {e}"
                        ))
                    })?;
                    let sol = reoptimize_on_env_change(
                        solution_ref,
                        &objective,
                        cfg_ref.acs_tol,
                        cfg_ref.acs_max_sweeps,
                    )
                    .map_err(|e| {
                        crate::protocol::ProtocolError::InvalidConfig(format!(
                            "re-optimization failed: {e}"
                        ))
                    })?;
                    if sol.k_int != sim.cfg.k || sol.lambda != sim.cfg.lambda {
                        sim.set_compression(sol.k_int)?;
                        sim.set_lambda(sol.lambda)?;
                        trace_ref.push(SolutionPoint {
                            applied_from_round: record.round + 1,
                            k: sol.k_int,
                            lambda: sol.lambda,
                            objective: Some(sol.objective_int),
                        });
                    }
                    *solution_ref = sol;
                }
                Ok(())
            },
            vec![probe_record],
        )?
    };
    trace.extend(pending_trace);
    Ok(SimRun {
        cfg: cfg.clone(),
        sim,
        log,
        trace,
        estimated: Some(params),
    })
}

#[allow(clippy::too_many_arguments)]
fn build_objective(
    cfg: &ExperimentConfig,
    world: &World,
    sim: &Simulation,
    ema_up: f64,
    ema_down: f64,
    ema_miner: f64,
    coeffs: &BoundCoefficients,
) -> Result<Objective, HarnessError> {
    let mut env = world.env.clone();
    env.up_rates = vec![ema_up; cfg.n_clients];
    env.down_rates = vec![ema_down; cfg.n_clients];
    env.miner_rates = vec![ema_miner; cfg.n_miners];
    // the effective tau_local may have been auto-measured in round 1
    env.tau_local = sim.effective_tau_local();
    let h = h_coefficients(&env)?;
    Ok(Objective::new(h, *coeffs, world.d, cfg.budget_s)?
        .with_lambda_range(cfg.lambda_min, cfg.lambda_max)?)
}

/// Run one probe global iteration and estimate the bound constants.
pub fn run_estimate(cfg: &ExperimentConfig) -> Result<ConvergenceParams, HarnessError> {
    let world = build_world(cfg)?;
    let k_probe = frac_to_k(cfg.probe_k_frac, world.d);
    let lambda_probe = resolve_lambda(cfg, &world.env, k_probe)?;
    let mut sim = Simulation::new(
        system_config(cfg, k_probe, lambda_probe),
        world.arch.clone(),
        world.data.clone(),
        world.env.clone(),
        world.initial_model.clone(),
    )?;
    let w0 = world.initial_model.clone();
    let (grads_w0, _) = observations_at(&world, &w0)?;
    sim.run_round()?;
    estimate_from_probe(cfg, &world, &w0, grads_w0, &sim.global_model)
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::from("nan")
    }
}

/// Write `metrics.csv`, `summary.json`, `ledger.chain`, and
/// `solution_trace.json` under `dir`.
pub fn write_outputs(run: &SimRun, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&run.log.records))?;
    std::fs::write(dir.join("summary.json"), summary_json(run)?)?;
    run.sim.ledger.write(&dir.join("ledger.chain"))?;
    let mut trace = serde_json::to_string_pretty(&run.trace)?;
    trace.push('\n');
    std::fs::write(dir.join("solution_trace.json"), trace)?;
    Ok(())
}

pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(
        "round,tau_local,tau_up,tau_cross,tau_mine,tau_down,tau_aggre,fork_attempts,bytes_total,cum_time_s,test_loss,test_acc\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            fmt_f64(r.tau_local),
            fmt_f64(r.tau_up),
            fmt_f64(r.tau_cross),
            fmt_f64(r.tau_mine),
            fmt_f64(r.tau_down),
            fmt_f64(r.tau_aggre),
            r.fork_attempts,
            fmt_f64(r.bytes_total()),
            fmt_f64(r.cum_time),
            fmt_f64(r.test_loss),
            fmt_f64(r.test_acc),
        ));
    }
    out
}

fn hex32(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(serde::Serialize)]
struct Summary<'a> {
    seed: u64,
    rounds: usize,
    k_final: usize,
    lambda_final: f64,
    final_loss: f64,
    final_acc: f64,
    total_bytes: f64,
    cum_time_s: f64,
    final_model_digest: String,
    reached_target: bool,
    warning: &'a Option<String>,
    estimated_params: &'a Option<ConvergenceParams>,
    solution_trace: &'a [SolutionPoint],
    config: &'a ExperimentConfig,
}

pub fn summary_json(run: &SimRun) -> Result<String, HarnessError> {
    let summary = Summary {
        seed: run.cfg.seed,
        rounds: run.log.completed_rounds,
        k_final: run.k_final(),
        lambda_final: run.lambda_final(),
        final_loss: run.log.final_loss,
        final_acc: run.log.final_acc,
        total_bytes: run.log.total_bytes,
        cum_time_s: run.log.records.last().map(|r| r.cum_time).unwrap_or(0.0),
        final_model_digest: hex32(&run.log.final_model_digest),
        reached_target: run.log.reached_target,
        warning: &run.log.warning,
        estimated_params: &run.estimated,
        solution_trace: &run.trace,
        config: &run.cfg,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    Ok(text)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub arm: usize,
    pub k_frac: f64,
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
    pub rounds: usize,
    pub cum_time_s: f64,
    pub total_bytes: f64,
    pub final_loss: f64,
    pub final_acc: f64,
}

/// Run one arm per compression fraction, deriving each arm's seed from the
/// master seed by arm index. Data and initialization seeds are pinned so
/// every arm trains the same problem.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    k_fracs: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>, HarnessError> {
    if k_fracs.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one k fraction".into()));
    }
    let d = {
        let arch = cfg.architecture();
        arch.validate()?;
        arch.param_count()
    };
    let mut rows = Vec::with_capacity(k_fracs.len());
    for (i, &frac) in k_fracs.iter().enumerate() {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(HarnessError::Config(format!(
                "k fraction {frac} must be in (0, 1]"
            )));
        }
        let mut arm_cfg = cfg.clone();
        arm_cfg.seed = derive_seed(cfg.seed, &format!("sweep/arm/{i}"));
        arm_cfg.data_seed = Some(cfg.data_seed());
        arm_cfg.init_seed = Some(cfg.init_seed());
        arm_cfg.strategy = Strategy::Fixed;
        arm_cfg.k = Some(frac_to_k(frac, d));
        let run = run_simulation(&arm_cfg)?;
        if let Some(dir) = out_dir {
            write_outputs(&run, &dir.join(format!("arm_{i:03}")))?;
        }
        rows.push(SweepRow {
            arm: i,
            k_frac: frac,
            k: run.k_final(),
            lambda: run.lambda_final(),
            seed: arm_cfg.seed,
            rounds: run.log.completed_rounds,
            cum_time_s: run.log.records.last().map(|r| r.cum_time).unwrap_or(0.0),
            total_bytes: run.log.total_bytes,
            final_loss: run.log.final_loss,
            final_acc: run.log.final_acc,
        });
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "arm,k_frac,k,lambda,seed,rounds,cum_time_s,total_bytes,final_loss,final_acc\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.arm,
            fmt_f64(r.k_frac),
            r.k,
            fmt_f64(r.lambda),
            r.seed,
            r.rounds,
            fmt_f64(r.cum_time_s),
            fmt_f64(r.total_bytes),
            fmt_f64(r.final_loss),
            fmt_f64(r.final_acc),
        ));
    }
    out
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareRow {
    pub arm: String,
    pub k: usize,
    pub lambda: f64,
    /// Dense value-only traffic of one uncompressed update divided by this
    /// arm's compressed update bytes; 1 for the uncompressed arm.
    pub comm_rate: f64,
    pub traffic_bytes: f64,
    pub time_to_target_s: Option<f64>,
    /// Train time as a percentage of the uncompressed arm's.
    pub reduced_to_pct: Option<f64>,
    pub reached: bool,
}

/// Time-to-accuracy comparison: the jointly optimized `(k*, lambda*)` arm,
/// each fixed-`k` baseline, and the uncompressed `k = d` arm, all run until
/// `target_acc` or the time budget. The uncompressed arm's traffic is
/// counted dense (values only, no index overhead).
pub fn run_comparison(
    cfg: &ExperimentConfig,
    target_acc: f64,
) -> Result<Vec<CompareRow>, HarnessError> {
    if !(0.0..=1.0).contains(&target_acc) {
        return Err(HarnessError::Config(format!(
            "target accuracy {target_acc} must be in [0, 1]"
        )));
    }
    let d = {
        let arch = cfg.architecture();
        arch.validate()?;
        arch.param_count()
    };
    let control = RunControl {
        stop_at_accuracy: Some(target_acc),
    };
    let mut arms: Vec<(String, ExperimentConfig)> = Vec::new();
    {
        let mut optimal = cfg.clone();
        optimal.strategy = Strategy::Optimal;
        arms.push(("k_star".into(), optimal));
    }
    for &frac in &cfg.baseline_k_fracs {
        let mut arm = cfg.clone();
        arm.strategy = Strategy::Fixed;
        arm.k = Some(frac_to_k(frac, d));
        arms.push((format!("k={:.2}%d", frac * 100.0), arm));
    }
    {
        let mut dense = cfg.clone();
        dense.strategy = Strategy::Fixed;
        dense.k = Some(d);
        arms.push(("uncompressed".into(), dense));
    }

    let omega = omega_bytes(d, cfg.s_bytes);
    let mut rows = Vec::new();
    for (i, (name, mut arm_cfg)) in arms.into_iter().enumerate() {
        arm_cfg.seed = derive_seed(cfg.seed, &format!("compare/arm/{i}"));
        arm_cfg.data_seed = Some(cfg.data_seed());
        arm_cfg.init_seed = Some(cfg.init_seed());
        let run = run_simulation_with(&arm_cfg, control)?;
        let uncompressed = name == "uncompressed";
        let traffic = if uncompressed {
            // dense accounting: s bytes per value, no index field
            run.log.total_bytes * (cfg.s_bytes as f64 / omega)
        } else {
            run.log.total_bytes
        };
        let k = run.k_final();
        let comm_rate = if uncompressed {
            1.0
        } else {
            dense_bytes(d, cfg.s_bytes) / payload_bytes(k, d, cfg.s_bytes)
        };
        rows.push(CompareRow {
            arm: name,
            k,
            lambda: run.lambda_final(),
            comm_rate,
            traffic_bytes: traffic,
            time_to_target_s: run
                .log
                .reached_target
                .then(|| run.log.records.last().map(|r| r.cum_time).unwrap_or(0.0)),
            reduced_to_pct: None,
            reached: run.log.reached_target,
        });
    }
    let base_time = rows
        .last()
        .and_then(|r| r.time_to_target_s);
    if let Some(base) = base_time {
        for r in rows.iter_mut() {
            r.reduced_to_pct = r.time_to_target_s.map(|t| 100.0 * t / base);
        }
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out =
        String::from("arm,k,lambda,comm_rate,traffic_bytes,time_to_target_s,reduced_to_pct,reached\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.arm,
            r.k,
            fmt_f64(r.lambda),
            fmt_f64(r.comm_rate),
            fmt_f64(r.traffic_bytes),
            r.time_to_target_s.map(fmt_f64).unwrap_or_else(|| "unreached".into()),
            r.reduced_to_pct.map(fmt_f64).unwrap_or_else(|| "".into()),
            r.reached,
        ));
    }
    out
}
