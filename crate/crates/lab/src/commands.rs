//! Subcommand implementations. Each returns its output files in memory;
//! [`execute`] writes them together with the run manifest.

use std::path::Path;

use serde::Serialize;

use privlab_core::bounds::{all_bounds, sweep_designs, BoundInputs, BoundReport};
use privlab_core::federated::RoundRecord;
use privlab_core::mbp;

use crate::checks::{self, CheckOutcome};
use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::manifest::{config_hash, now, RunManifest, SeedPlan};
use crate::output::{csv_bytes, json_bytes, jsonl_bytes, num, opt_num, Outputs};
use crate::pipeline::{mbp_stream, replicate_session, run_replicates, summarize, ComplexitySummary};

pub const INFEASIBLE: &str = "infeasible";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Attack,
    Bounds,
    EstimateMbp,
    Sweep,
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Attack => "attack",
            Command::Bounds => "bounds",
            Command::EstimateMbp => "estimate-mbp",
            Command::Sweep => "sweep",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub trace_stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            trace_stride: 1,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, LabError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("cannot start {workers} workers: {e}")))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    replicate: usize,
    stride: usize,
    trace: &'a privlab_core::attack::AttackTrace,
}

#[derive(Serialize)]
struct RoundLine<'a> {
    replicate: usize,
    record: &'a RoundRecord,
}

pub const COMPLEXITY_HEADER: [&str; 15] = [
    "s_k_tau",
    "s_k_tau_last_iterate",
    "epsilon_p",
    "delta_k",
    "protection_c",
    "tau",
    "gamma",
    "dataset_size",
    "variant",
    "c_a_hat",
    "c_b_hat",
    "p_hat",
    "c0_hat",
    "c2_hat",
    "replicates",
];

pub fn cmd_attack(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Outputs, ComplexitySummary), LabError> {
    let reps = pool(opts.workers)?.install(|| run_replicates(cfg))?;
    let summary = summarize(cfg, &reps)?;
    let stride = opts.trace_stride.max(1);

    let mut out = Outputs::default();
    let sampled: Vec<_> = reps.iter().map(|r| r.trace.downsampled(stride)).collect();
    out.add(
        "traces.jsonl",
        jsonl_bytes(reps.iter().zip(&sampled).map(|(r, t)| TraceLine {
            replicate: r.index,
            stride,
            trace: t,
        })),
    );
    out.add(
        "rounds.jsonl",
        jsonl_bytes(reps.iter().flat_map(|r| {
            r.rounds.iter().map(move |rec| RoundLine {
                replicate: r.index,
                record: rec,
            })
        })),
    );
    let rep = &summary.report;
    let c = summary.constants.as_ref();
    let row = vec![
        rep.s_k_tau.to_string(),
        summary.s_k_tau_last_iterate.to_string(),
        num(rep.epsilon_p),
        num(rep.delta_k),
        num(rep.protection_c),
        num(rep.tau),
        num(rep.gamma),
        rep.dataset_size.to_string(),
        serde_json::to_value(rep.variant).unwrap().as_str().unwrap().to_string(),
        opt_num(c.map(|c| c.c_a_hat), ""),
        opt_num(c.map(|c| c.c_b_hat), ""),
        opt_num(c.map(|c| c.p_hat), ""),
        opt_num(c.map(|c| c.c0_hat), ""),
        opt_num(c.map(|c| c.c2_hat), ""),
        cfg.replicates.to_string(),
    ];
    out.add("complexity.csv", csv_bytes(&COMPLEXITY_HEADER, &[row])?);
    out.add("complexity.json", json_bytes(&summary));
    Ok((out, summary))
}

fn missing(field: &str) -> LabError {
    LabError::Config(format!(
        "bounds input `{field}` is missing: set [bounds] {field}, or run `privlab attack` first and point \
         [bounds] estimates at the complexity.json it writes"
    ))
}

/// Bound inputs from `[bounds]` overrides on top of an optional estimates
/// file. Returns the inputs and the measured distortion, if any.
pub fn resolve_bound_inputs(cfg: &ExperimentConfig, default_epsilon: Option<f64>) -> Result<(BoundInputs, Option<f64>), LabError> {
    let b = &cfg.bounds;
    let est: Option<ComplexitySummary> = match &b.estimates {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                LabError::Config(format!(
                    "cannot read estimates {}: {e}; run `privlab attack` first to produce complexity.json",
                    path.display()
                ))
            })?;
            Some(serde_json::from_str(&text).map_err(|e| {
                LabError::Config(format!("{} is not a complexity.json: {e}", path.display()))
            })?)
        }
    };
    let rep = est.as_ref().map(|s| &s.report);
    let consts = est.as_ref().and_then(|s| s.constants.as_ref());
    let inputs = BoundInputs {
        m: b.m.or(est.as_ref().map(|s| s.model_dim)).ok_or_else(|| missing("m"))?,
        epsilon: b.epsilon.or(default_epsilon).ok_or_else(|| missing("epsilon"))?,
        epsilon_hat: b.epsilon_hat,
        zeta: b.zeta,
        tau: b.tau.or(rep.map(|r| r.tau)).ok_or_else(|| missing("tau"))?,
        epsilon_p: b.epsilon_p.or(rep.map(|r| r.epsilon_p)).ok_or_else(|| missing("epsilon_p"))?,
        dataset_size: b
            .dataset_size
            .or(rep.map(|r| r.dataset_size))
            .ok_or_else(|| missing("dataset_size"))?,
        gamma: b.gamma.or(rep.map(|r| r.gamma)).ok_or_else(|| missing("gamma"))?,
        c_a: b.c_a.or(consts.map(|c| c.c_a_hat)).ok_or_else(|| missing("c_a"))?,
        c_b: b.c_b.or(consts.map(|c| c.c_b_hat)).ok_or_else(|| missing("c_b"))?,
        c2: b.c2.or(consts.map(|c| c.c2_hat)).ok_or_else(|| missing("c2"))?,
        c_const: b.c_const.unwrap_or(1.0),
        p: b.p.or(consts.map(|c| c.p_hat)).ok_or_else(|| missing("p"))?,
    };
    inputs
        .validate()
        .map_err(|e| LabError::Config(format!("[bounds] {e}")))?;
    Ok((inputs, b.delta_k.or(rep.map(|r| r.delta_k))))
}

pub const BOUNDS_HEADER: [&str; 21] = [
    "formula_id",
    "m",
    "epsilon",
    "epsilon_hat",
    "zeta",
    "tau",
    "epsilon_p",
    "dataset_size",
    "gamma",
    "c_a",
    "c_b",
    "c2",
    "c_const",
    "p",
    "delta",
    "radicand",
    "value",
    "feasible",
    "denominator",
    "applicable",
    "note",
];

pub fn bound_rows(inputs: &BoundInputs, reports: &[BoundReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                r.formula_id.as_str().to_string(),
                inputs.m.to_string(),
                num(inputs.epsilon),
                opt_num(inputs.epsilon_hat, ""),
                opt_num(inputs.zeta, ""),
                num(inputs.tau),
                num(inputs.epsilon_p),
                inputs.dataset_size.to_string(),
                num(inputs.gamma),
                num(inputs.c_a),
                num(inputs.c_b),
                num(inputs.c2),
                num(inputs.c_const),
                num(inputs.p),
                opt_num(r.delta, ""),
                opt_num(r.radicand, ""),
                opt_num(r.value, INFEASIBLE),
                r.feasible.to_string(),
                opt_num(r.denominator, ""),
                r.applicable.map_or(String::new(), |a| a.to_string()),
                r.note.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn cmd_bounds(cfg: &ExperimentConfig) -> Result<(Outputs, Vec<BoundReport>), LabError> {
    let (inputs, delta) = resolve_bound_inputs(cfg, None)?;
    let reports = all_bounds(&inputs, delta)?;
    let mut out = Outputs::default();
    out.add("bounds.csv", csv_bytes(&BOUNDS_HEADER, &bound_rows(&inputs, &reports))?);
    out.add("bounds.json", json_bytes(&reports));
    Ok((out, reports))
}

pub fn cmd_estimate_mbp(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Outputs, mbp::MbpEstimate), LabError> {
    let mbp_cfg = cfg
        .mbp
        .as_ref()
        .ok_or_else(|| LabError::Config("estimate-mbp needs an [mbp] section".into()))?;
    let (_, clients, rounds) = replicate_session(cfg, 0)?;
    let theta_star = rounds.last().expect("at least one round").theta_before.to_vec();
    let dataset = clients[cfg.clients.target].samples();
    let (est, _) = pool(opts.workers)?.install(|| {
        mbp::estimate(
            &cfg.model,
            &theta_star,
            &cfg.mechanism,
            dataset,
            &cfg.attack,
            mbp_cfg,
            &mbp_stream(cfg.seed),
        )
    })?;
    let mut out = Outputs::default();
    out.add("mbp.json", json_bytes(&est));
    Ok((out, est))
}

pub const SWEEP_HEADER: [&str; 7] = [
    "rank",
    "mechanism",
    "m",
    "epsilon",
    "protection_rate",
    "attack_t_lower",
    "pruned",
];

pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Outputs, Vec<privlab_core::bounds::SweepRow>), LabError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| LabError::Config("sweep needs a [sweep] section with a non-empty grid".into()))?;
    let (constants, _) = resolve_bound_inputs(cfg, Some(sweep.epsilons[0]))?;
    let rows = pool(opts.workers)?.install(|| sweep_designs(&sweep.grid(), sweep.t_budget, &constants))?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                serde_json::to_value(r.mechanism).unwrap().as_str().unwrap().to_string(),
                r.m.to_string(),
                num(r.epsilon),
                num(r.protection_rate),
                opt_num(r.attack_t_lower, INFEASIBLE),
                r.pruned.to_string(),
            ]
        })
        .collect();
    let mut out = Outputs::default();
    out.add("sweep.csv", csv_bytes(&SWEEP_HEADER, &table)?);
    Ok((out, rows))
}

pub const VALIDATION_HEADER: [&str; 6] = ["id", "check", "passed", "measured", "expected", "detail"];

pub fn cmd_validate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Outputs, Vec<CheckOutcome>), LabError> {
    let outcomes = pool(opts.workers)?.install(|| checks::run_selected(cfg, &cfg.validate.only))?;
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.id.to_string(),
                o.name.to_string(),
                o.passed.to_string(),
                o.measured.clone(),
                o.expected.clone(),
                o.detail.clone(),
            ]
        })
        .collect();
    let mut out = Outputs::default();
    out.add("validation.csv", csv_bytes(&VALIDATION_HEADER, &rows)?);
    Ok((out, outcomes))
}

/// Runs `command`, writes its files and `manifest.json` into the output
/// directory. Check failures are reported after the files are written.
pub fn execute(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outputs, LabError> {
    let started_at = now();
    let mut failed_checks = 0;
    let mut out = match command {
        Command::Attack => cmd_attack(cfg, opts)?.0,
        Command::Bounds => cmd_bounds(cfg)?.0,
        Command::EstimateMbp => cmd_estimate_mbp(cfg, opts)?.0,
        Command::Sweep => cmd_sweep(cfg, opts)?.0,
        Command::Validate => {
            let (out, outcomes) = cmd_validate(cfg, opts)?;
            for o in &outcomes {
                println!("{}", o.line());
            }
            failed_checks = outcomes.iter().filter(|o| !o.passed).count();
            out
        }
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_sha256: config_hash(cfg),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        workers: opts.workers,
        seed_plan: SeedPlan::for_config(cfg),
        started_at,
        finished_at: now(),
        outputs: out.names(),
    };
    out.add("manifest.json", json_bytes(&manifest));
    out.write_all(Path::new(&cfg.output_dir))?;
    if failed_checks > 0 {
        return Err(LabError::ChecksFailed(failed_checks));
    }
    Ok(out)
}
