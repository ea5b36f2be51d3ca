//! Config-driven orchestration of hybrid pipelines (for example
//! `A1 -> A2 -> J2`) and run-artifact export.
//!
//! Stages run sequentially and hand the state across order transitions by
//! nodal interpolation. A stage ends at the first iteration whose energy
//! decrease falls below its `switch_tol`; the last stage additionally stops
//! when the energy reaches a supplied reference to `1e-12`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::a_method::{self, AStepConfig, StoppingRule, TauStrategy};
use crate::config::{MethodKind, RunConfig, ShiftConfig, ShiftName, SpectralConfig, StageConfig};
use crate::error::{Error, Result};
use crate::j_method::{self, ShiftPolicy};
use crate::mesh::{self, ElementOrder, FeSpace};
use crate::spectral::{self, SpectralReport};
use crate::state::{Eigenpair, IterationRecord, MethodTag, Problem, SpinorField};

/// Terminal state of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterationCap,
    Aborted { message: String },
}

/// Everything a run produces; `export_outputs` writes it to disk.
pub struct RunArtifacts {
    pub config: RunConfig,
    pub status: RunStatus,
    pub history: Vec<IterationRecord>,
    /// Iterations per executed stage.
    pub stage_iterations: Vec<usize>,
    pub final_energy: f64,
    pub final_lambda: f64,
    pub dofs: usize,
    pub spectral: Option<SpectralReport>,
    /// Node coordinates and the two nodal densities of the final state.
    pub nodes: Vec<[f64; 2]>,
    pub density_1: Vec<f64>,
    pub density_2: Vec<f64>,
    pub total_wall_ms: f64,
    /// Shift frozen by the last adaptive J stage, if any.
    pub frozen_sigma: Option<f64>,
    /// Final eigenpair (kept for downstream diagnostics).
    pub eigenpair: Option<Eigenpair>,
}

fn shift_policy(stage: &StageConfig) -> ShiftPolicy {
    let freeze = stage.freeze_after.unwrap_or(2);
    match stage.shift {
        Some(ShiftConfig::Fixed(s)) => ShiftPolicy::fixed(s),
        Some(ShiftConfig::Named(ShiftName::Adaptive)) | None => ShiftPolicy::adaptive(freeze),
    }
}

fn stage_tag(stage: &StageConfig) -> MethodTag {
    match (stage.method, stage.order) {
        (MethodKind::A, 1) => MethodTag::A1,
        (MethodKind::A, _) => MethodTag::A2,
        (MethodKind::J, 1) => MethodTag::J1,
        (MethodKind::J, _) => MethodTag::J2,
    }
}

/// Interpolates a spinor state into the P2 space on the same grid and
/// renormalizes.
fn promote_state(
    p1_space: &FeSpace,
    p2_problem: &Problem,
    u: &SpinorField,
) -> Result<SpinorField> {
    let n2 = p2_problem.n();
    let mut coeffs = vec![0.0; 4 * n2];
    for k in 0..4 {
        let up = mesh::interpolate_p1_to_p2(p1_space, p2_problem.space(), u.block(k))?;
        coeffs[k * n2..(k + 1) * n2].copy_from_slice(&up);
    }
    p2_problem.normalize(&SpinorField::from_coeffs(p2_problem.space(), coeffs)?)
}

/// Executes all stages. Numerical aborts are captured in the returned
/// status together with the partial history, so callers can still export.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let t0 = Instant::now();
    let domain = cfg.domain.to_domain()?;

    let mut problem: Option<Problem> = None;
    let mut current_order = 0u8;
    let mut u: Option<SpinorField> = None;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut stage_iterations = Vec::new();
    let mut status = RunStatus::Converged;
    let mut frozen_sigma = None;
    let mut lambda = f64::NAN;

    for (idx, stage) in cfg.stages.iter().enumerate() {
        // (Re)build the discretization on order transitions.
        if stage.order != current_order {
            let order = ElementOrder::from_int(stage.order)?;
            let space = mesh::build_space(domain, order)?;
            let next_problem = Problem::new(space, cfg.physics)?;
            u = Some(match (&problem, &u) {
                (Some(prev), Some(state)) => promote_state(prev.space(), &next_problem, state)?,
                _ => next_problem.initial_state()?,
            });
            problem = Some(next_problem);
            current_order = stage.order;
        }
        let prob = problem.as_ref().expect("problem built");
        let state = u.take().expect("state available");

        if history.is_empty() {
            let e0 = prob.energy(&state)?;
            let l0 = prob.rayleigh_lambda(&state)?;
            let r0 = prob.residual_norm(&state, l0)?;
            history.push(IterationRecord {
                iter: 0,
                method: stage_tag(stage),
                energy: e0,
                lambda: l0,
                residual: r0,
                sigma: None,
                tau: None,
                wall_ms: 0.0,
            });
        }

        let is_last = idx + 1 == cfg.stages.len();
        let stop = StoppingRule {
            energy_diff_tol: stage.switch_tol,
            reference_energy: if is_last {
                cfg.output.reference_energy
            } else {
                None
            },
            reference_tol: 1e-12,
            residual_tol: None,
            max_iters: stage.max_iters,
        };
        let iter_offset = history.last().map(|r| r.iter).unwrap_or(0);

        let outcome = match stage.method {
            MethodKind::A => {
                let a_cfg = AStepConfig {
                    tau_strategy: stage
                        .tau
                        .map(TauStrategy::Fixed)
                        .unwrap_or(TauStrategy::LineSearch),
                    ..AStepConfig::default()
                };
                a_method::run_a_method_tagged(
                    prob,
                    &state,
                    &a_cfg,
                    &stop,
                    stage_tag(stage),
                    iter_offset,
                )
            }
            MethodKind::J => j_method::run_j_method_tagged(
                prob,
                &state,
                &shift_policy(stage),
                &stop,
                iter_offset,
            )
            .map(|jr| {
                if jr.frozen_sigma.is_some() {
                    frozen_sigma = jr.frozen_sigma;
                }
                jr.run
            }),
        };

        match outcome {
            Ok(run) => {
                stage_iterations.push(run.history.len());
                history.extend(run.history);
                lambda = run.eigenpair.lambda;
                u = Some(run.eigenpair.u);
                if run.hit_iteration_cap {
                    status = RunStatus::IterationCap;
                    break;
                }
            }
            Err(e) => {
                status = RunStatus::Aborted {
                    message: e.to_string(),
                };
                u = Some(state);
                break;
            }
        }
    }

    let prob = problem.as_ref().expect("at least one stage ran");
    let state = u.expect("state available");
    let final_energy = history.last().map(|r| r.energy).unwrap_or(f64::NAN);
    if !lambda.is_finite() {
        lambda = prob.rayleigh_lambda(&state).unwrap_or(f64::NAN);
    }

    let spectral = match (&status, cfg.spectral) {
        (RunStatus::Converged, Some(SpectralConfig { k })) => {
            let pair = Eigenpair {
                u: state.clone(),
                lambda,
            };
            // Rate prediction at the last J shift when one exists, else at a
            // nearby reference shift below lambda.
            let sigma = frozen_sigma
                .or_else(|| history.iter().rev().find_map(|r| r.sigma))
                .unwrap_or(lambda - 1e-3 * lambda.abs().max(1.0));
            Some(spectral::spectral_report(prob, &pair, k, sigma)?)
        }
        _ => None,
    };

    let (density_1, density_2) = prob.density(&state)?;
    Ok(RunArtifacts {
        config: cfg.clone(),
        status,
        history,
        stage_iterations,
        final_energy,
        final_lambda: lambda,
        dofs: prob.n(),
        spectral,
        nodes: prob.space().nodes.clone(),
        density_1,
        density_2,
        total_wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        frozen_sigma,
        eigenpair: Some(Eigenpair { u: state, lambda }),
    })
}

#[derive(Serialize)]
struct HistoryEntry<'a> {
    #[serde(flatten)]
    record: &'a IterationRecord,
    /// `|E - E_ref|` when a reference energy is configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    ref_error: Option<f64>,
}

#[derive(Serialize)]
struct Report<'a> {
    status: &'a RunStatus,
    final_energy: f64,
    final_lambda: f64,
    dofs: usize,
    stage_iterations: &'a [usize],
    total_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    frozen_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral: Option<&'a SpectralReport>,
    total_wall_ms: f64,
    config: &'a RunConfig,
}

/// Full-precision decimal formatting (17 significant digits round-trips
/// doubles exactly).
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes `history.json`, `history.csv`, `density_1.csv`, `density_2.csv`,
/// `convergence.csv` and `report.json` into `dir`.
pub fn export_outputs(artifacts: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    // Probe writability before any artifact file is created.
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(&probe)?;

    let eref = artifacts.config.output.reference_energy;

    let entries: Vec<HistoryEntry> = artifacts
        .history
        .iter()
        .map(|record| HistoryEntry {
            record,
            ref_error: eref.map(|e| (record.energy - e).abs()),
        })
        .collect();
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    std::fs::write(dir.join("history.json"), json)?;

    let mut csv = String::from("iter,method,energy,lambda,residual,sigma,tau,wall_ms\n");
    for r in &artifacts.history {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.method,
            fmt_f64(r.energy),
            fmt_f64(r.lambda),
            fmt_f64(r.residual),
            fmt_opt(r.sigma),
            fmt_opt(r.tau),
            fmt_f64(r.wall_ms),
        ));
    }
    std::fs::write(dir.join("history.csv"), csv)?;

    for (name, density) in [
        ("density_1.csv", &artifacts.density_1),
        ("density_2.csv", &artifacts.density_2),
    ] {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        writeln!(f, "x,y,value")?;
        for (node, value) in artifacts.nodes.iter().zip(density) {
            writeln!(f, "{},{},{}", fmt_f64(node[0]), fmt_f64(node[1]), fmt_f64(*value))?;
        }
    }

    // Convergence trace: error against the reference energy, falling back
    // to the final computed energy when no reference is configured.
    let target = eref.unwrap_or(artifacts.final_energy);
    let mut conv = String::from("iter,error\n");
    for r in &artifacts.history {
        conv.push_str(&format!("{},{}\n", r.iter, fmt_f64((r.energy - target).abs())));
    }
    std::fs::write(dir.join("convergence.csv"), conv)?;

    let report = Report {
        status: &artifacts.status,
        final_energy: artifacts.final_energy,
        final_lambda: artifacts.final_lambda,
        dofs: artifacts.dofs,
        stage_iterations: &artifacts.stage_iterations,
        total_iterations: artifacts.stage_iterations.iter().sum(),
        frozen_sigma: artifacts.frozen_sigma,
        spectral: artifacts.spectral.as_ref(),
        total_wall_ms: artifacts.total_wall_ms,
        config: &artifacts.config,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}
