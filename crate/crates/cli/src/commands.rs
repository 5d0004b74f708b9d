use std::io::{BufRead, Write};

use lse_dose::design::{DesignKind, FinalReport, TrialConfig, TrialSession};
use lse_dose::gp::{prior_draws, KernelHyper};
use lse_dose::prior_spec::grid_mean;
use lse_dose::math::{inv_logit, z_upper};
use lse_dose::rng::stream;
use lse_dose::sim::{self, builtin_scenarios, load_scenarios, CompositeWeights, Scenario, SimulationPlan};
use lse_dose::theory::{logistic_curve, theorem_harness, TheoryParams};
use lse_dose_service::{parse_budget, ServiceConfig};
use serde::Serialize;
use serde_json::json;

use crate::args::{CalibrateArgs, ConductArgs, Format, PriorArgs, ServeArgs, SimulateArgs, TheoryArgs};
use crate::CliError;

fn print_config(config: &TrialConfig) {
    eprintln!("config: {}", serde_json::to_string(config).expect("config serializes"));
}

fn emit(out: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn scenarios(spec: &str, ids: &Option<Vec<u32>>) -> Result<Vec<Scenario>, CliError> {
    let mut all = if spec == "builtin" { builtin_scenarios() } else { load_scenarios(std::path::Path::new(spec))? };
    if let Some(ids) = ids {
        if let Some(missing) = ids.iter().find(|id| !all.iter().any(|s| s.id == **id)) {
            return Err(CliError::Usage(format!("no scenario with id {missing}")));
        }
        all.retain(|s| ids.contains(&s.id));
    }
    Ok(all)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let config = a.trial.resolve()?;
    print_config(&config);
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let plan = SimulationPlan {
        designs: a.designs.clone(),
        scenarios: scenarios(&a.scenarios, &a.ids)?,
        reps: a.reps,
        seed: config.seed,
        config,
        denominator: a.early_stop_denominator,
    };
    let table = sim::simulate(&plan, a.parallel)?;
    let text = match a.format {
        Format::Csv => table.to_csv_string(),
        Format::Json => to_json(&table),
    };
    emit(a.out.as_deref(), &text)
}

/// Parse `[LEVEL:] o o o` where each outcome is 0 or 1, separated by
/// spaces or commas or written together (`010`).
pub fn parse_outcome_line(line: &str) -> Result<(Option<usize>, Vec<bool>), String> {
    let (level, rest) = match line.split_once(':') {
        Some((l, r)) => (Some(l.trim().parse::<usize>().map_err(|_| format!("bad dose level '{}'", l.trim()))?), r),
        None => (None, line),
    };
    let tokens: Vec<&str> = rest.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
    let chars: Vec<String> = if tokens.len() == 1 { tokens[0].chars().map(String::from).collect() } else { tokens.iter().map(|t| t.to_string()).collect() };
    let outcomes = chars
        .iter()
        .map(|t| match t.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("outcome '{other}' is not 0 or 1")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if outcomes.is_empty() {
        return Err("no outcomes on line".into());
    }
    Ok((level, outcomes))
}

#[derive(Serialize)]
struct ConductStep {
    cohort: usize,
    dose_level: usize,
    outcomes: Vec<u8>,
    dlts: usize,
    stage: lse_dose::design::Stage,
    next_dose: Option<usize>,
    stop_reason: Option<lse_dose::design::StopReason>,
    p_n: Option<Vec<f64>>,
    acquisition: Option<Vec<f64>>,
    admissible: Option<Vec<usize>>,
}

fn apply_cohort(session: &mut TrialSession, level: Option<usize>, outcomes: &[bool]) -> Result<ConductStep, lse_dose::Error> {
    let pending = session.pending_dose().ok_or_else(|| lse_dose::Error::State("trial is not accepting cohorts".into()))?;
    let dose = level.unwrap_or(pending);
    let rec = session.submit_cohort(dose, outcomes, dose != pending)?;
    Ok(ConductStep {
        cohort: rec.seq,
        dose_level: rec.dose_level,
        outcomes: rec.outcomes.iter().map(|&o| o as u8).collect(),
        dlts: rec.dlt_count,
        stage: rec.stage_after,
        next_dose: rec.decision.next_dose,
        stop_reason: rec.decision.stop_reason,
        p_n: rec.decision.p_sub.clone(),
        acquisition: rec.decision.acquisition.clone(),
        admissible: rec.decision.admissible.clone(),
    })
}

fn step_line(s: &ConductStep) -> String {
    let next = s.next_dose.map_or("stop".to_string(), |d| d.to_string());
    format!("cohort {} at level {}: {} DLT(s) -> next {}", s.cohort, s.dose_level, s.dlts, next)
}

pub fn conduct(a: ConductArgs) -> Result<(), CliError> {
    let config = a.trial.resolve()?;
    print_config(&config);
    let budget = parse_budget(&a.inference_budget).map_err(CliError::Usage)?;
    let mut session = TrialSession::with_budget(a.design, config.clone(), budget)?;
    let mut steps = Vec::new();
    match &a.outcomes {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                if session.pending_dose().is_none() {
                    eprintln!("note: trial ended before line {}; remaining lines ignored", i + 1);
                    break;
                }
                let (level, outcomes) =
                    parse_outcome_line(line).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
                let step = apply_cohort(&mut session, level, &outcomes)
                    .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
                eprintln!("{}", step_line(&step));
                steps.push(step);
            }
        }
        None => {
            let stdin = std::io::stdin();
            let mut lines = stdin.lock().lines();
            while let Some(pending) = session.pending_dose() {
                eprint!("cohort {} at dose level {pending}: enter {} outcomes (0/1), blank to finish: ", steps.len() + 1, config.cohort_size);
                std::io::stderr().flush()?;
                let Some(line) = lines.next() else { break };
                let line = line?;
                if line.trim().is_empty() {
                    break;
                }
                match parse_outcome_line(line.trim()).map_err(|e| e.to_string()).and_then(|(level, o)| {
                    apply_cohort(&mut session, level, &o).map_err(|e| e.to_string())
                }) {
                    Ok(step) => {
                        eprintln!("{}", step_line(&step));
                        steps.push(step);
                    }
                    Err(e) => eprintln!("invalid input: {e}; try again"),
                }
            }
        }
    }
    if steps.is_empty() {
        return Err(CliError::Usage("no cohorts were entered".into()));
    }
    let report = session.finalize()?;
    let text = match a.format {
        Format::Json => to_json(&json!({ "design": a.design, "config": config, "cohorts": steps, "report": report })),
        Format::Csv => conduct_csv(&steps, &report),
    };
    emit(None, &text)
}

fn conduct_csv(steps: &[ConductStep], report: &FinalReport) -> String {
    let mut s = String::from("cohort,dose_level,outcomes,dlts,stage,next_dose\n");
    for st in steps {
        let outcomes: String = st.outcomes.iter().map(|o| o.to_string()).collect();
        let stage = serde_json::to_value(st.stage).expect("stage").as_str().unwrap_or_default().to_string();
        let next = st.next_dose.map_or(String::new(), |d| d.to_string());
        s.push_str(&format!("{},{},{},{},{},{}\n", st.cohort, st.dose_level, outcomes, st.dlts, stage, next));
    }
    let rationale = serde_json::to_value(report.recommendation.rationale).expect("rationale");
    s.push_str(&format!(
        "recommendation,{},{}\n",
        report.recommendation.dose_level.map_or(String::new(), |d| d.to_string()),
        rationale.as_str().unwrap_or_default()
    ));
    s
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = ServiceConfig { port: a.port, data_dir: a.data_dir, budget: parse_budget(&a.inference_budget).map_err(CliError::Usage)? };
    eprintln!("service: port {} data_dir {} budget {}/{}", config.port, config.data_dir.display(), config.budget.iterations, config.budget.burn_in);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(lse_dose_service::serve(config, |addr| println!("listening on http://{addr}")))
        .map_err(CliError::Runtime)
}

pub fn theory_check(a: TheoryArgs) -> Result<(), CliError> {
    let params = TheoryParams { b: a.b, lambda: a.lambda, delta: a.delta, xi: a.xi };
    params.validate()?;
    if a.grid < 2 || a.reps == 0 || a.budget == 0 {
        return Err(CliError::Usage("--grid must be at least 2 and --reps, --budget at least 1".into()));
    }
    eprintln!("config: {}", json!({ "params": params, "theta": a.theta, "ell": a.ell, "grid": a.grid, "crossing": a.crossing, "slope": a.slope, "reps": a.reps, "budget": a.budget, "seed": a.seed }));
    let points: Vec<f64> = (0..a.grid).map(|i| i as f64 / (a.grid - 1) as f64).collect();
    let pi = logistic_curve(&points, a.theta, a.crossing, a.slope);
    let hyper = KernelHyper::new(1.0, a.ell)?;
    let report = theorem_harness(&pi, &params, &hyper, &points, a.theta, a.budget, a.reps, a.seed)?;
    let mut steps = report.termination_steps.clone();
    steps.sort_unstable();
    let median = steps[steps.len() / 2];
    let max_loss = report.losses.iter().cloned().fold(0.0, f64::max);
    let text = match a.format {
        Format::Json => to_json(&json!({
            "termination_step": median,
            "loss": max_loss,
            "bound_holds_fraction": report.bound_holds_fraction,
            "gamma_curve": report.gamma_curve,
            "terminated_all": report.terminated_all,
            "termination_steps": report.termination_steps,
            "losses": report.losses,
        })),
        Format::Csv => {
            let mut s = String::from("rep,termination_step,loss\n");
            for (i, (t, l)) in report.termination_steps.iter().zip(&report.losses).enumerate() {
                s.push_str(&format!("{i},{t},{l:.6}\n"));
            }
            s
        }
    };
    emit(None, &text)
}

#[derive(Serialize)]
struct PreviewRow {
    x: f64,
    level: Option<usize>,
    mean_logit: f64,
    median: f64,
    lower80: f64,
    upper80: f64,
    lower95: f64,
    upper95: f64,
    draws: Vec<f64>,
}

pub fn prior_preview(a: PriorArgs) -> Result<(), CliError> {
    let config = a.trial.resolve()?;
    print_config(&config);
    config.validate()?;
    let grid = config.grid()?;
    let sigma = config.sigma_f_tilde()?;
    let mean = grid_mean(&config.candidate_means(a.nu)?, &grid)?;
    let draws = if a.draws > 0 {
        let prior = config.gp_prior(&grid, a.nu)?;
        prior_draws(&prior, a.draws, &mut stream(config.seed))?
    } else {
        Vec::new()
    };
    let (z80, z95) = (z_upper(0.1), z_upper(0.025));
    let positions = grid.candidate_positions();
    let rows: Vec<PreviewRow> = grid
        .points()
        .iter()
        .enumerate()
        .map(|(g, &x)| PreviewRow {
            x,
            level: positions.iter().position(|&p| p == g).map(|i| i + 1),
            mean_logit: mean[g],
            median: inv_logit(mean[g]),
            lower80: inv_logit(mean[g] - z80 * sigma),
            upper80: inv_logit(mean[g] + z80 * sigma),
            lower95: inv_logit(mean[g] - z95 * sigma),
            upper95: inv_logit(mean[g] + z95 * sigma),
            draws: draws.iter().map(|d| d[g]).collect(),
        })
        .collect();
    let text = match a.format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut s = String::from("x,level,mean_logit,median,lower80,upper80,lower95,upper95");
            for i in 1..=a.draws {
                s.push_str(&format!(",draw_{i}"));
            }
            s.push('\n');
            for r in &rows {
                s.push_str(&format!(
                    "{:.4},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    r.x,
                    r.level.map_or(String::new(), |l| l.to_string()),
                    r.mean_logit,
                    r.median,
                    r.lower80,
                    r.upper80,
                    r.lower95,
                    r.upper95
                ));
                for d in &r.draws {
                    s.push_str(&format!(",{d:.6}"));
                }
                s.push('\n');
            }
            s
        }
    };
    emit(None, &text)
}

pub fn calibrate_r(a: CalibrateArgs) -> Result<(), CliError> {
    let config = a.trial.resolve()?;
    print_config(&config);
    let weights: [f64; 4] = a
        .weights
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage(format!("--weights needs 4 values, got {}", a.weights.len())))?;
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let plan = SimulationPlan {
        designs: vec![DesignKind::Lse],
        scenarios: scenarios(&a.scenarios, &a.ids)?,
        reps: a.reps,
        seed: config.seed,
        config,
        denominator: a.early_stop_denominator,
    };
    let cal = sim::calibrate_r(&plan, &a.r_grid, CompositeWeights(weights), a.parallel)?;
    let text = match a.format {
        Format::Json => to_json(&json!({
            "best_r": cal.best_r,
            "scores": cal.scores.iter().map(|s| json!({ "r": s.r, "score": s.score })).collect::<Vec<_>>(),
        })),
        Format::Csv => {
            let mut s = String::from("r,score,best\n");
            for sc in &cal.scores {
                s.push_str(&format!("{:.2},{:.4},{}\n", sc.r, sc.score, sc.r == cal.best_r));
            }
            s
        }
    };
    emit(None, &text)
}
