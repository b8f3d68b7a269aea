use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nlselect_core::oracle::{run_suite, SuiteConfig, VerifyCheck};
use nlselect_core::simulation::{
    mspe, ratio_experiment, roc_points, selection_runs, summarize_runs, write_csv, RocPoint,
};
use nlselect_core::{map_model, run_search, HyperConfig, Method, SearchConfig, SimSpec, TauMode};
use serde::Serialize;

use crate::args::{Cli, Command, RatioArgs, SelectArgs, Sim, SimulateArgs, VerifyArgs};
use crate::ingest::ingest_csv;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    seed: u64,
    invocation: &'a Cli,
    #[serde(skip_serializing_if = "Option::is_none")]
    hyper: Option<HyperConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    search: Option<SearchConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<SimSpec>,
}

fn manifest(cli: &Cli) -> Manifest<'_> {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        core_version: nlselect_core::VERSION,
        seed: cli.command.common().seed,
        invocation: cli,
        hyper: None,
        search: None,
        simulation: None,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(BufWriter::new(file), rows)?;
    Ok(())
}

/// Runs a parsed command. Returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let common = cli.command.common();
    if common.threads > 0 {
        // A global pool can only be built once per process; ignore a second attempt.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global();
    }
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    match &cli.command {
        Command::Select(a) => select(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Ratio(a) => ratio(cli, a),
        Command::Verify(a) => verify(cli, a),
    }
}

#[derive(Serialize)]
struct ModelOut {
    rank: usize,
    size: usize,
    columns: String,
    indices: String,
    log_marginal: f64,
    log_posterior: f64,
}

#[derive(Serialize)]
struct InclusionOut {
    index: usize,
    column: String,
    probability: f64,
}

#[derive(Serialize)]
struct SelectionOut {
    map: ModelOut,
    top: Vec<ModelOut>,
    inclusion: Vec<InclusionOut>,
    models_scored: usize,
    failed_evaluations: usize,
    n_train: usize,
    n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_mspe: Option<f64>,
}

fn select(cli: &Cli, a: &SelectArgs) -> Result<i32> {
    let seed = a.common.seed;
    let data = ingest_csv(&a.data, &a.response)?;
    let (train, test) = if a.holdout > 0.0 {
        let (tr, te) = data.dataset.split(a.holdout, seed)?;
        (tr, Some(te))
    } else {
        (data.dataset.clone(), None)
    };
    let hyper = a.hyper.config(train.n());
    hyper.validate()?;
    let search = a.search.config(train.n(), seed, hyper.q_n);
    let set = run_search(&train, &hyper, &search)?;
    for (m, e) in set.failures() {
        log::warn!("model {m} could not be scored: {e}");
    }
    let names = |m: &nlselect_core::ModelIndex| {
        m.indices().iter().map(|&j| data.columns[j].as_str()).collect::<Vec<_>>().join(";")
    };
    let to_out = |rank: usize, s: &nlselect_core::ScoredModel| ModelOut {
        rank,
        size: s.model.len(),
        columns: names(&s.model),
        indices: s.model.indices().iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";"),
        log_marginal: s.log_marginal,
        log_posterior: s.log_posterior_unnorm,
    };
    let map = map_model(&set)?;
    let top: Vec<ModelOut> = set.top(a.top).iter().enumerate().map(|(i, s)| to_out(i + 1, s)).collect();
    let inclusion: Vec<InclusionOut> = set
        .inclusion_probabilities(train.p())
        .into_iter()
        .enumerate()
        .map(|(j, probability)| InclusionOut {
            index: j,
            column: data.columns[j].clone(),
            probability,
        })
        .collect();
    let test_mspe = test.as_ref().map(|t| mspe(&train, t, &map.model)).transpose()?;
    let out = SelectionOut {
        map: to_out(1, &map),
        top,
        inclusion,
        models_scored: set.len(),
        failed_evaluations: set.failures().len(),
        n_train: train.n(),
        n_test: test.as_ref().map_or(0, |t| t.n()),
        test_mspe,
    };
    let dir = &a.common.out;
    write_json(&dir.join("selection.json"), &out)?;
    write_table(&dir.join("top_models.csv"), &out.top)?;
    write_table(&dir.join("inclusion.csv"), &out.inclusion)?;
    let mut m = manifest(cli);
    m.hyper = Some(hyper);
    m.search = Some(search);
    write_json(&dir.join("manifest.json"), &m)?;
    println!("MAP model: {{{}}} (log posterior {:.4})", out.map.columns, out.map.log_posterior);
    if let Some(e) = out.test_mspe {
        println!("test MSPE: {e:.6}");
    }
    Ok(0)
}

fn sim_spec(sim: &Sim, seed: u64) -> SimSpec {
    let mut spec = SimSpec::new(sim.p, sim.design, sim.reps, seed);
    if let Some(n) = sim.n {
        spec.n = n;
    }
    spec.beta_pattern = sim.pattern.clone();
    spec
}

#[derive(Serialize)]
struct RocOut {
    repetition: usize,
    method: String,
    threshold: f64,
    fpr: f64,
    tpr: f64,
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<i32> {
    let spec = sim_spec(&a.sim, a.common.seed);
    spec.validate()?;
    let hyper = a.hyper.config(spec.n);
    hyper.validate()?;
    let methods = match a.hyper.tau {
        None => vec![Method::HyperPmom, Method::FIXED_DEFAULT],
        Some(TauMode::Hierarchical) => vec![Method::HyperPmom],
        Some(TauMode::Fixed(t)) => vec![Method::FixedTau(t)],
    };
    let search = a.search.config(spec.n, 0, hyper.q_n);
    let runs = selection_runs(&spec, &methods, &hyper, &search)?;
    let table = summarize_runs(&spec, &methods, &runs);
    let dir = &a.common.out;
    write_table(&dir.join("metrics.csv"), &table)?;
    if a.roc {
        let rows: Vec<RocOut> = runs
            .iter()
            .flat_map(|r| {
                roc_points(&r.truth, &r.scored, spec.p).into_iter().map(move |pt: RocPoint| RocOut {
                    repetition: r.repetition,
                    method: r.method.to_string(),
                    threshold: pt.threshold,
                    fpr: pt.fpr,
                    tpr: pt.tpr,
                })
            })
            .collect();
        write_table(&dir.join("roc.csv"), &rows)?;
    }
    let mut m = manifest(cli);
    m.hyper = Some(hyper);
    m.search = Some(search);
    m.simulation = Some(spec);
    write_json(&dir.join("manifest.json"), &m)?;
    for row in &table {
        println!("{:<16} PPV {:.3}  TPR {:.3}  FPR {:.4}", row.method, row.ppv, row.tpr, row.fpr);
    }
    Ok(0)
}

fn ratio(cli: &Cli, a: &RatioArgs) -> Result<i32> {
    if a.sweep.is_empty() || a.scenarios.is_empty() {
        bail!("--sweep and --scenarios must be nonempty");
    }
    let mut spec = sim_spec(&a.sim, a.common.seed);
    spec.p = a.sweep[0];
    spec.n = spec.p / 5;
    let hyper = a.hyper.config(spec.n);
    hyper.validate()?;
    let rows = ratio_experiment(&spec, &a.scenarios, &a.sweep, &hyper)?;
    let dir = &a.common.out;
    write_table(&dir.join("ratio.csv"), &rows)?;
    let mut m = manifest(cli);
    m.hyper = Some(hyper);
    m.simulation = Some(spec);
    write_json(&dir.join("manifest.json"), &m)?;
    for r in &rows {
        println!("p={:<5} scenario {}  mean log ratio {:>10.3} (se {:.3})", r.p, r.scenario, r.mean_log_ratio, r.stderr);
    }
    Ok(0)
}

fn verify(cli: &Cli, a: &VerifyArgs) -> Result<i32> {
    let cfg = SuiteConfig {
        seed: a.common.seed,
        derivative_points: a.derivative_points,
        tail_draws: a.tail_draws,
        importance_samples: a.importance_samples,
    };
    if cfg.tail_draws < 100_000 {
        bail!("--tail-draws must be at least 100000");
    }
    let checks: Vec<VerifyCheck> = run_suite(&cfg);
    let dir = &a.common.out;
    write_json(&dir.join("verify.json"), &checks)?;
    write_table(&dir.join("verify.csv"), &checks)?;
    write_json(&dir.join("manifest.json"), &manifest(cli))?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {:<64} {:>12.4e}  (limit {:.4e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        failed += usize::from(!c.pass);
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { 0 } else { 1 })
}
