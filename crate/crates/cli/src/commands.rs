use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vidscale::evaluation::{self, compare_forms, ComparisonRow, Protocol};
use vidscale::fitting::{BagConfig, FitConfig};
use vidscale::frontier::{self, empirical_frontier, frontier_curve};
use vidscale::sweep_data::{self, isoflop_design, plan_isoflop_sweep, plan_star_sweep, IsoflopPlan, StarPlan};
use vidscale::{
    elasticity, inference_flops, Coordinates, DesignPoint, ElasticityConfig, FactorDomain, Model, Params,
    Predictor, ScalingFactors, ScalingModel, SweepRecord, SweepTag, Target, Units, VisionConfig,
};

use crate::args::*;
use crate::manifest;

pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let started = chrono::Utc::now().to_rfc3339();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("starting worker pool")?;
    }
    std::fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
    let outputs = match &cli.command {
        Command::Fit(c) => fit(&cli.global, c)?,
        Command::Predict(c) => predict(&cli.global, c)?,
        Command::Evaluate(c) => evaluate(&cli.global, c)?,
        Command::Frontier(c) => frontier(&cli.global, c)?,
        Command::Elasticity(c) => elasticity(&cli.global, c)?,
        Command::PlanSweep(c) => plan_sweep(&cli.global, c)?,
        Command::Simulate(c) => simulate(&cli.global, c)?,
    };
    manifest::write(cli, argv, &outputs, started)
}

fn output_path(g: &Global, default_stem: &str) -> PathBuf {
    let name = match &g.output {
        Some(n) => n.clone(),
        None => format!("{default_stem}.{}", if g.json { "json" } else { "csv" }),
    };
    g.out.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<SweepRecord>> {
    sweep_data::load_records(path).with_context(|| format!("loading records from {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model from {}", path.display()))
}

fn fit_config(o: &FitOpts, seed: u64) -> Result<FitConfig> {
    let cfg = FitConfig {
        loss: o.loss,
        huber_delta: o.huber_delta,
        restarts: o.restarts,
        bound_exponents: o.bound_exponents,
        max_iterations: o.max_iterations,
        seed,
        target: o.target,
        metric: o.metric.clone(),
        coordinates: Coordinates { factors: o.factors.clone(), units: Units::default() },
        ..FitConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bag_config(o: &FitOpts, seed: u64) -> Option<BagConfig> {
    (o.bag_resamples > 0).then(|| BagConfig {
        resamples: o.bag_resamples,
        aggregation: o.bag_agg,
        restarts_per_resample: o.bag_restarts,
        seed,
    })
}

fn vision(o: &CostOpts) -> Result<VisionConfig<f64>> {
    Ok(VisionConfig::new(o.vision_params, o.vision_features)?)
}

fn domain(o: &CostOpts) -> Result<FactorDomain> {
    match &o.domain_file {
        Some(p) => FactorDomain::from_json_file(p).with_context(|| format!("loading domain from {}", p.display())),
        None => Ok(match o.domain {
            DomainPreset::Default => FactorDomain::paper_default(),
            DomainPreset::Extended => FactorDomain::extended(),
        }),
    }
}

fn require_error_target(model: &Model) -> Result<()> {
    if model.fit_config().target != Target::Error {
        bail!("frontier search minimizes predicted error; this model was fitted to performance");
    }
    Ok(())
}

fn fit(g: &Global, c: &FitCmd) -> Result<Vec<PathBuf>> {
    let cfg = fit_config(&c.fit, g.seed)?;
    let records = load_records(&c.records)?;
    let model = evaluation::fit_model(&records, c.fit.form, &cfg, bag_config(&c.fit, g.seed).as_ref())?;
    let path = g.out.join(g.output.clone().unwrap_or_else(|| "model.json".into()));
    model.save(&path)?;
    match &model {
        Model::Single(m) => println!(
            "{}: loss {:.6e}, best restart {}, converged {}",
            c.fit.form, m.final_loss, m.restart_index, m.converged
        ),
        Model::Bagged(b) => println!(
            "{}: {} bootstrap fits, {} converged",
            c.fit.form,
            b.base_models.len(),
            b.base_models.iter().filter(|m| m.converged).count()
        ),
    }
    Ok(vec![path])
}

#[derive(Serialize)]
struct PredictionRow {
    #[serde(rename = "x_N")]
    lm_params: u64,
    #[serde(rename = "x_T")]
    frames: u64,
    #[serde(rename = "x_V")]
    tokens_per_frame: u64,
    n: f64,
    target: &'static str,
    prediction: f64,
}

fn predict(g: &Global, c: &PredictCmd) -> Result<Vec<PathBuf>> {
    let model = load_model(&c.model)?;
    let target = model.fit_config().target.as_str();
    let mut rows = Vec::new();
    for p in &c.points {
        let x = ScalingFactors::new(p[0], p[1], p[2])?;
        for &n in &c.n {
            let prediction = model.predict_raw(&x, n)?;
            println!("{prediction}");
            rows.push(PredictionRow { lm_params: p[0], frames: p[1], tokens_per_frame: p[2], n, target, prediction });
        }
    }
    let path = output_path(g, "predict");
    if g.json {
        write_json(&path, &rows)?;
    } else {
        let mut w = csv::Writer::from_writer(create(&path)?);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(vec![path])
}

fn evaluate(g: &Global, c: &EvaluateCmd) -> Result<Vec<PathBuf>> {
    let cfg = fit_config(&c.fit, g.seed)?;
    let bag = bag_config(&c.fit, g.seed);
    let records = load_records(&c.records)?;
    let (train, test) = match &c.test_records {
        Some(p) => (records, load_records(p)?),
        None => records.into_iter().partition(|r| r.sweep != SweepTag::Isoflop),
    };
    let pooled: Vec<SweepRecord> = train.iter().chain(&test).cloned().collect();
    let row = |protocol, report| ComparisonRow { form: c.fit.form, protocol, report, rank: 1 };
    let rows = match c.protocol {
        ProtocolArg::Cv => {
            vec![row(Protocol::Cv, evaluation::cross_validate(&pooled, c.fit.form, &cfg, bag.as_ref(), c.folds, g.seed)?)]
        }
        ProtocolArg::Extrapolation => {
            if train.is_empty() || test.is_empty() {
                bail!("extrapolation needs both training and held-out records (tag held-out runs as isoflop or pass --test-records)");
            }
            vec![row(Protocol::Extrapolation, evaluation::extrapolation_eval(&train, &test, c.fit.form, &cfg, bag.as_ref())?)]
        }
        ProtocolArg::Compare => compare_forms(&train, &test, &c.forms, &cfg, bag.as_ref(), c.folds, g.seed)?,
    };
    for r in &rows {
        println!(
            "{} {}: mse {:.6} e% {:.4} r2 {}",
            r.form,
            r.protocol,
            r.report.mse,
            r.report.e_pct,
            r.report.r2.map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
    }
    let path = output_path(g, "evaluate");
    if g.json {
        evaluation::write_comparison_json(create(&path)?, &rows)?;
    } else {
        evaluation::write_comparison_csv(create(&path)?, &rows)?;
    }
    Ok(vec![path])
}

fn sorted_budgets(lists: &[Quantities]) -> Result<Vec<f64>> {
    let mut b = concat(lists);
    if b.iter().any(|&v| !(v > 0.0)) {
        bail!("budgets must be positive");
    }
    b.sort_by(f64::total_cmp);
    b.dedup();
    Ok(b)
}

#[derive(Serialize)]
struct EmpiricalRow {
    budget_c: f64,
    members: usize,
    run_id: Option<String>,
    #[serde(rename = "x_N")]
    lm_params: Option<u64>,
    #[serde(rename = "x_T")]
    frames: Option<u64>,
    #[serde(rename = "x_V")]
    tokens_per_frame: Option<u64>,
    n: Option<f64>,
    error: Option<f64>,
}

fn frontier(g: &Global, c: &FrontierCmd) -> Result<Vec<PathBuf>> {
    let model = load_model(&c.model)?;
    require_error_target(&model)?;
    let budgets = sorted_budgets(&c.budgets)?;
    let (domain, vis) = (domain(&c.cost)?, vision(&c.cost)?);
    let mut entries = Vec::new();
    for &n in &c.n {
        entries.extend(frontier_curve(&model, &domain, &budgets, n, &vis, c.cost.cost_mode)?);
    }
    let gaps = entries.iter().filter(|e| e.point().is_none()).count();
    if gaps > 0 {
        eprintln!("warning: {gaps} budgets are below the cheapest configuration and were left empty");
    }
    let path = output_path(g, "frontier");
    if g.json {
        frontier::write_curve_json(create(&path)?, &entries)?;
    } else {
        frontier::write_curve_csv(create(&path)?, &entries)?;
    }
    let mut outputs = vec![path];
    if let Some(rp) = &c.records {
        let records = load_records(rp)?;
        let bins = empirical_frontier(&records, &c.metric, &budgets, c.epsilon, &vis, c.cost.cost_mode)?;
        let rows: Vec<EmpiricalRow> = bins
            .iter()
            .map(|b| EmpiricalRow {
                budget_c: b.budget_c,
                members: b.members,
                run_id: b.best.as_ref().map(|r| r.run_id.clone()),
                lm_params: b.best.as_ref().map(|r| r.x.lm_params),
                frames: b.best.as_ref().map(|r| r.x.frames),
                tokens_per_frame: b.best.as_ref().map(|r| r.x.tokens_per_frame),
                n: b.best.as_ref().map(|r| r.n),
                error: b.best.as_ref().and_then(|r| r.metric(&c.metric)).map(|v| Target::Error.from_metric(v)),
            })
            .collect();
        let path = g.out.join(if g.json { "frontier_empirical.json" } else { "frontier_empirical.csv" });
        if g.json {
            write_json(&path, &rows)?;
        } else {
            let mut w = csv::Writer::from_writer(create(&path)?);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        outputs.push(path);
    }
    Ok(outputs)
}

fn elasticity(g: &Global, c: &ElasticityCmd) -> Result<Vec<PathBuf>> {
    let model = load_model(&c.model)?;
    require_error_target(&model)?;
    let cfg = ElasticityConfig { budgets: concat(&c.budgets), data_sizes: concat(&c.data_sizes), delta_n: c.delta_n };
    let report = elasticity::elasticity_report(&model, &domain(&c.cost)?, &cfg, &vision(&c.cost)?, c.cost.cost_mode)?;
    let a = &report.aggregate;
    match a.e {
        Some(e) => println!("e_N {} e_T {} e_V {} ({} included, {} excluded)", e[0], e[1], e[2], a.included, a.excluded),
        None => println!("no feasible (budget, data size) pairs ({} excluded)", a.excluded),
    }
    let path = output_path(g, "elasticity");
    if g.json {
        elasticity::write_report_json(create(&path)?, &report)?;
    } else {
        elasticity::write_report_csv(create(&path)?, &report)?;
    }
    Ok(vec![path])
}

/// One row of a design file; plan-sweep writes it and simulate reads it.
#[derive(Debug, Serialize, Deserialize)]
struct DesignRow {
    #[serde(rename = "x_N")]
    lm_params: u64,
    #[serde(rename = "x_T")]
    frames: u64,
    #[serde(rename = "x_V")]
    tokens_per_frame: u64,
    n: f64,
    sweep: SweepTag,
    cost: f64,
    #[serde(default)]
    target_c: Option<f64>,
    #[serde(default)]
    rel_dev: Option<f64>,
}

fn plan_sweep(g: &Global, c: &PlanCmd) -> Result<Vec<PathBuf>> {
    let (vis, mode) = (vision(&c.cost)?, c.cost.cost_mode);
    let row = |p: &DesignPoint, target: Option<f64>| {
        let cost = inference_flops(&p.x, &vis, mode);
        DesignRow {
            lm_params: p.x.lm_params,
            frames: p.x.frames,
            tokens_per_frame: p.x.tokens_per_frame,
            n: p.n,
            sweep: p.sweep,
            cost,
            target_c: target,
            rel_dev: target.map(|t| (cost - t) / t),
        }
    };
    let rows: Vec<DesignRow> = if c.star {
        let plan: StarPlan = match &c.star_plan {
            Some(p) => serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)
                .with_context(|| format!("parsing star plan {}", p.display()))?,
            None => StarPlan::paper(),
        };
        plan_star_sweep(&plan)?.iter().map(|p| row(p, None)).collect()
    } else {
        let mut plan = IsoflopPlan::new(concat(&c.targets), domain(&c.cost)?, c.n);
        plan.epsilon = c.epsilon;
        plan.subset = c.subset;
        let planned = plan_isoflop_sweep(&plan, &vis, mode)?;
        for (t, xs) in &planned {
            if xs.is_empty() {
                eprintln!("warning: no configuration within {} of {t:e} FLOPs", c.epsilon);
            }
        }
        planned
            .iter()
            .flat_map(|(t, xs)| isoflop_design(&[(*t, xs.clone())], c.n).into_iter().map(move |p| (p, *t)))
            .map(|(p, t)| row(&p, Some(t)))
            .collect()
    };
    println!("{} design points", rows.len());
    let path = output_path(g, "design");
    if g.json {
        write_json(&path, &rows)?;
    } else {
        let mut w = csv::Writer::from_writer(create(&path)?);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(vec![path])
}

fn load_truth(path: &Path) -> Result<ScalingModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let model = if value.get("kind").is_some() {
        match serde_json::from_value::<Model>(value)? {
            Model::Single(m) => m.model,
            Model::Bagged(_) => bail!("a bagged model cannot serve as ground truth"),
        }
    } else if value.get("theta").is_some() {
        serde_json::from_value::<ScalingModel>(value)?
    } else {
        let theta: Params<f64> = serde_json::from_value(value)?;
        ScalingModel { theta, coordinates: Coordinates::default() }
    };
    Ok(ScalingModel::new(model.theta, model.coordinates)?)
}

fn load_design(path: &Path) -> Result<Vec<DesignPoint>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rdr.deserialize::<DesignRow>()
        .enumerate()
        .map(|(i, r)| {
            let r = r.with_context(|| format!("{} row {}", path.display(), i + 2))?;
            Ok(DesignPoint { x: ScalingFactors::new(r.lm_params, r.frames, r.tokens_per_frame)?, n: r.n, sweep: r.sweep })
        })
        .collect()
}

fn simulate(g: &Global, c: &SimulateCmd) -> Result<Vec<PathBuf>> {
    let truth = load_truth(&c.truth)?;
    let design = match &c.design_file {
        Some(p) => load_design(p)?,
        None => {
            let star = || plan_star_sweep(&StarPlan::paper());
            match c.design {
                DesignPreset::Star => star()?,
                DesignPreset::Isoflop => sweep_data::paper_isoflop_design(),
                DesignPreset::Both => {
                    let mut d = star()?;
                    d.extend(sweep_data::paper_isoflop_design());
                    d
                }
            }
        }
    };
    let out = sweep_data::synthesize(&truth, &design, c.noise_sigma, g.seed, &c.metric)?;
    if !out.excluded.is_empty() {
        eprintln!("warning: {} design points produced error >= 100 and were dropped", out.excluded.len());
    }
    println!("{} records", out.records.len());
    let path = match &g.output {
        Some(n) => g.out.join(n),
        None => g.out.join(if g.json { "records.jsonl" } else { "records.csv" }),
    };
    sweep_data::save_records(&path, &out.records)?;
    Ok(vec![path])
}
