use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use updrom::adaptive::{run_loop, AdaptiveState, LoopSetup, HISTORY_FILE};
use updrom::config::{RunConfig, RESOLVED_CONFIG};
use updrom::datagen::{write_trajectory, Case, ParamPoint, Trajectory};
use updrom::metrics::{
    crps_abs, crps_printed, kinetic_energy, metrics_csv, relative_mse, scaled_mse, MetricRow,
};
use updrom::training::{self, ModelCheckpoint};
use updrom::uq::{
    aggregate_param, aggregate_time, confidence_interval, coverage, nu_t_csv, nu_xi_csv, second_pass,
    uq_field_csv, SecondPass,
};

use crate::store::{
    ensure_dir, missing_or, parse_assignment, read_json, tag, write_json, write_text, DataEntry, DataManifest,
    OutputEntry,
};
use crate::CliError;

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// `--config` if given, else the configuration saved beside `inherit`, else
/// the preset of `case` (KS by default). `--seed` is applied last.
fn resolve(g: &Globals, inherit: Option<&Path>, case: Option<Case>) -> anyhow::Result<RunConfig> {
    let saved = inherit.map(|d| d.join(RESOLVED_CONFIG)).filter(|p| p.exists());
    let mut cfg = match (&g.config, saved) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(path)) => {
            eprintln!("using configuration from {}", path.display());
            RunConfig::load(&path)?
        }
        (None, None) => RunConfig::preset(case.unwrap_or(Case::Ks)),
    };
    if let Some(case) = case {
        cfg.datagen.case = case;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.uq.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn root(g: &Globals) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn parse_points(cfg: &RunConfig, params: &[String]) -> anyhow::Result<Vec<ParamPoint>> {
    if params.is_empty() {
        return Ok(cfg.grid_points());
    }
    let mut points = Vec::new();
    for p in params {
        let (name, values) = parse_assignment(p)?;
        if values.len() != 1 {
            return Err(CliError::Usage(format!("--param takes exactly one value, got {p:?}")).into());
        }
        points.push(ParamPoint::single(&name, values[0]));
    }
    Ok(points)
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<ModelCheckpoint> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::Missing(format!("no checkpoint in {}", dir.display())).into());
    }
    Ok(ModelCheckpoint::load(dir)?)
}

const MANIFEST_FILE: &str = "manifest.json";

fn check_case(manifest: &DataManifest, cfg: &RunConfig) -> anyhow::Result<()> {
    if manifest.case != cfg.datagen.case {
        return Err(updrom::Error::Schema(format!(
            "data were generated for {} but the configuration is for {}",
            manifest.case, cfg.datagen.case
        ))
        .into());
    }
    Ok(())
}

fn ensure_finite(what: &str, values: &[f64]) -> anyhow::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(updrom::Error::Divergence { what: "output check", step: 0 })
            .map_err(|e| anyhow::Error::new(e).context(format!("{what} contains non-finite values")))
    }
}

pub fn generate(g: &Globals, case: Option<Case>, sweep: Option<&str>) -> anyhow::Result<()> {
    let cfg = resolve(g, None, case)?;
    let generator = cfg.generator();
    let values = match sweep {
        Some(s) => {
            let (name, values) = parse_assignment(s)?;
            let expected = cfg.datagen.case.param_name();
            let accepted = name == expected || (cfg.datagen.case == Case::Ks && name == "nu");
            if !accepted {
                return Err(CliError::Usage(format!(
                    "{} sweeps are over {expected}, got {name}",
                    cfg.datagen.case
                ))
                .into());
            }
            values
        }
        None => {
            let mut v: Vec<f64> = cfg.datagen.grid.iter().chain(&cfg.datagen.train).copied().collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
    };
    if values.is_empty() {
        return Err(CliError::Usage("empty sweep".into()).into());
    }
    let trajectories: Vec<Trajectory> = values
        .par_iter()
        .map(|&v| {
            let p = generator.point(v);
            generator.generate(&p).map_err(|e| updrom::Error::Generator {
                param: p.to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    let dir = ensure_dir(&root(g).join("data"))?;
    let mut entries = Vec::new();
    for t in &trajectories {
        ensure_finite("trajectory", t.states())?;
        let file = format!("{}.updr", tag(&t.param));
        write_trajectory(&dir.join(&file), t)?;
        entries.push(DataEntry {
            param: t.param.clone(),
            file,
        });
    }
    write_json(
        &dir.join(MANIFEST_FILE),
        &DataManifest {
            case: cfg.datagen.case,
            entries,
        },
    )?;
    cfg.write_resolved(&dir)?;
    eprintln!("wrote {} trajectories to {}", trajectories.len(), dir.display());
    Ok(())
}

pub fn train(g: &Globals, data: Option<PathBuf>) -> anyhow::Result<()> {
    let data_dir = data.unwrap_or_else(|| root(g).join("data"));
    let cfg = resolve(g, Some(&data_dir), None)?;
    let manifest = DataManifest::load(&data_dir)?;
    check_case(&manifest, &cfg)?;
    let points = cfg.train_points();
    if points.is_empty() {
        return Err(updrom::Error::Config("datagen.train is empty".into()).into());
    }
    let dataset: Vec<Trajectory> = points
        .iter()
        .map(|p| Ok(updrom::datagen::split_even_odd(&manifest.trajectory(&data_dir, p)?)?.0))
        .collect::<anyhow::Result<_>>()?;
    let ckpt = training::train(&dataset, &cfg.schema()?, &cfg.model(), &cfg.train_config(), cfg.seed)?;
    ensure_finite("loss history", &ckpt.loss_history)?;
    let dir = ensure_dir(&root(g).join("train"))?;
    ckpt.save(&dir.join("checkpoint"))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in ckpt.loss_history.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_text(&dir.join("loss.csv"), &csv)?;
    cfg.write_resolved(&dir)?;
    eprintln!(
        "trained for {} epochs, final loss {:.6e}; checkpoint in {}",
        cfg.training.epochs,
        ckpt.loss_history.last().copied().unwrap_or(f64::NAN),
        dir.join("checkpoint").display()
    );
    Ok(())
}

struct Rollout {
    param: ParamPoint,
    pred: Trajectory,
    truth: Trajectory,
    pass: SecondPass,
    start: usize,
}

/// Predicts each point's test half and re-encodes the prediction for the
/// ensemble. A rollout starts from the first lookback window; with `windows`
/// every block of `q` true snapshots forecasts the next `h` instead.
fn rollouts(
    cfg: &RunConfig,
    ckpt: &ModelCheckpoint,
    data_dir: &Path,
    points: &[ParamPoint],
    windows: bool,
) -> anyhow::Result<Vec<Rollout>> {
    let manifest = DataManifest::load(data_dir)?;
    check_case(&manifest, cfg)?;
    let tests: Vec<Trajectory> = points
        .iter()
        .map(|p| manifest.test_half(data_dir, p))
        .collect::<anyhow::Result<_>>()?;
    let q = ckpt.lookback();
    tests
        .into_par_iter()
        .zip(points)
        .map(|(test, p)| {
            let context = || format!("prediction at {p}");
            let (pred, truth) = if windows {
                let (pred, truth) = ckpt.window_forecasts(&test).with_context(context)?;
                let wrap = |states| Trajectory::new(states, test.n_xy(), test.dt, test.grid.clone(), test.param.clone());
                (wrap(pred)?, wrap(truth)?)
            } else {
                let pred = ckpt.predict(&test, test.n_t().saturating_sub(q)).with_context(context)?;
                (pred, test.window(q, test.n_t())?)
            };
            ensure_finite("prediction", pred.states())?;
            let pass = second_pass(&pred, ckpt, cfg.uq.ensemble_size, cfg.uq.seed)?;
            Ok(Rollout {
                param: p.clone(),
                pred,
                truth,
                pass,
                start: q,
            })
        })
        .collect()
}

fn checkpoint_dir(g: &Globals, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| root(g).join("train").join("checkpoint"))
}

pub fn infer(
    g: &Globals,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    params: &[String],
    windows: bool,
) -> anyhow::Result<()> {
    let ckpt_dir = checkpoint_dir(g, checkpoint);
    let cfg = resolve(g, ckpt_dir.parent(), None)?;
    let ckpt = load_checkpoint(&ckpt_dir)?;
    let data_dir = data.unwrap_or_else(|| root(g).join("data"));
    let points = parse_points(&cfg, params)?;
    let runs = rollouts(&cfg, &ckpt, &data_dir, &points, windows)?;
    let dir = ensure_dir(&root(g).join("infer"))?;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for r in &runs {
        let t = tag(&r.param);
        let members = r.pass.member_refs();
        let row = MetricRow {
            param: r.param.clone(),
            relative_mse_percent: relative_mse(&r.pred, &r.truth)?,
            crps_printed: crps_printed(&members, r.truth.states())?,
            crps_abs: crps_abs(&members, r.truth.states())?,
            scaled_mse_mean: scaled_mse(&r.pred, &r.truth)?.mean,
        };
        ensure_finite(
            "metrics",
            &[row.relative_mse_percent, row.crps_printed, row.crps_abs, row.scaled_mse_mean],
        )?;
        rows.push(row);
        let mut ke = String::from("step,time,predicted,truth\n");
        for (i, (p, tr)) in kinetic_energy(&r.pred).iter().zip(kinetic_energy(&r.truth)).enumerate() {
            let step = r.start + i;
            ke.push_str(&format!("{step},{},{p},{tr}\n", step as f64 * r.truth.dt));
        }
        let ke_file = format!("ke_{t}.csv");
        let pred_file = format!("pred_{t}.updr");
        write_text(&dir.join(&ke_file), &ke)?;
        write_trajectory(&dir.join(&pred_file), &r.pred)?;
        entries.push(OutputEntry {
            param: r.param.clone(),
            files: vec![("ke".into(), ke_file), ("prediction".into(), pred_file)],
        });
    }
    write_text(&dir.join("metrics.csv"), &metrics_csv(&rows))?;
    write_json(&dir.join(MANIFEST_FILE), &entries)?;
    cfg.write_resolved(&dir)?;
    for row in &rows {
        eprintln!(
            "{}: relative MSE {:.4}%  scaled MSE {:.4e}",
            row.param, row.relative_mse_percent, row.scaled_mse_mean
        );
    }
    Ok(())
}

pub fn uq(
    g: &Globals,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    n: Option<usize>,
    k: Option<f64>,
    params: &[String],
    windows: bool,
) -> anyhow::Result<()> {
    let ckpt_dir = checkpoint_dir(g, checkpoint);
    let mut cfg = resolve(g, ckpt_dir.parent(), None)?;
    if let Some(n) = n {
        cfg.uq.ensemble_size = n;
    }
    if let Some(k) = k {
        cfg.uq.k = k;
    }
    cfg.validate()?;
    let ckpt = load_checkpoint(&ckpt_dir)?;
    let data_dir = data.unwrap_or_else(|| root(g).join("data"));
    let points = parse_points(&cfg, params)?;
    let runs = rollouts(&cfg, &ckpt, &data_dir, &points, windows)?;
    let dir = ensure_dir(&root(g).join("uq"))?;
    let mut nu_rows = Vec::new();
    let mut cov = String::from("param,nu_xi,coverage\n");
    let mut entries = Vec::new();
    for r in &runs {
        let t = tag(&r.param);
        let field = &r.pass.field;
        ensure_finite("uncertainty", &field.nu)?;
        let nu_xi = aggregate_param(field);
        let (lower, upper) = confidence_interval(&r.pass.mean, field, cfg.uq.k)?;
        let c = coverage(&lower, &upper, r.truth.states());
        let mut ci = String::from("t,d,mean,lower,upper,truth\n");
        let n_xy = field.n_xy;
        for (i, ((m, (lo, hi)), tr)) in r
            .pass
            .mean
            .iter()
            .zip(lower.iter().zip(&upper))
            .zip(r.truth.states())
            .enumerate()
        {
            ci.push_str(&format!("{},{},{m},{lo},{hi},{tr}\n", i / n_xy, i % n_xy));
        }
        let files = [
            ("field", format!("uq_field_{t}.csv"), uq_field_csv(field)),
            ("nu_t", format!("nu_t_{t}.csv"), nu_t_csv(&aggregate_time(field))),
            ("interval", format!("ci_{t}.csv"), ci),
        ];
        for (_, name, text) in &files {
            write_text(&dir.join(name), text)?;
        }
        entries.push(OutputEntry {
            param: r.param.clone(),
            files: files.iter().map(|(role, name, _)| (role.to_string(), name.clone())).collect(),
        });
        cov.push_str(&format!("{},{nu_xi},{c}\n", r.param));
        nu_rows.push((r.param.clone(), nu_xi));
        eprintln!("{}: nu_xi {nu_xi:.4e}  coverage at k={} {:.1}%", r.param, cfg.uq.k, 100.0 * c);
    }
    write_text(&dir.join("nu_xi.csv"), &nu_xi_csv(&nu_rows))?;
    write_text(&dir.join("coverage.csv"), &cov)?;
    write_json(&dir.join(MANIFEST_FILE), &entries)?;
    cfg.write_resolved(&dir)?;
    Ok(())
}

pub fn adapt(g: &Globals, checkpoint: Option<PathBuf>, budget: Option<usize>, threshold: Option<f64>) -> anyhow::Result<()> {
    let ckpt_dir = checkpoint_dir(g, checkpoint);
    let mut cfg = resolve(g, ckpt_dir.parent(), None)?;
    if let Some(b) = budget {
        cfg.adaptive.budget = b;
    }
    if let Some(t) = threshold {
        cfg.adaptive.threshold = t;
    }
    let ckpt = load_checkpoint(&ckpt_dir)?;
    let dir = ensure_dir(&root(g).join("adapt"))?;
    cfg.write_resolved(&dir)?;
    let grid = cfg.grid_points();
    let trained = cfg.train_points();
    let setup = LoopSetup {
        grid: &grid,
        trained: &trained,
        config: &cfg.adaptive,
        uq: &cfg.uq,
        seed: cfg.seed,
        out_dir: Some(&dir),
    };
    let outcome = run_loop(ckpt, &cfg.generator(), &setup)?;
    for rec in &outcome.state.history {
        let chosen = rec.chosen.as_ref().map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        let r = rec.pearson.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into());
        eprintln!("iteration {}: pearson {r}  next {chosen}", rec.iteration);
    }
    Ok(())
}

fn prefixed_rows(param: &ParamPoint, csv: &str, out: &mut String) {
    let prefix: String = param.iter().map(|(_, v)| format!("{v},")).collect();
    for line in csv.lines().skip(1) {
        out.push_str(&prefix);
        out.push_str(line);
        out.push('\n');
    }
}

fn header(param: &ParamPoint, rest: &str) -> String {
    let mut h: String = param.iter().map(|(k, _)| format!("{k},")).collect();
    h.push_str(rest);
    h.push('\n');
    h
}

fn read_csv(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| missing_or(path, e))
}

pub fn report(g: &Globals, dir: Option<PathBuf>) -> anyhow::Result<()> {
    let base = dir.unwrap_or_else(|| root(g));
    let infer_dir = base.join("infer");
    let uq_dir = base.join("uq");
    let adapt_dir = base.join("adapt");
    let have_infer = infer_dir.join(MANIFEST_FILE).exists();
    let have_uq = uq_dir.join(MANIFEST_FILE).exists();
    let have_adapt = adapt_dir.join(HISTORY_FILE).exists();
    if !(have_infer || have_uq || have_adapt) {
        return Err(CliError::Missing(format!(
            "no infer, uq or adapt outputs under {}",
            base.display()
        ))
        .into());
    }
    let cfg = resolve(g, Some(&base.join("train")), None)?;
    let out = ensure_dir(&base.join("report"))?;
    if have_infer {
        let entries: Vec<OutputEntry> = read_json(&infer_dir.join(MANIFEST_FILE))?;
        let mut csv = String::new();
        for e in &entries {
            if csv.is_empty() {
                csv = header(&e.param, "step,time,predicted,truth");
            }
            let file = e.file("ke").ok_or_else(|| CliError::Missing(format!("kinetic energy for {}", e.param)))?;
            prefixed_rows(&e.param, &read_csv(&infer_dir.join(file))?, &mut csv);
        }
        write_text(&out.join("ke_signals.csv"), &csv)?;
        std::fs::copy(infer_dir.join("metrics.csv"), out.join("metrics.csv"))
            .map_err(|e| missing_or(&infer_dir.join("metrics.csv"), e))?;
    }
    if have_uq {
        let entries: Vec<OutputEntry> = read_json(&uq_dir.join(MANIFEST_FILE))?;
        let mut csv = String::new();
        for e in &entries {
            if csv.is_empty() {
                csv = header(&e.param, "t,nu_t");
            }
            let file = e.file("nu_t").ok_or_else(|| CliError::Missing(format!("nu_t for {}", e.param)))?;
            prefixed_rows(&e.param, &read_csv(&uq_dir.join(file))?, &mut csv);
        }
        write_text(&out.join("nu_heatmap.csv"), &csv)?;
    }
    if have_adapt {
        let state: AdaptiveState = read_json(&adapt_dir.join(HISTORY_FILE))?;
        let mut csv = String::from("iteration,max_nu_untrained,max_scaled_mse,pearson,chosen\n");
        for rec in &state.history {
            let max_nu = rec
                .points
                .iter()
                .filter(|p| !p.trained)
                .map(|p| p.nu_xi.unwrap_or(f64::INFINITY))
                .reduce(f64::max);
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let chosen = rec.chosen.as_ref().map(|p| p.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},\"{chosen}\"\n",
                rec.iteration,
                opt(max_nu),
                opt(rec.max_scaled_mse()),
                opt(rec.pearson)
            ));
        }
        write_text(&out.join("adaptive_summary.csv"), &csv)?;
    }
    cfg.write_resolved(&out)?;
    eprintln!("report written to {}", out.display());
    Ok(())
}
