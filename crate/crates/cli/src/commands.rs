use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use gdpo::clustering::{cluster_stats, cluster_with_trace, write_assignments, ClusteringConfig};
use gdpo::eval::{generated_dataset, histogram, write_histogram_csv};
use gdpo::model::SequenceModel;
use gdpo::pipeline::{self, PipelineConfig, SweepParam, SweepRow};
use gdpo::preference::append_group_manifest;
use gdpo::seqdata::{
    generate_landscape, load_dataset, save_dataset, Alphabet, DataFormat, Dataset, GroundTruthKind,
    GroundTruthScorer, LandscapeSpec,
};
use gdpo::training::{pretrain_reference, Method, MetricRecord, TrainRun, Trainer, TrainerState};

use crate::config::to_toml;
use crate::error::{CliError, CliResult};
use crate::run_dir::{self, Manifest};
use crate::{ClusterArgs, CompareArgs, DataArgs, SweepArgs, SynthArgs, TrainArgs};

/// Landscape parameters plus the noiseless scorer, as written by `synth`.
#[derive(Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub spec: LandscapeSpec,
    pub scorer: GroundTruthScorer,
}

fn data_format(path: &Path, explicit: Option<&str>) -> CliResult<DataFormat> {
    match explicit {
        Some(f) => f
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown data format `{f}`"))),
        None => DataFormat::from_path(path).ok_or_else(|| {
            CliError::Usage(format!(
                "cannot infer the format of {}; pass --format csv|fasta",
                path.display()
            ))
        }),
    }
}

fn load(args: &DataArgs) -> CliResult<Dataset> {
    let alphabet = Alphabet::new(&args.alphabet).map_err(|e| CliError::Usage(e.to_string()))?;
    let format = data_format(&args.data, args.format.as_deref())?;
    let ds = load_dataset(&args.data, format, &alphabet, args.wild_type.as_deref())?;
    if args.wild_type.is_none() && ds.index_of("wt").is_some() {
        return Ok(Dataset::new(
            alphabet,
            ds.sequences().to_vec(),
            Some("wt".into()),
        )?);
    }
    if ds.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no sequences",
            args.data.display()
        )));
    }
    Ok(ds)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_metrics(path: &Path, history: &[MetricRecord]) -> CliResult<()> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn synth(a: SynthArgs, argv: &[String]) -> CliResult<()> {
    let ground_truth = match a.ground_truth.as_str() {
        "additive" => GroundTruthKind::Additive,
        "pairwise-epistatic" => GroundTruthKind::PairwiseEpistatic,
        other => return Err(CliError::Usage(format!("unknown ground truth `{other}`"))),
    };
    let spec = LandscapeSpec {
        length: a.length,
        n: a.n,
        mutation_breadth: a.breadth,
        max_mutations_per_variant: a.max_mutations,
        ground_truth,
        noise_sd: a.noise_sd,
        seed: a.seed,
        ..LandscapeSpec::default()
    };
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let format: DataFormat = a
        .format
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown format `{}`", a.format)))?;
    let (dataset, scorer) = generate_landscape(&spec)?;
    let dir = run_dir::create(&a.output, "synth", a.seed)?;
    let data_name = match format {
        DataFormat::Csv => "dataset.csv",
        DataFormat::Fasta => "dataset.fasta",
    };
    save_dataset(&dataset, &dir.join(data_name), format)?;
    write_json(
        &dir.join("ground_truth.json"),
        &GroundTruthFile {
            spec: spec.clone(),
            scorer,
        },
    )?;
    Manifest::start("synth", argv, a.seed, serde_json::to_value(&spec)?)
        .finish(&dir, &[data_name, "ground_truth.json"])?;
    println!("{}", dir.display());
    Ok(())
}

pub fn cluster(a: ClusterArgs, argv: &[String]) -> CliResult<()> {
    let config = ClusteringConfig::with_tau(a.tau);
    config.validate()?;
    let dataset = load(&a.data)?;
    let outcome = cluster_with_trace(&dataset, &config)?;
    let stats = cluster_stats(&outcome.clusters);
    let dir = run_dir::create(&a.output, "cluster", 0)?;
    write_assignments(&dir.join("assignments.csv"), &dataset, &outcome.clusters)?;
    write_json(
        &dir.join("cluster_stats.json"),
        &json!({ "tau": a.tau, "merges": outcome.merges.len(), "stats": stats }),
    )?;
    let mut manifest = Manifest::start("cluster", argv, 0, serde_json::to_value(&config)?);
    manifest.input(&a.data.data)?;
    manifest.finish(&dir, &["assignments.csv", "cluster_stats.json"])?;
    println!(
        "{} clusters ({} singletons), {} within-cluster pairs of {} exhaustive",
        stats.cluster_count,
        stats.singleton_count,
        stats.within_cluster_pairs,
        stats.exhaustive_pairs
    );
    println!("{}", dir.display());
    Ok(())
}

const STATE: &str = "state.json";
const REFERENCE: &str = "reference.json";
const POLICY: &str = "policy.json";
const METRICS: &str = "metrics.jsonl";
const GROUPS: &str = "groups.csv";
const REPORT: &str = "report.json";
const CONFIG: &str = "config.toml";

/// What `train --resume` needs beyond the trainer state.
#[derive(Serialize, Deserialize)]
struct TrainSetup {
    data: PathBuf,
    format: Option<String>,
    wild_type: Option<String>,
    alphabet: String,
    method: Method,
}

pub fn train(a: TrainArgs, argv: &[String]) -> CliResult<()> {
    let (dir, dataset, reference, mut trainer_state, mut manifest, setup) = match &a.resume {
        Some(dir) => {
            let manifest = Manifest::read(dir)?;
            let setup: TrainSetup = serde_json::from_value(manifest.config["setup"].clone())?;
            let data = DataArgs {
                data: setup.data.clone(),
                format: setup.format.clone(),
                wild_type: setup.wild_type.clone(),
                alphabet: setup.alphabet.clone(),
            };
            let digest = run_dir::sha256_file(&data.data)?;
            if manifest.inputs.first().map(|d| &d.sha256) != Some(&digest) {
                return Err(CliError::Data(format!(
                    "{} changed since the run started",
                    data.data.display()
                )));
            }
            let dataset = load(&data)?;
            let reference = SequenceModel::load(&dir.join(REFERENCE))?;
            let state: TrainerState = serde_json::from_str(&fs::read_to_string(dir.join(STATE))?)?;
            (
                dir.clone(),
                dataset,
                reference,
                Some(state),
                manifest,
                setup,
            )
        }
        None => {
            let data_path = a
                .data
                .data
                .clone()
                .expect("clap requires --data without --resume");
            let data = DataArgs {
                data: data_path,
                format: a.data.format.clone(),
                wild_type: a.data.wild_type.clone(),
                alphabet: a.data.alphabet.clone(),
            };
            let method: Method = a.method.parse()?;
            let cfg = a.flags.resolve()?;
            let dataset = load(&data)?;
            let reference = pretrain_reference(&dataset, &cfg.model, cfg.train.seed)?;
            let dir = run_dir::create(&a.output, "train", cfg.train.seed)?;
            reference.save(&dir.join(REFERENCE))?;
            fs::write(dir.join(CONFIG), to_toml(&cfg))?;
            let setup = TrainSetup {
                data: fs::canonicalize(&data.data)?,
                format: data.format.clone(),
                wild_type: data.wild_type.clone(),
                alphabet: data.alphabet.clone(),
                method,
            };
            let mut manifest = Manifest::start(
                "train",
                argv,
                cfg.train.seed,
                json!({ "pipeline": cfg, "setup": setup }),
            );
            manifest.input(&setup.data)?;
            manifest.write(&dir)?;
            (dir, dataset, reference, None, manifest, setup)
        }
    };

    let mut trainer = match trainer_state.take() {
        Some(state) => Trainer::resume(&dataset, &reference, state)?,
        None => {
            let cfg: PipelineConfig = serde_json::from_value(manifest.config["pipeline"].clone())?;
            let _ = fs::remove_file(dir.join(GROUPS));
            Trainer::new(&dataset, &reference, setup.method, &cfg.train)?
        }
    };
    if setup.method == Method::Gdpo {
        trainer.record_groups();
    }
    let mut checks = trainer.history().len();
    loop {
        if let Some(limit) = a.stop_after {
            if trainer.step_count() >= limit && !trainer.is_finished() {
                flush_groups(&mut trainer, &dataset, &dir)?;
                write_json(&dir.join(STATE), &trainer.snapshot())?;
                write_metrics(&dir.join(METRICS), trainer.history())?;
                println!(
                    "stopped at step {}; continue with --resume {}",
                    trainer.step_count(),
                    dir.display()
                );
                return Ok(());
            }
        }
        let more = trainer.step()?;
        if trainer.history().len() != checks || !more {
            checks = trainer.history().len();
            flush_groups(&mut trainer, &dataset, &dir)?;
            write_json(&dir.join(STATE), &trainer.snapshot())?;
            write_metrics(&dir.join(METRICS), trainer.history())?;
        }
        if !more {
            break;
        }
    }
    let run = trainer.finish()?;
    run.policy.save(&dir.join(POLICY))?;
    write_json(&dir.join(REPORT), &run_summary(&run))?;
    let mut artifacts = vec![REFERENCE, POLICY, METRICS, REPORT, STATE, CONFIG];
    if setup.method == Method::Gdpo {
        artifacts.push(GROUPS);
    }
    manifest.argv = argv.to_vec();
    manifest.finish(&dir, &artifacts)?;
    println!(
        "{}: {} steps, best validation loss {:.6} at step {}, {} forward passes",
        run.method,
        run.steps,
        run.best_val_loss,
        run.best_step,
        run.forward_passes()
    );
    println!("{}", dir.display());
    Ok(())
}

fn flush_groups(trainer: &mut Trainer<'_>, dataset: &Dataset, dir: &Path) -> CliResult<()> {
    let epochs = trainer.take_group_log();
    if !epochs.is_empty() {
        append_group_manifest(&dir.join(GROUPS), dataset, &epochs)?;
    }
    Ok(())
}

fn run_summary(run: &TrainRun) -> serde_json::Value {
    json!({
        "method": run.method,
        "steps": run.steps,
        "epochs": run.epochs,
        "best_step": run.best_step,
        "best_val_loss": run.best_val_loss,
        "stop_reason": run.stop_reason,
        "forward_passes": run.forward_passes(),
        "passes": run.passes,
        "pairs_processed": run.pairs_processed,
        "train_pairs": run.train_pair_count,
        "validation_pairs": run.val_pair_count,
        "timings": run.timings,
        "cluster_stats": run.cluster_stats,
    })
}

fn load_ground_truth(path: &Path) -> CliResult<GroundTruthFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn compare(a: CompareArgs, argv: &[String]) -> CliResult<()> {
    let cfg = a.flags.resolve()?;
    let dataset = load(&a.data)?;
    let truth = load_ground_truth(&a.ground_truth)?;
    if truth.scorer.length() != dataset.length() {
        return Err(CliError::Data(
            "ground truth and dataset lengths differ".into(),
        ));
    }
    let outcome = pipeline::compare(&dataset, &truth.scorer, &cfg)?;
    let dir = run_dir::create(&a.output, "compare", cfg.train.seed)?;
    let r = &outcome.report;
    write_json(&dir.join(REPORT), r)?;
    outcome.reference.save(&dir.join(REFERENCE))?;
    outcome.dpo.policy.save(&dir.join("policy_dpo.json"))?;
    outcome.gdpo.policy.save(&dir.join("policy_gdpo.json"))?;
    write_metrics(&dir.join("metrics_dpo.jsonl"), &outcome.dpo.history)?;
    write_metrics(&dir.join("metrics_gdpo.jsonl"), &outcome.gdpo.history)?;
    fs::write(dir.join(CONFIG), to_toml(&cfg))?;

    let mut table = csv_writer(&dir.join("compare.csv"))?;
    table.write_record([
        "method",
        "rho",
        "kendall",
        "forward_passes",
        "steps",
        "training_s",
        "total_s",
    ])?;
    let acc = &r.accounting;
    table.write_record([
        "reference".into(),
        r.rho_ref.to_string(),
        r.kendall_ref.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ])?;
    for (name, rho, kendall, a) in [
        ("dpo", r.rho_dpo, r.kendall_dpo, &acc.dpo),
        ("gdpo", r.rho_gdpo, r.kendall_gdpo, &acc.gdpo),
    ] {
        table.write_record([
            name.to_string(),
            rho.to_string(),
            kendall.to_string(),
            a.forward_passes.to_string(),
            a.steps.to_string(),
            a.training_s.to_string(),
            a.total_s.to_string(),
        ])?;
    }
    table.flush()?;

    for (method, generated) in &outcome.generated {
        let ds = generated_dataset(dataset.alphabet(), generated)?;
        save_dataset(
            &ds,
            &dir.join(format!("generated_{method}.csv")),
            DataFormat::Csv,
        )?;
    }
    let hist = histogram(
        &[
            ("reference", &r.reference.generated_fitness),
            ("dpo", &r.dpo.generated_fitness),
            ("gdpo", &r.gdpo.generated_fitness),
        ],
        30,
    )?;
    write_histogram_csv(&dir.join("fitness_histogram.csv"), &hist)?;

    let mut manifest =
        Manifest::start("compare", argv, cfg.train.seed, serde_json::to_value(&cfg)?);
    manifest.input(&a.data.data)?;
    manifest.input(&a.ground_truth)?;
    manifest.finish(
        &dir,
        &[
            REPORT,
            REFERENCE,
            "policy_dpo.json",
            "policy_gdpo.json",
            "metrics_dpo.jsonl",
            "metrics_gdpo.jsonl",
            CONFIG,
            "compare.csv",
            "generated_dpo.csv",
            "generated_gdpo.csv",
            "fitness_histogram.csv",
        ],
    )?;
    let g = cfg.train.g;
    println!(
        "spearman rho: reference {:.3}, dpo {:.3}, gdpo {:.3}",
        r.rho_ref, r.rho_dpo, r.rho_gdpo
    );
    println!(
        "forward passes: dpo {}, gdpo {} (speedup {:.2}x); wall clock speedup {:.2}x",
        acc.dpo.forward_passes,
        acc.gdpo.forward_passes,
        r.speedup_forward_passes,
        r.speedup_wall_clock
    );
    println!(
        "amortization: {} pairs per forward pass at g = {g}; observed {:.2} training pairs per policy pass",
        g * (g - 1) / 2,
        r.pairs_per_policy_forward
    );
    println!(
        "KS D gdpo vs dpo {:.3} (p = {:.3})",
        r.ks_gdpo_vs_dpo.d, r.ks_gdpo_vs_dpo.p_value
    );
    println!("{}", dir.display());
    Ok(())
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path).map_err(gdpo::Error::from)?)
}

pub fn sweep(a: SweepArgs, argv: &[String]) -> CliResult<()> {
    let param: SweepParam = a.param.parse()?;
    if a.values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let cfg = a.flags.resolve()?;
    let configs = a
        .values
        .iter()
        .map(|&v| pipeline::sweep_config(&cfg.train, param, v))
        .collect::<gdpo::Result<Vec<_>>>()?;
    let dataset = load(&a.data)?;
    let seed = cfg.train.seed;
    let (train, holdout) = pipeline::split_holdout(&dataset, cfg.holdout_fraction, seed)?;
    let reference = pretrain_reference(&train, &cfg.model, seed)?.clone_frozen();

    let points: Vec<(usize, f64)> = a.values.iter().copied().enumerate().collect();
    let mut rows: Vec<Option<gdpo::Result<SweepRow>>> = (0..points.len()).map(|_| None).collect();
    for chunk in points.chunks(a.jobs) {
        let results: Vec<(usize, gdpo::Result<SweepRow>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, v)| {
                    let (train, holdout, reference, c) =
                        (&train, &holdout, &reference, &configs[i]);
                    s.spawn(move || (i, pipeline::sweep_point(train, holdout, reference, c, v)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        for (i, r) in results {
            rows[i] = Some(r);
        }
    }
    let rows = rows
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect::<gdpo::Result<Vec<_>>>()?;

    let dir = run_dir::create(&a.output, "sweep", seed)?;
    let mut table = csv_writer(&dir.join("sweep.csv"))?;
    table.write_record([
        param_name(param),
        "rho",
        "tau_kendall",
        "pairs",
        "forward_passes",
        "steps_to_stop",
    ])?;
    for r in &rows {
        table.write_record([
            r.value.to_string(),
            r.rho.to_string(),
            r.tau_kendall.to_string(),
            r.pairs.to_string(),
            r.forward_passes.to_string(),
            r.steps_to_stop.to_string(),
        ])?;
    }
    table.flush()?;
    write_json(
        &dir.join("sweep.json"),
        &json!({ "param": param, "rows": rows }),
    )?;
    fs::write(dir.join(CONFIG), to_toml(&cfg))?;
    let mut manifest = Manifest::start("sweep", argv, seed, serde_json::to_value(&cfg)?);
    manifest.input(&a.data.data)?;
    manifest.finish(&dir, &["sweep.csv", "sweep.json", CONFIG])?;
    let mut out = std::io::stdout().lock();
    for r in &rows {
        writeln!(
            out,
            "{} = {}: rho {:.3}, pairs {}, forward passes {}, steps {}",
            param_name(param),
            r.value,
            r.rho,
            r.pairs,
            r.forward_passes,
            r.steps_to_stop
        )?;
    }
    writeln!(out, "{}", dir.display())?;
    Ok(())
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Tau => "tau",
        SweepParam::G => "g",
    }
}
