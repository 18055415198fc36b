use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use residue_core::analysis::{
    argmax_by, component_profile, fit_pca, n_sigma, profile_csv, sweep_csv, window_sweep, SweepData,
};
use residue_core::attacks::{read_jsonl, write_jsonl, AttackKind};
use residue_core::detectors::DetectorKind;
use residue_core::eval::evaluate_detection;
use residue_core::workbench::config::{apply, load_config};
use residue_core::workbench::experiment::{
    profile_svg, sweep_svg, write_artifacts, Artifacts, DetectorRow,
};
use residue_core::workbench::fixture::DetectorSuite;
use residue_core::workbench::records::{
    attack_records, detection_from_records, AttackRecord, ScoreRecord,
};
use residue_core::workbench::{
    run_experiments, synth_corpus, write_dataset, ExperimentConfig, ExperimentId, Session,
};
use residue_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "residue",
    version,
    about = "Adversarial attacks, residue analysis and detectors on toy text classifiers"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// INI configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for dataset-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Training split (JSONL); requires --test and --lexicon.
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    frequencies: Option<PathBuf>,
    /// Trained model checkpoint.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, lexicon and frequency table.
    Synth,
    /// Train the classifier and save a checkpoint.
    TrainModel,
    /// Attack one split and write attacks.jsonl.
    Attack {
        #[arg(long, default_value = "substitution")]
        kind: String,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        edits: Option<usize>,
    },
    /// Fit detectors on one attack file and evaluate them on another.
    Detect {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Comma-separated detector names.
        #[arg(long)]
        detectors: Option<String>,
    },
    /// Residue profile and N_σ of an attack file; window sweep with --fit.
    Analyze {
        #[arg(long)]
        attacks: PathBuf,
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Best-F1 evaluation of a score file of `{"label", "score"}` lines.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "detector")]
        name: String,
    },
    /// Run a named experiment, or `all`.
    Experiment { id: Option<String> },
}

fn settings(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    for (key, v) in [
        ("data.train", &g.train),
        ("data.test", &g.test),
        ("data.lexicon", &g.lexicon),
        ("data.frequencies", &g.frequencies),
        ("data.model", &g.model),
    ] {
        if let Some(p) = v {
            apply(&mut cfg, key, &p.to_string_lossy())?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn finish(
    cfg: &ExperimentConfig,
    name: &str,
    artifacts: &Artifacts,
    inputs: &[PathBuf],
    start: Instant,
) -> Result<()> {
    let m = write_artifacts(
        &cfg.out,
        name,
        cfg,
        artifacts,
        inputs,
        start.elapsed().as_secs_f64(),
    )?;
    for f in &m.outputs {
        println!("{}", cfg.out.join(&f.path).display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = settings(&cli.global)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::config("experiment.threads", e.to_string()))?;
    let config_input: Vec<PathBuf> = cli.global.config.iter().cloned().collect();
    let start = Instant::now();
    let mut out = Artifacts::default();
    match cli.command {
        Command::Synth => {
            let c = synth_corpus(&cfg.fixture.synth, cfg.seed())?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            for (name, rows) in [("train.jsonl", &c.train), ("test.jsonl", &c.test)] {
                let p = cfg.out.join(name);
                write_dataset(&p, rows)?;
                out.files.insert(
                    name.into(),
                    std::fs::read(&p).map_err(|e| Error::io(&p, e))?,
                );
            }
            out.files
                .insert("lexicon.tsv".into(), c.lexicon_text.clone().into_bytes());
            out.files.insert(
                "frequencies.tsv".into(),
                c.frequencies.to_text().into_bytes(),
            );
            finish(&cfg, "synth", &out, &config_input, start)
        }
        Command::TrainModel => {
            let s = Session::open(&cfg)?;
            let fx = &s.fixture;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            let p = cfg.out.join("model.ckpt");
            fx.model.save(&p)?;
            out.files.insert(
                "model.ckpt".into(),
                std::fs::read(&p).map_err(|e| Error::io(&p, e))?,
            );
            let acc = |d: &[(residue_core::model::TokenSequence, usize)]| -> Result<f64> {
                let mut ok = 0;
                for (x, y) in d {
                    ok += usize::from(fx.model.predict(x)? == *y);
                }
                Ok(ok as f64 / d.len() as f64)
            };
            #[derive(Serialize)]
            struct TrainSummary {
                model_id: String,
                train_accuracy: f64,
                test_accuracy: f64,
            }
            out.files.insert(
                "report.json".into(),
                json(&TrainSummary {
                    model_id: fx.model.model_id(),
                    train_accuracy: acc(&fx.train)?,
                    test_accuracy: acc(&fx.test)?,
                })?,
            );
            finish(&cfg, "train-model", &out, &config_input, start)
        }
        Command::Attack { kind, split, edits } => {
            let kind: AttackKind = kind.parse()?;
            let mut cfg = cfg;
            if let Some(n) = edits {
                cfg.fixture.edits = n;
            }
            let s = Session::open(&cfg)?;
            let fx = &s.fixture;
            let (set, budget) = s.attack_split(kind, matches!(split, Split::Train))?;
            let recs = attack_records(&fx.model, &set, budget)?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            let p = cfg.out.join("attacks.jsonl");
            write_jsonl(&p, &recs)?;
            out.files.insert(
                "attacks.jsonl".into(),
                std::fs::read(&p).map_err(|e| Error::io(&p, e))?,
            );
            #[derive(Serialize)]
            struct AttackSummary {
                kind: AttackKind,
                budget: f64,
                attempted: usize,
                fooled: usize,
                fooling_rate: f64,
            }
            out.files.insert(
                "report.json".into(),
                json(&AttackSummary {
                    kind,
                    budget,
                    attempted: set.attempted,
                    fooled: set.fooled(),
                    fooling_rate: set.fooling_rate()?,
                })?,
            );
            finish(&cfg, "attack", &out, &config_input, start)
        }
        Command::Detect {
            fit,
            eval,
            detectors,
        } => {
            let kinds: Vec<DetectorKind> = match detectors {
                Some(list) => list
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?,
                None => cfg.detectors.clone(),
            };
            let s = Session::open(&cfg)?;
            let fx = &s.fixture;
            let (_, train) = detection_from_records(&fx.model, &read_jsonl::<AttackRecord>(&fit)?)?;
            let (_, test) = detection_from_records(&fx.model, &read_jsonl::<AttackRecord>(&eval)?)?;
            let suite = DetectorSuite::fit(fx, &train)?;
            let mut rows = Vec::new();
            let mut scores = Vec::new();
            for k in kinds {
                let raw = suite.scores(fx, k, &test)?;
                let r = evaluate_detection(k.name(), &raw, &test.labels)?;
                out.files.insert(
                    format!("curve_{}.csv", k.name()),
                    r.curve_csv().into_bytes(),
                );
                rows.push(DetectorRow::from(&r));
                for (score, label) in raw.into_iter().zip(&test.labels) {
                    let mut line = serde_json::to_vec(&serde_json::json!({
                        "detector": k.name(), "label": label, "score": score
                    }))?;
                    line.push(b'\n');
                    scores.extend(line);
                }
            }
            out.files.insert("scores.jsonl".into(), scores);
            out.files.insert("report.json".into(), json(&rows)?);
            finish(
                &cfg,
                "detect",
                &out,
                &[config_input, vec![fit, eval]].concat(),
                start,
            )
        }
        Command::Analyze {
            attacks,
            fit,
            window,
        } => {
            let s = Session::open(&cfg)?;
            let fx = &s.fixture;
            let pca = fit_pca(&fx.train_embeddings()?.0)?;
            let (set, det) =
                detection_from_records(&fx.model, &read_jsonl::<AttackRecord>(&attacks)?)?;
            let sides =
                |d: &residue_core::workbench::fixture::DetectionSet, adv: bool| -> Vec<Vec<f64>> {
                    d.embeddings
                        .iter()
                        .zip(&d.labels)
                        .filter(|(_, l)| l.is_adversarial() == adv)
                        .map(|(e, _)| e.clone())
                        .collect()
                };
            let (te_o, te_a) = (sides(&det, false), sides(&det, true));
            let po = component_profile(&pca, &te_o)?;
            let pa = component_profile(&pca, &te_a)?;
            out.files
                .insert("profile.csv".into(), profile_csv(&po, &pa)?.into_bytes());
            out.files
                .insert("profile.svg".into(), profile_svg(&po, &pa).into_bytes());
            let mut report = serde_json::json!({ "n_sigma": n_sigma(&po, &pa, None)? });
            let mut inputs = vec![attacks];
            if let Some(fit) = fit {
                let (_, tr) =
                    detection_from_records(&fx.model, &read_jsonl::<AttackRecord>(&fit)?)?;
                let (tr_o, tr_a) = (sides(&tr, false), sides(&tr, true));
                let labels: Vec<usize> = set.successful().iter().map(|p| p.label).collect();
                let mut rcfg = fx.spec.residue.clone();
                rcfg.seed = cfg.seed();
                let width = window.unwrap_or(cfg.window);
                let recs = window_sweep(
                    &fx.model,
                    &pca,
                    SweepData {
                        train_orig: &tr_o,
                        train_adv: &tr_a,
                        test_orig: &te_o,
                        test_adv: &te_a,
                        test_labels: &labels,
                    },
                    width,
                    &rcfg,
                )?;
                out.files
                    .insert("sweep.csv".into(), sweep_csv(&recs).into_bytes());
                out.files
                    .insert("sweep.svg".into(), sweep_svg(&recs, width).into_bytes());
                report["window"] = width.into();
                report["argmax_accuracy_p"] =
                    serde_json::to_value(argmax_by(&recs, |r| r.accuracy))?;
                report["argmax_f1_p"] = serde_json::to_value(argmax_by(&recs, |r| r.f1))?;
                inputs.push(fit);
            }
            out.files.insert("report.json".into(), json(&report)?);
            finish(
                &cfg,
                "analyze",
                &out,
                &[config_input, inputs].concat(),
                start,
            )
        }
        Command::Eval { scores, name } => {
            let recs: Vec<ScoreRecord> = read_jsonl(&scores)?;
            let s: Vec<f64> = recs.iter().map(|r| r.score).collect();
            let l: Vec<_> = recs.iter().map(|r| r.label).collect();
            let r = evaluate_detection(&name, &s, &l)?;
            out.files
                .insert("curve.csv".into(), r.curve_csv().into_bytes());
            out.files
                .insert("report.json".into(), json(&DetectorRow::from(&r))?);
            finish(
                &cfg,
                "eval",
                &out,
                &[config_input, vec![scores]].concat(),
                start,
            )
        }
        Command::Experiment { id } => {
            let ids: Vec<ExperimentId> = match id.as_deref() {
                Some("all") => ExperimentId::ALL.to_vec(),
                Some(name) => vec![name.parse()?],
                None => vec![cfg
                    .experiment
                    .ok_or_else(|| Error::config("experiment.id", "no experiment given"))?],
            };
            for m in run_experiments(&cfg, &ids, &config_input)? {
                let dir = if ids.len() == 1 {
                    cfg.out.clone()
                } else {
                    cfg.out.join(&m.experiment)
                };
                println!("{}", dir.join("report.json").display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
