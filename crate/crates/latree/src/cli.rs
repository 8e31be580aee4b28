//! Command-line surface: data ingestion, learning, reports, rules and
//! classification. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::DataSet;
use crate::em::{self, EmConfig};
use crate::error::{Error, ErrorKind, Result};
use crate::inference::Evidence;
use crate::joint::{self, CicOptions};
use crate::manifest::RunManifest;
use crate::model::LatentTreeModel;
use crate::persist;
use crate::report::{self, MiUnit};
use crate::rules::{self, Decision};
use crate::search::{self, SearchConfig};

#[derive(Parser)]
#[command(
    name = "latree",
    version,
    about = "Latent class and latent tree analysis for categorical survey data"
)]
struct Cli {
    /// Worker threads (0 = library default). Outputs are identical for any
    /// value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EmArgs {
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0.0)]
    em_smoothing: f64,
}

impl EmArgs {
    fn config(&self, seed: u64) -> EmConfig {
        EmConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            restarts: self.restarts,
            seed,
            m_step_smoothing: self.em_smoothing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw records from a model into a CSV file
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit latent class models over a cardinality range and keep the BIC best
    LearnLca {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variable subset (default: all columns)
        #[arg(long)]
        vars: Option<String>,
        /// Cardinalities to try: "1..5" or "1,2,3"
        #[arg(long, default_value = "1..5")]
        cards: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dedupe: bool,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-cardinality BIC table (TSV)
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Search latent tree structures guided by BIC
    LearnLtm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dedupe: bool,
        #[arg(long, default_value_t = 20)]
        screening_iterations: usize,
        #[arg(long, default_value_t = 10)]
        max_latent_cardinality: usize,
        #[arg(long)]
        max_latent_count: Option<usize>,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: PathBuf,
        /// Search log: one line per accepted move
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Emit one partition report per latent variable
    ReportPartitions {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// MI unit in reports: nats or bits
        #[arg(long, default_value = "nats")]
        unit: String,
    },
    /// Fit the joint clustering model from a feature-group spec
    JointCluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dedupe: bool,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: PathBuf,
        /// Cluster table with occurrence, MI and CIC columns (TSV)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Add a merged-class column for these states, e.g. "1,2"
        #[arg(long)]
        target_states: Option<String>,
        #[arg(long, default_value_t = 1e-6)]
        smoothing: f64,
        #[arg(long, default_value_t = 1_000_000)]
        cic_samples: usize,
    },
    /// Derive the score-based classification rule for a merged class
    DeriveRule {
        #[arg(long)]
        model: PathBuf,
        /// Class variable (default: the model root)
        #[arg(long)]
        z: Option<String>,
        #[arg(long)]
        target_states: String,
        #[arg(long, default_value = "")]
        label: String,
        #[arg(long, default_value_t = 1e-6)]
        smoothing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simplification sweep: remove bottom symptoms one at a time
    SweepRule {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        z: Option<String>,
        #[arg(long)]
        target_states: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dedupe: bool,
        #[arg(long, default_value_t = 1e-6)]
        smoothing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale and round a rule to integer scores
    IntegerizeRule {
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        scale: f64,
        /// Report agreement with the real-valued rule on this data
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify records with a rule file or a model
    Classify {
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        z: Option<String>,
        #[arg(long)]
        target_states: Option<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every model invariant and list violations
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
}

/// Entry point used by both `main` and the tests. Returns the exit code.
pub fn run_command(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || match dispatch(&cli.command, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            }
        }
    };
    if cli.threads > 0 {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        }
    } else {
        run()
    }
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    let parse_one = |s: &str| -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidConfig(format!("bad {what} `{s}`")))
    };
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (parse_one(a)?, parse_one(b)?);
        if a > b {
            return Err(Error::InvalidConfig(format!("empty {what} range `{text}`")));
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(parse_one).collect()
}

fn load_valid_model(path: &Path) -> Result<LatentTreeModel> {
    let model = persist::load_model(path)?;
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    Ok(model)
}

fn file_stem_for(latent: &str) -> String {
    latent
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn dispatch(command: &Command, argv: &[String]) -> Result<i32> {
    match command {
        Command::Sample {
            model,
            n,
            seed,
            out,
        } => {
            let m = load_valid_model(model)?;
            let data = m.forward_sample(*n, *seed);
            data.write_csv(out)?;
            let mut manifest = RunManifest::new("sample", argv, Some(*seed));
            manifest.input(model);
            manifest.output(out);
            manifest.write(out)?;
            println!("wrote {} records -> {}", n, out.display());
            Ok(0)
        }
        Command::LearnLca {
            data,
            vars,
            cards,
            seed,
            dedupe,
            em,
            out,
            table,
        } => {
            let dataset = DataSet::read_csv(data, *dedupe)?;
            let variables: Vec<String> = vars
                .as_deref()
                .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
                .unwrap_or_default();
            let range = parse_usize_list(cards, "cardinality")?;
            let lca = em::fit_lca(&dataset, &variables, &range, &em.config(*seed))?;
            persist::save_model(&lca.best().model, out)?;
            let mut manifest = RunManifest::new("learn-lca", argv, Some(*seed));
            manifest.input(data);
            manifest.output(out);
            if let Some(table_path) = table {
                let mut tsv = String::from("cardinality\tloglik\tbic\tdimension\tselected\n");
                for (i, fit) in lca.fits.iter().enumerate() {
                    tsv.push_str(&format!(
                        "{}\t{:.6}\t{:.6}\t{}\t{}\n",
                        lca.cardinalities[i],
                        fit.loglik,
                        fit.bic,
                        fit.model.dimension(),
                        if i == lca.selected { "*" } else { "" }
                    ));
                }
                std::fs::write(table_path, tsv)?;
                manifest.output(table_path);
            }
            manifest.write(out)?;
            println!(
                "selected cardinality {} (BIC {:.4}) -> {}",
                lca.selected_cardinality(),
                lca.best().bic,
                out.display()
            );
            Ok(0)
        }
        Command::LearnLtm {
            data,
            seed,
            dedupe,
            screening_iterations,
            max_latent_cardinality,
            max_latent_count,
            em,
            out,
            log,
        } => {
            let dataset = DataSet::read_csv(data, *dedupe)?;
            let config = SearchConfig {
                em: em.config(*seed),
                screening_iterations: *screening_iterations,
                max_latent_cardinality: *max_latent_cardinality,
                max_latent_count: *max_latent_count,
                seed: *seed,
            };
            let outcome = search::search(&dataset, &config)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            persist::save_model(&outcome.result.model, out)?;
            let mut manifest = RunManifest::new("learn-ltm", argv, Some(*seed));
            manifest.input(data);
            manifest.output(out);
            if let Some(log_path) = log {
                std::fs::write(log_path, outcome.render_log())?;
                manifest.output(log_path);
            }
            manifest.write(out)?;
            println!(
                "{} latent variables, BIC {:.4} (initial LCM {:.4}), {} accepted moves -> {}",
                outcome.result.model.latent_names().len(),
                outcome.result.bic,
                outcome.initial_bic,
                outcome.log.len(),
                out.display()
            );
            Ok(0)
        }
        Command::ReportPartitions {
            model,
            out_dir,
            unit,
        } => {
            let m = load_valid_model(model)?;
            let unit = match unit.as_str() {
                "nats" => MiUnit::Nats,
                "bits" => MiUnit::Bits,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unit must be nats or bits, got `{other}`"
                    )))
                }
            };
            std::fs::create_dir_all(out_dir)?;
            let mut manifest = RunManifest::new("report-partitions", argv, None);
            manifest.input(model);
            for latent in m.latent_names() {
                let rep = report::build_report(&m, &latent)?;
                let stem = file_stem_for(&latent);
                let tsv_path = out_dir.join(format!("{stem}.tsv"));
                let txt_path = out_dir.join(format!("{stem}.txt"));
                std::fs::write(&tsv_path, rep.to_tsv(unit))?;
                std::fs::write(&txt_path, rep.to_text(unit))?;
                manifest.output(&tsv_path);
                manifest.output(&txt_path);
            }
            manifest.write(out_dir)?;
            println!(
                "wrote {} partition reports -> {}",
                m.latent_names().len(),
                out_dir.display()
            );
            Ok(0)
        }
        Command::JointCluster {
            data,
            spec,
            seed,
            dedupe,
            em,
            out,
            report: report_path,
            target_states,
            smoothing,
            cic_samples,
        } => {
            let dataset = DataSet::read_csv(data, *dedupe)?;
            let spec_text = std::fs::read_to_string(spec)?;
            let group_spec = joint::FeatureGroupSpec::from_json_str(&spec_text)?;
            let fit = joint::fit_joint(&dataset, &group_spec, &em.config(*seed))?;
            let best = fit.best();
            persist::save_model(&best.model, out)?;
            let mut manifest = RunManifest::new("joint-cluster", argv, Some(*seed));
            manifest.input(data);
            manifest.input(spec);
            manifest.output(out);
            for (i, fit_k) in fit.fits.iter().enumerate() {
                println!(
                    "|Z|={}  loglik {:.4}  BIC {:.4}{}",
                    fit.cardinalities[i],
                    fit_k.loglik,
                    fit_k.bic,
                    if i == fit.selected {
                        "  (selected)"
                    } else {
                        ""
                    }
                );
            }
            if let Some(report_path) = report_path {
                let cic = joint::cic_table(
                    &best.model,
                    &fit.z,
                    &group_spec.all_symptoms(),
                    &CicOptions {
                        mc_samples: *cic_samples,
                        seed: *seed,
                        ..Default::default()
                    },
                )?;
                let summary = match target_states {
                    Some(states) => {
                        let states = parse_usize_list(states, "target state")?;
                        Some(
                            joint::merge_summary(&best.model, &fit.z, &states, *smoothing)?
                                .with_label(group_spec.target_label.clone()),
                        )
                    }
                    None => None,
                };
                let tsv = joint::joint_report_tsv(&best.model, &fit.z, summary.as_ref(), &cic)?;
                std::fs::write(report_path, tsv)?;
                manifest.output(report_path);
            }
            manifest.write(out)?;
            Ok(0)
        }
        Command::DeriveRule {
            model,
            z,
            target_states,
            label,
            smoothing,
            out,
        } => {
            let m = load_valid_model(model)?;
            let z = z.clone().unwrap_or_else(|| m.root_name().to_string());
            let states = parse_usize_list(target_states, "target state")?;
            let summary = joint::merge_summary(&m, &z, &states, *smoothing)?.with_label(label);
            let rule = rules::derive_rule(&summary)?;
            std::fs::write(out, rules::rule_to_tsv(&rule))?;
            let mut manifest = RunManifest::new("derive-rule", argv, None);
            manifest.input(model);
            manifest.output(out);
            manifest.write(out)?;
            println!(
                "{} scores, threshold {:.4} -> {}",
                rule.entries.len(),
                rule.threshold,
                out.display()
            );
            Ok(0)
        }
        Command::SweepRule {
            model,
            z,
            target_states,
            data,
            dedupe,
            smoothing,
            out,
        } => {
            let m = load_valid_model(model)?;
            let dataset = DataSet::read_csv(data, *dedupe)?;
            let z = z.clone().unwrap_or_else(|| m.root_name().to_string());
            let states = parse_usize_list(target_states, "target state")?;
            let summary = joint::merge_summary(&m, &z, &states, *smoothing)?;
            let sweep = rules::simplify_sweep(&summary, &m, &z, &states, &dataset)?;
            std::fs::write(out, sweep.to_tsv())?;
            let mut manifest = RunManifest::new("sweep-rule", argv, None);
            manifest.input(model);
            manifest.input(data);
            manifest.output(out);
            manifest.write(out)?;
            println!(
                "baseline accuracy {:.4} over {} symptoms -> {}",
                sweep.baseline_accuracy,
                sweep.rule.entries.len(),
                out.display()
            );
            Ok(0)
        }
        Command::IntegerizeRule {
            rule,
            scale,
            data,
            out,
        } => {
            let text = std::fs::read_to_string(rule)?;
            let base = rules::rule_from_tsv(&text, &rule.display().to_string())?;
            let int_rule = rules::integerize(&base, *scale)?;
            std::fs::write(out, rules::rule_to_tsv(&int_rule))?;
            let mut manifest = RunManifest::new("integerize-rule", argv, None);
            manifest.input(rule);
            manifest.output(out);
            if let Some(data_path) = data {
                let dataset = DataSet::read_csv(data_path, false)?;
                let agree = rules::decision_agreement(&base, &int_rule, &dataset)?;
                manifest.input(data_path);
                println!("agreement with real-valued rule: {agree:.4}");
            }
            manifest.write(out)?;
            println!("scale {scale} -> {}", out.display());
            Ok(0)
        }
        Command::Classify {
            rule,
            model,
            z,
            target_states,
            data,
            out,
        } => {
            let dataset = DataSet::read_csv(data, false)?;
            let mut manifest = RunManifest::new("classify", argv, None);
            manifest.input(data);
            let mut csv = String::new();
            match (rule, model) {
                (Some(rule_path), None) => {
                    let text = std::fs::read_to_string(rule_path)?;
                    let r = rules::rule_from_tsv(&text, &rule_path.display().to_string())?;
                    manifest.input(rule_path);
                    for e in &r.entries {
                        if dataset.column_index(&e.symptom).is_none() {
                            eprintln!(
                                "warning: rule symptom `{}` not in the data; treated as absent",
                                e.symptom
                            );
                        }
                    }
                    csv.push_str("record,total,decision\n");
                    for (i, rec) in dataset.records().iter().enumerate() {
                        let ev: Evidence = dataset
                            .variables()
                            .iter()
                            .zip(rec)
                            .filter_map(|(n, c)| c.map(|v| (n.clone(), v as usize)))
                            .collect();
                        let (total, decision) = rules::apply_rule(&r, &ev);
                        csv.push_str(&format!("{i},{total:.6},{}\n", decision_name(decision)));
                    }
                }
                (None, Some(model_path)) => {
                    let m = load_valid_model(model_path)?;
                    manifest.input(model_path);
                    let z = z.clone().unwrap_or_else(|| m.root_name().to_string());
                    let states = parse_usize_list(
                        target_states.as_deref().ok_or_else(|| {
                            Error::InvalidConfig("--target-states is required with --model".into())
                        })?,
                        "target state",
                    )?;
                    csv.push_str("record,decision\n");
                    for (i, rec) in dataset.records().iter().enumerate() {
                        let ev: Evidence = dataset
                            .variables()
                            .iter()
                            .zip(rec)
                            .filter_map(|(n, c)| c.map(|v| (n.clone(), v as usize)))
                            .collect();
                        let decision = rules::model_classify(&m, &z, &states, &ev)?;
                        csv.push_str(&format!("{i},{}\n", decision_name(decision)));
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "classify needs exactly one of --rule or --model".into(),
                    ))
                }
            }
            std::fs::write(out, csv)?;
            manifest.output(out);
            manifest.write(out)?;
            println!("classified {} records -> {}", dataset.len(), out.display());
            Ok(0)
        }
        Command::Validate { model } => {
            let m = persist::load_model(model)?;
            let violations = m.validate();
            if violations.is_empty() {
                println!("ok: model satisfies every invariant");
                Ok(0)
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
                Ok(2)
            }
        }
    }
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::Target => "target",
        Decision::Complement => "complement",
    }
}
