//! Command-line pipeline: corpus ingestion, chain fitting, metric
//! optimization, embedding, clustering, layout construction, curvature
//! diagnostics, benchmarking, and model averaging.

mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use keyforge_core::bench::{
    covariance_ellipse, keyboard_distortion, qwerty_reference, simulate_h1_named,
    simulate_h2_named, BenchReport, EllipseSpec,
};
use keyforge_core::cluster::{
    best_partition_exact_bounded, best_partition_local, Partition,
    PartitionRecord,
};
use keyforge_core::corpus::{
    ingest_word_frequencies, letter_frequencies, normalize_text, read_word_frequencies, Alphabet,
    BigramCounts,
};
use keyforge_core::curvature::gauss_curvatures;
use keyforge_core::embed::{align_to_grid, mds_embed};
use keyforge_core::layout::{build_h1_layout, build_h2_layout, KeyGrid, KeyboardLayout};
use keyforge_core::markov::{build_model, TransitionModel};
use keyforge_core::metric_opt::{optimize_h1_detailed, DistanceMatrix, OptimizerConfig};
use keyforge_core::multilang::{barycenter_model, LanguageEnsemble};
use keyforge_core::render;

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "keyforge",
    version,
    about = "Derive and benchmark keyboard layouts from letter-transition statistics"
)]
struct Cli {
    /// Seed for all randomized steps (local search restarts).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for cluster enumeration and curvature.
    /// Falls back to KEYFORGE_THREADS, then to 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OptimizerArgs {
    /// Minimal key separation.
    #[arg(long, default_value_t = 0.01)]
    d_min: f64,
    /// Scale bound on the upper-triangle norm.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Ridge weight.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    step_size: f64,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

impl OptimizerArgs {
    fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            d_min: self.d_min,
            c: self.c,
            alpha: self.alpha,
            max_iters: self.max_iters,
            step_size: self.step_size,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Count letter bigrams from a word-frequency CSV.
    Ingest {
        /// CSV of `word,count` lines; a header row is detected and skipped.
        #[arg(long)]
        words: PathBuf,
        /// Alphabet symbols in indexing order.
        #[arg(long, default_value = "abcdefghijklmnopqrstuvwxyz")]
        alphabet: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Lowercase a text and strip everything outside the alphabet.
    NormalizeText {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "abcdefghijklmnopqrstuvwxyz")]
        alphabet: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit the transition matrix and stationary distribution.
    Model {
        /// Bigram counts JSON from `ingest`.
        #[arg(long)]
        counts: PathBuf,
        /// Optional word CSV to cross-check the stationary distribution
        /// against raw letter frequencies (warns when the L1 gap > 0.05).
        #[arg(long)]
        check_words: Option<PathBuf>,
        /// Replace the fitted stationary distribution with the raw letter
        /// frequencies from --check-words.
        #[arg(long, requires = "check_words")]
        pi_from_frequencies: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve the regularized metric optimization.
    OptimizeH1 {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Classical MDS embedding of a distance matrix.
    Embed {
        #[arg(long)]
        distances: PathBuf,
        /// Also rotate the cloud onto its covariance axes.
        #[arg(long)]
        align: bool,
        #[arg(short, long)]
        output: PathBuf,
        /// Optional scatter plot.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Two-cluster alphabet split maximizing inter-cluster transitions.
    Cluster {
        #[arg(long)]
        model: PathBuf,
        /// Hill-climbing fallback instead of exact enumeration.
        #[arg(long)]
        local: bool,
        #[arg(long, default_value_t = 64)]
        restarts: usize,
        /// Floor on the size of both clusters (exact search only).
        #[arg(long, default_value_t = 1)]
        min_size: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Full one-handed pipeline: metric, embedding, grid assignment.
    BuildH1 {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 9)]
        cols: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Optional embedding JSON (aligned) used for the assignment.
        #[arg(long)]
        embedding_out: Option<PathBuf>,
    },
    /// Full two-handed pipeline: cluster split, per-cluster layout, merge.
    BuildH2 {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long, default_value_t = 3)]
        left_rows: usize,
        #[arg(long, default_value_t = 5)]
        left_cols: usize,
        #[arg(long, default_value_t = 3)]
        right_rows: usize,
        #[arg(long, default_value_t = 4)]
        right_cols: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
    /// Ricci and Gauss curvature of the letters under a learned metric.
    Curvature {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        distances: PathBuf,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 7)]
        k_max: usize,
        /// Per-(letter, k) CSV output.
        #[arg(short, long)]
        output: PathBuf,
        /// Per-letter averaged Gauss curvature CSV.
        #[arg(long)]
        means: Option<PathBuf>,
        /// Optional bar chart of the averaged Gauss curvature.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Render a layout JSON as SVG.
    LayoutRender {
        #[arg(long)]
        layout: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulate typing a text and compare against a baseline layout.
    Bench {
        #[arg(long)]
        layout: PathBuf,
        /// Partition JSON for two-handed simulation of --layout.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Partition JSON for two-handed simulation of --baseline.
        #[arg(long)]
        baseline_partition: Option<PathBuf>,
        /// Raw text file; it is normalized before simulation.
        #[arg(long)]
        text: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Stationary-weighted covariance ellipses of a layout.
    Ellipse {
        #[arg(long)]
        layout: PathBuf,
        /// Transition model providing the weights.
        #[arg(long)]
        model: PathBuf,
        /// Optional partition for per-cluster ellipses.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Keyboard rendering with the ellipses overlaid.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Largest pairwise metric gap between two layouts.
    Distortion {
        #[arg(long)]
        layout_x: PathBuf,
        #[arg(long)]
        layout_y: PathBuf,
        /// Weight letter pairs by the stationary distribution of this model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Wasserstein barycenter of several transition models.
    Barycenter {
        /// Model JSON files (repeat the flag per model).
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Ground metric over the shared alphabet.
        #[arg(long)]
        ground: PathBuf,
        /// Comma-separated mixture weights; uniform when omitted.
        #[arg(long)]
        weights: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Emit the QWERTY reference layout (and split, for two hands).
    Qwerty {
        #[arg(long, default_value_t = 1)]
        hands: u8,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let data = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&data).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_partition(path: &Path) -> Result<Partition> {
    let record: PartitionRecord = read_json(path)?;
    Ok(record.to_partition()?)
}

fn print_bench_table(report: &BenchReport) {
    println!(
        "{:<14} {:>14} {:>18}",
        "layout", "total (a.u.)", "a.u./transition"
    );
    println!(
        "{:<14} {:>14.2} {:>18.4}",
        report.layout, report.total, report.per_transition
    );
    if let Some(baseline) = &report.baseline {
        println!(
            "{:<14} {:>14.2} {:>18.4}",
            baseline.layout, baseline.total, baseline.per_transition
        );
        println!(
            "improvement over {}: {:.2}%",
            baseline.layout, baseline.improvement_percent
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("KEYFORGE_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);

    match cli.command {
        Command::Ingest {
            words,
            alphabet,
            output,
        } => {
            let alphabet = Alphabet::from_str_letters(&alphabet)?;
            let file = std::fs::File::open(&words)
                .with_context(|| format!("opening {}", words.display()))?;
            let records = read_word_frequencies(std::io::BufReader::new(file))?;
            let (counts, diag) = ingest_word_frequencies(records, &alphabet)?;
            write_json(&output, &counts)?;
            eprintln!(
                "ingested {} records ({} skipped), total bigram mass {:.0}",
                diag.records,
                diag.skipped(),
                counts.total()
            );
            let mut manifest = RunManifest::new(
                "ingest",
                serde_json::json!({"alphabet": counts.alphabet.as_string()}),
            );
            manifest.record_input(&words)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::NormalizeText {
            input,
            alphabet,
            output,
        } => {
            let alphabet = Alphabet::from_str_letters(&alphabet)?;
            let raw = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let normalized = normalize_text(&raw, &alphabet);
            write_text(&output, &normalized)?;
            eprintln!("{} letters after normalization", normalized.len());
            let mut manifest = RunManifest::new(
                "normalize-text",
                serde_json::json!({"alphabet": alphabet.as_string()}),
            );
            manifest.record_input(&input)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Model {
            counts,
            check_words,
            pi_from_frequencies,
            output,
        } => {
            let counts_data: BigramCounts = read_json(&counts)?;
            let mut model = build_model(&counts_data)?;
            let mut manifest = RunManifest::new(
                "model",
                serde_json::json!({"pi_from_frequencies": pi_from_frequencies}),
            );
            manifest.record_input(&counts)?;
            if let Some(words) = &check_words {
                let file = std::fs::File::open(words)
                    .with_context(|| format!("opening {}", words.display()))?;
                let records = read_word_frequencies(std::io::BufReader::new(file))?;
                let freqs = letter_frequencies(records, &model.alphabet)?;
                let gap = model.stationary_gap(&freqs)?;
                if gap > 0.05 {
                    eprintln!(
                        "warning: stationary distribution differs from letter frequencies (L1 gap {gap:.3})"
                    );
                }
                if pi_from_frequencies {
                    model = model.with_stationary(freqs)?;
                }
                manifest.record_input(words)?;
            }
            write_json(&output, &model)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::OptimizeH1 {
            model,
            optimizer,
            output,
        } => {
            let model_data: TransitionModel = read_json(&model)?;
            let cfg = optimizer.to_config();
            let solution = optimize_h1_detailed(&model_data, &cfg)?;
            write_json(&output, &solution.distances)?;
            eprintln!(
                "converged in {} iterations, objective {:.6}",
                solution.iterations, solution.objective
            );
            let mut manifest =
                RunManifest::new("optimize-h1", serde_json::to_value(cfg)?);
            manifest.record_input(&model)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Embed {
            distances,
            align,
            output,
            svg,
        } => {
            let d: DistanceMatrix = read_json(&distances)?;
            let mut embedding = mds_embed(&d)?;
            if align {
                embedding = align_to_grid(&embedding)?;
            }
            write_json(&output, &embedding)?;
            eprintln!("stress {:.4}", embedding.stress);
            if let Some(svg_path) = &svg {
                write_text(svg_path, &render::embedding_svg(&embedding))?;
            }
            let mut manifest =
                RunManifest::new("embed", serde_json::json!({"align": align}));
            manifest.record_input(&distances)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Cluster {
            model,
            local,
            restarts,
            min_size,
            output,
        } => {
            let model_data: TransitionModel = read_json(&model)?;
            let (partition, objective) = if local {
                best_partition_local(&model_data, restarts, cli.seed)?
            } else {
                best_partition_exact_bounded(&model_data, threads, min_size)?
            };
            write_json(&output, &PartitionRecord::new(&partition, Some(objective)))?;
            eprintln!(
                "clusters {} / {} with objective {:.6}",
                partition.letters_a(),
                partition.letters_b(),
                objective
            );
            let mut manifest = RunManifest::new(
                "cluster",
                serde_json::json!({
                    "local": local,
                    "restarts": restarts,
                    "min_size": min_size,
                    "seed": cli.seed,
                }),
            );
            manifest.record_input(&model)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::BuildH1 {
            model,
            optimizer,
            rows,
            cols,
            output,
            embedding_out,
        } => {
            let model_data: TransitionModel = read_json(&model)?;
            let cfg = optimizer.to_config();
            let grid = KeyGrid::new(rows, cols)?;
            let pipeline = build_h1_layout(&model_data, &cfg, &grid)?;
            write_json(&output, &pipeline.layout)?;
            if let Some(path) = &embedding_out {
                write_json(path, &pipeline.embedding)?;
            }
            eprintln!(
                "stress {:.4}, assignment cost {:.4}{}",
                pipeline.diagnostics.stress,
                pipeline.diagnostics.assignment_cost,
                if pipeline.diagnostics.flipped {
                    ", mirrored"
                } else {
                    ""
                }
            );
            let mut manifest = RunManifest::new(
                "build-h1",
                serde_json::json!({
                    "optimizer": serde_json::to_value(cfg)?,
                    "rows": rows,
                    "cols": cols,
                }),
            );
            manifest.record_input(&model)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::BuildH2 {
            model,
            optimizer,
            left_rows,
            left_cols,
            right_rows,
            right_cols,
            output,
            partition_out,
        } => {
            let model_data: TransitionModel = read_json(&model)?;
            let cfg = optimizer.to_config();
            let left = KeyGrid::new(left_rows, left_cols)?;
            let right = KeyGrid::new(right_rows, right_cols)?;
            let pipeline = build_h2_layout(&model_data, &cfg, &left, &right, threads)?;
            write_json(&output, &pipeline.layout)?;
            if let Some(path) = &partition_out {
                write_json(
                    path,
                    &PartitionRecord::new(&pipeline.partition, Some(pipeline.partition_objective)),
                )?;
            }
            eprintln!(
                "clusters {} / {}",
                pipeline.partition.letters_a(),
                pipeline.partition.letters_b()
            );
            let mut manifest = RunManifest::new(
                "build-h2",
                serde_json::json!({
                    "optimizer": serde_json::to_value(cfg)?,
                    "left": {"rows": left_rows, "cols": left_cols},
                    "right": {"rows": right_rows, "cols": right_cols},
                }),
            );
            manifest.record_input(&model)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Curvature {
            model,
            distances,
            k_min,
            k_max,
            output,
            means,
            svg,
        } => {
            let model_data: TransitionModel = read_json(&model)?;
            let d: DistanceMatrix = read_json(&distances)?;
            let report = gauss_curvatures(&model_data, &d, k_min..=k_max, threads)?;
            write_text(&output, &report.per_k_csv())?;
            if let Some(path) = &means {
                write_text(path, &report.means_csv())?;
            }
            if let Some(path) = &svg {
                write_text(path, &render::curvature_bars_svg(&report))?;
            }
            if report.uniform_fallback {
                eprintln!("note: some neighborhood measures fell back to uniform weights");
            }
            let mut manifest = RunManifest::new(
                "curvature",
                serde_json::json!({"k_min": k_min, "k_max": k_max}),
            );
            manifest.record_input(&model)?;
            manifest.record_input(&distances)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::LayoutRender { layout, output } => {
            let layout_data: KeyboardLayout = read_json(&layout)?;
            write_text(&output, &render::keyboard_svg(&layout_data))?;
            let mut manifest = RunManifest::new("layout-render", serde_json::json!({}));
            manifest.record_input(&layout)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Bench {
            layout,
            partition,
            baseline,
            baseline_partition,
            text,
            output,
        } => {
            let layout_data: KeyboardLayout = read_json(&layout)?;
            let raw = std::fs::read_to_string(&text)
                .with_context(|| format!("reading {}", text.display()))?;
            let normalized = normalize_text(&raw, &layout_data.alphabet);

            let simulate = |layout: &KeyboardLayout,
                            partition: Option<&Partition>,
                            name: &str|
             -> Result<BenchReport> {
                Ok(match partition {
                    Some(p) => simulate_h2_named(layout, p, &normalized, name)?,
                    None => simulate_h1_named(layout, &normalized, name)?,
                })
            };

            let candidate_partition = partition.as_deref().map(load_partition).transpose()?;
            let mut report = simulate(
                &layout_data,
                candidate_partition.as_ref(),
                &layout.display().to_string(),
            )?;
            if let Some(baseline_path) = &baseline {
                let baseline_layout: KeyboardLayout = read_json(baseline_path)?;
                let base_partition = baseline_partition
                    .as_deref()
                    .map(load_partition)
                    .transpose()?;
                let baseline_report = simulate(
                    &baseline_layout,
                    base_partition.as_ref(),
                    &baseline_path.display().to_string(),
                )?;
                report = report.against(&baseline_report);
            }
            write_json(&output, &report)?;
            print_bench_table(&report);

            let mut manifest = RunManifest::new(
                "bench",
                serde_json::json!({
                    "two_handed": candidate_partition.is_some(),
                }),
            );
            manifest.record_input(&layout)?;
            manifest.record_input(&text)?;
            if let Some(p) = &partition {
                manifest.record_input(p)?;
            }
            if let Some(b) = &baseline {
                manifest.record_input(b)?;
            }
            if let Some(bp) = &baseline_partition {
                manifest.record_input(bp)?;
            }
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Ellipse {
            layout,
            model,
            partition,
            output,
            svg,
        } => {
            let layout_data: KeyboardLayout = read_json(&layout)?;
            let model_data: TransitionModel = read_json(&model)?;
            if layout_data.alphabet != model_data.alphabet {
                bail!("layout and model alphabets differ");
            }
            let n = layout_data.alphabet.len();
            let points: Vec<[f64; 2]> = (0..n).map(|i| layout_data.key_position(i)).collect();
            let whole = covariance_ellipse(&points, &model_data.stationary)?;

            let mut clusters: Vec<EllipseSpec> = Vec::new();
            if let Some(partition_path) = &partition {
                let p = load_partition(partition_path)?;
                for letters in [p.cluster_a(), p.cluster_b()] {
                    let sub_points: Vec<[f64; 2]> =
                        letters.iter().map(|&i| points[i]).collect();
                    let mass: f64 = letters.iter().map(|&i| model_data.stationary[i]).sum();
                    let sub_pi: Vec<f64> = letters
                        .iter()
                        .map(|&i| model_data.stationary[i] / mass)
                        .collect();
                    clusters.push(covariance_ellipse(&sub_points, &sub_pi)?);
                }
            }

            #[derive(serde::Serialize)]
            struct EllipseFile {
                whole: EllipseSpec,
                clusters: Vec<EllipseSpec>,
            }
            write_json(
                &output,
                &EllipseFile {
                    whole: whole.clone(),
                    clusters: clusters.clone(),
                },
            )?;
            if let Some(path) = &svg {
                write_text(path, &render::ellipse_overlay_svg(&layout_data, &whole, &clusters))?;
            }
            let mut manifest = RunManifest::new(
                "ellipse",
                serde_json::json!({"per_cluster": partition.is_some()}),
            );
            manifest.record_input(&layout)?;
            manifest.record_input(&model)?;
            if let Some(p) = &partition {
                manifest.record_input(p)?;
            }
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Distortion {
            layout_x,
            layout_y,
            model,
            output,
        } => {
            let x: KeyboardLayout = read_json(&layout_x)?;
            let y: KeyboardLayout = read_json(&layout_y)?;
            let weights = match &model {
                Some(path) => {
                    let m: TransitionModel = read_json(path)?;
                    Some(m.stationary)
                }
                None => None,
            };
            let value = keyboard_distortion(&x, &y, weights.as_deref())?;
            #[derive(serde::Serialize)]
            struct DistortionFile {
                distortion: f64,
                weighted: bool,
            }
            write_json(
                &output,
                &DistortionFile {
                    distortion: value,
                    weighted: weights.is_some(),
                },
            )?;
            println!("distortion: {value:.6}");
            let mut manifest = RunManifest::new(
                "distortion",
                serde_json::json!({"weighted": weights.is_some()}),
            );
            manifest.record_input(&layout_x)?;
            manifest.record_input(&layout_y)?;
            if let Some(m) = &model {
                manifest.record_input(m)?;
            }
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Barycenter {
            models,
            ground,
            weights,
            output,
        } => {
            let loaded: Vec<TransitionModel> = models
                .iter()
                .map(|p| read_json(p))
                .collect::<Result<_>>()?;
            let ground_metric: DistanceMatrix = read_json(&ground)?;
            let ensemble = match &weights {
                Some(list) => {
                    let parsed: Vec<f64> = list
                        .split(',')
                        .map(|w| w.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .context("parsing --weights")?;
                    LanguageEnsemble::weighted(loaded, parsed)?
                }
                None => LanguageEnsemble::uniform(loaded)?,
            };
            let averaged = barycenter_model(&ensemble, &ground_metric)?;
            write_json(&output, &averaged)?;
            let mut manifest = RunManifest::new(
                "barycenter",
                serde_json::json!({"weights": weights}),
            );
            for path in &models {
                manifest.record_input(path)?;
            }
            manifest.record_input(&ground)?;
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
        Command::Qwerty {
            hands,
            output,
            partition_out,
        } => {
            let (layout, partition) = qwerty_reference(hands)?;
            write_json(&output, &layout)?;
            if let Some(path) = &partition_out {
                match &partition {
                    Some(p) => write_json(path, &PartitionRecord::new(p, None))?,
                    None => bail!("--partition-out needs --hands 2"),
                }
            }
            let mut manifest =
                RunManifest::new("qwerty", serde_json::json!({"hands": hands}));
            manifest.record_output(&output);
            manifest.write_alongside(&output)?;
        }
    }
    Ok(())
}

fn main() {
    // Usage problems exit 1; data and computation problems exit 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}
