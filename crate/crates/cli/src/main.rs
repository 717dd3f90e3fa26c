//! `gsplit`: batch front end for splitting, editing and homogenizing splat models.
//!
//! Machine-readable reports go to `--report` (or stdout when omitted); human
//! notes go to stderr. Every command is deterministic given its inputs and
//! `--seed`; `GSPLIT_THREADS` caps the worker pool without changing results.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use gsplit_core::densify::{self, GammaHistogram, InhomogeneityReport};
use gsplit_core::metrics::{mc_halfspace_mass, two_sided_z};
use gsplit_core::model::{Moments, MomentResidual, SplatModel};
use gsplit_core::ply::{export_points, load_model, save_model};
use gsplit_core::scene::random_cutting_plane;
use gsplit_core::split::{halfspace_mass, merge, split_children};
use gsplit_core::{apply_edit, EditSpec, Side};

#[derive(Parser)]
#[command(name = "gsplit", version, about = "Moment-conserving splitting of Gaussian splat models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print splat count, SH degree, mass total and gamma histogram.
    Info {
        #[arg(long)]
        input: PathBuf,
    },
    /// Apply a plane split, polygon delete or curve delete.
    Edit(EditArgs),
    /// Split elongated splats through their centers until gamma <= eta.
    Homogenize(PassArgs),
    /// Split splats for point-cloud extraction until every gamma_ij <= eta.
    DensifyPoints(PassArgs),
    /// Split sampled splats at random planes and check conservation and the closed forms.
    Verify(VerifyArgs),
    /// Merge the pieces an edit produced from each input splat back together.
    MergePairs(MergeArgs),
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Edit spec: inline JSON or a path to a JSON file.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write, per output splat, the index of the input splat it came from.
    #[arg(long)]
    origins: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct PassArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to 5 for homogenize and 2 for densify-points.
    #[arg(long)]
    eta_gamma: Option<f64>,
    #[arg(long, default_value_t = densify::DEFAULT_MAX_ROUNDS)]
    max_rounds: usize,
    /// Write the output splat means as a colored point cloud.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fail if the round limit is reached before the fixpoint.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Monte-Carlo samples per checked splat.
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    /// Number of splats to check (all if the model is smaller).
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Origins file written by `edit --origins`.
    #[arg(long)]
    origins: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("GSPLIT_THREADS") {
        let n: usize = threads
            .parse()
            .with_context(|| format!("GSPLIT_THREADS must be a positive integer, got `{threads}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Info { input } => info(&input),
        Command::Edit(args) => edit(&args),
        Command::Homogenize(args) => pass(&args, Pass::Homogenize),
        Command::DensifyPoints(args) => pass(&args, Pass::Points),
        Command::Verify(args) => verify(&args),
        Command::MergePairs(args) => merge_pairs(&args),
    }
}

fn load(path: &Path) -> Result<SplatModel> {
    load_model(path).with_context(|| format!("loading {}", path.display()))
}

fn save(m: &SplatModel, path: &Path) -> Result<()> {
    let stats = save_model(m, path).with_context(|| format!("writing {}", path.display()))?;
    if stats.clamped_opacities > 0 {
        eprintln!(
            "warning: {} peak opacities clamped into [1e-6, 1 - 1e-6] on save",
            stats.clamped_opacities
        );
    }
    Ok(())
}

/// Writes a JSON report to `path`, or to stdout when no path is given.
fn emit(report: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string(report)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn info(input: &Path) -> Result<()> {
    let m = load(input)?;
    println!("{} gaussians", m.len());
    println!("sh degree {}", m.sh_degree);
    println!("total opacity mass {:.9e}", m.total_mass());
    println!("gamma max {:.6}", densify::max_gamma(&m));
    println!("gamma histogram:");
    let h = GammaHistogram::of(&m);
    for (label, count) in GammaHistogram::labels().iter().zip(h.counts) {
        println!("  {label:<12} {count}");
    }
    Ok(())
}

fn read_spec(spec: &str) -> Result<EditSpec> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        fs::read_to_string(spec).with_context(|| format!("reading spec {spec}"))?
    };
    EditSpec::from_json(&text).context("parsing edit spec")
}

fn edit(args: &EditArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let m = load(&args.input)?;
    let out = apply_edit(&m, &spec)?;
    save(&out.model, &args.output)?;
    if let Some(path) = &args.origins {
        fs::write(path, serde_json::to_string(&out.origins)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let r = &out.report;
    eprintln!(
        "{} -> {} gaussians; evaluated {}, removed {}, untouched {}; E_i {:.6e}, E_e {:.6e}",
        m.len(),
        out.model.len(),
        r.split_count,
        r.removed_count,
        r.passthrough_count,
        r.e_i,
        r.e_e
    );
    emit(&serde_json::to_value(r)?, args.report.as_deref())
}

#[derive(Clone, Copy)]
enum Pass {
    Homogenize,
    Points,
}

fn pass(args: &PassArgs, which: Pass) -> Result<()> {
    let m = load(&args.input)?;
    let (out, report): (SplatModel, InhomogeneityReport) = match which {
        Pass::Homogenize => densify::homogenize(&m, args.eta_gamma.unwrap_or(5.0), args.max_rounds)?,
        Pass::Points => {
            densify::densify_for_points(&m, args.eta_gamma.unwrap_or(2.0), args.max_rounds)?
        }
    };
    save(&out, &args.output)?;
    if let Some(points) = &args.points {
        export_points(&out, points).with_context(|| format!("writing {}", points.display()))?;
    }
    eprintln!(
        "{} -> {} gaussians in {} rounds; gamma max {:.4}{}",
        m.len(),
        out.len(),
        report.split_rounds,
        report.gamma_max,
        if report.exhausted {
            format!("; round limit hit with {} violators left", report.remaining)
        } else {
            String::new()
        }
    );
    emit(&serde_json::to_value(&report)?, args.report.as_deref())?;
    if args.strict {
        report.check()?;
    }
    Ok(())
}

const MASS_TOLERANCE: f64 = 1e-12;
const MOMENT_TOLERANCE: f64 = 1e-9;
/// Family-wise false-alarm rate of the Monte-Carlo checks, that of one 3-sigma test.
const MC_FALSE_ALARM: f64 = 0.0027;

fn verify(args: &VerifyArgs) -> Result<()> {
    if args.mc_samples < 1000 {
        bail!("--mc-samples must be at least 1000");
    }
    let m = load(&args.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let picks: Vec<usize> = if m.len() <= args.count {
        (0..m.len()).collect()
    } else {
        rand::seq::index::sample(&mut rng, m.len(), args.count).into_vec()
    };
    // two checks (one per side) per splat share one false-alarm budget
    let z_limit = two_sided_z(MC_FALSE_ALARM / (2 * picks.len()).max(1) as f64);

    let mut worst = MomentResidual::default();
    let mut worst_z: f64 = 0.0;
    for &i in &picks {
        let g = &m.gaussians[i];
        let p = random_cutting_plane(&mut rng, g);
        let (l, r) = split_children(g, &p).with_context(|| format!("splitting gaussian {i}"))?;
        let res = (Moments::of(&l) + Moments::of(&r)).relative_residual(&Moments::of(g));
        worst = worst.max(&res);
        let mc_seed: u64 = rng.random();
        let neg = mc_halfspace_mass(g, &p, args.mc_samples, mc_seed);
        worst_z = worst_z.max(neg.z_score(halfspace_mass(g, &p, Side::Negative)));
        // the child masses are the closed-form side masses
        worst_z = worst_z.max(neg.z_score(l.opacity_mass));
    }
    let passed = worst.mass <= MASS_TOLERANCE
        && worst.first <= MOMENT_TOLERANCE
        && worst.second <= MOMENT_TOLERANCE
        && worst_z <= z_limit;
    eprintln!(
        "checked {} gaussians: mass {:.3e}, first {:.3e}, second {:.3e}, MC max z {:.3} (limit {:.3})",
        picks.len(),
        worst.mass,
        worst.first,
        worst.second,
        worst_z,
        z_limit
    );
    emit(
        &json!({
            "checked": picks.len(),
            "max_mass_residual": worst.mass,
            "max_first_residual": worst.first,
            "max_second_residual": worst.second,
            "max_mc_z": worst_z,
            "mc_z_limit": z_limit,
            "passed": passed,
        }),
        args.report.as_deref(),
    )?;
    if !passed {
        bail!("conservation or Monte-Carlo check failed");
    }
    Ok(())
}

fn merge_pairs(args: &MergeArgs) -> Result<()> {
    let m = load(&args.input)?;
    let text = fs::read_to_string(&args.origins)
        .with_context(|| format!("reading {}", args.origins.display()))?;
    let origins: Vec<usize> = serde_json::from_str(&text).context("parsing origins")?;
    if origins.len() != m.len() {
        bail!(
            "origins list has {} entries but the model has {} gaussians",
            origins.len(),
            m.len()
        );
    }
    let mut merged = Vec::new();
    let mut i = 0;
    while i < m.len() {
        let mut g = m.gaussians[i].clone();
        let mut j = i + 1;
        while j < m.len() && origins[j] == origins[i] {
            g = merge(&g, &m.gaussians[j])?;
            j += 1;
        }
        merged.push(g);
        i = j;
    }
    eprintln!("{} -> {} gaussians", m.len(), merged.len());
    save(&m.with_gaussians(merged), &args.output)
}
