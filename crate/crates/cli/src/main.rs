use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Parser;
use ntn_cli::manifest::{parse_seeds, parse_values, Axis, ManifestFile, Mode, RunManifest, SweepSpec};
use ntn_core::agents::Algo;
use ntn_core::baselines::PolicyKind;

/// Two-tier aerial computing network simulator.
///
/// Flags override the manifest file given with --config.
#[derive(Parser, Debug)]
#[command(name = "ntn", version)]
struct Args {
    /// TOML run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// simulate, train, evaluate or sweep.
    #[arg(long, value_parser = Mode::parse)]
    mode: Option<Mode>,
    /// random_feasible, full_power, fixed_task or learned.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    /// maddpg or p2p_vfrl.
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algo>,
    /// Comma list ("0,1,2") or half-open range ("0..20").
    #[arg(long)]
    seeds: Option<String>,
    /// Sweep axis: uav_cpu, hap_cpu, user_power, uav_power, subchannels,
    /// task_size, uncertainty or num_users.
    #[arg(long, value_parser = Axis::parse, requires = "values")]
    axis: Option<Axis>,
    /// Comma list of sweep values.
    #[arg(long, requires = "axis")]
    values: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// paper, desk or tiny.
    #[arg(long)]
    profile: Option<String>,
    /// Training episodes (train) or episodes per seed (other modes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Actor or trainer checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Trainer state to continue training from.
    #[arg(long, conflicts_with = "checkpoint")]
    resume: Option<PathBuf>,
    /// Stop after this many training episodes and save a resumable state.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Episodes between actor snapshots; 0 disables them.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn parse_policy(s: &str) -> Result<PolicyKind> {
    PolicyKind::parse(s).ok_or_else(|| anyhow!("unknown policy {s:?}"))
}

fn parse_algo(s: &str) -> Result<Algo> {
    Algo::parse(s).ok_or_else(|| anyhow!("unknown algorithm {s:?}"))
}

fn manifest(a: Args) -> Result<RunManifest> {
    let mut f = match &a.config {
        Some(p) => ManifestFile::load(p)?,
        None => ManifestFile::default(),
    };
    if a.resume.is_some() {
        f.mode = Some(Mode::Train);
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if a.$field.is_some() { f.$field = a.$field; } )* };
    }
    if let Some(s) = &a.seeds {
        f.seeds = Some(parse_seeds(s)?);
    }
    set!(mode, policy, algo, out, profile, episodes, checkpoint, stop_after, checkpoint_every);
    if a.resume.is_some() {
        f.checkpoint = a.resume;
    }
    if let (Some(axis), Some(values)) = (a.axis, &a.values) {
        f.sweep = Some(SweepSpec { axis, values: parse_values(values)? });
    }
    RunManifest::resolve(f)
}

fn main() -> Result<()> {
    let m = manifest(Args::parse())?;
    ntn_cli::execute(&m)?;
    println!("wrote {}", m.out.display());
    Ok(())
}
