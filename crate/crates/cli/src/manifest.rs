//! Run manifests: what to run, on which scenario, with which seeds.
//!
//! A manifest file is TOML. Top-level keys name the run; the optional
//! `[scenario]` and `[train]` tables override individual fields of the
//! selected profile. Command-line flags override the file.
//!
//! ```toml
//! profile = "desk"
//! mode = "sweep"
//! policy = "random_feasible"
//! seeds = [0, 1, 2, 3]
//! out = "runs/uncertainty"
//!
//! [sweep]
//! axis = "uncertainty"
//! values = [0.0, 0.1, 0.2]
//!
//! [scenario]
//! num_users = 8
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ntn_core::agents::Algo;
use ntn_core::baselines::PolicyKind;
use ntn_core::{ScenarioConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Train,
    Evaluate,
    Sweep,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Mode::Simulate,
            "train" => Mode::Train,
            "evaluate" => Mode::Evaluate,
            "sweep" => Mode::Sweep,
            _ => bail!("unknown mode {s:?} (simulate, train, evaluate, sweep)"),
        })
    }
}

/// Scenario parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    UavCpu,
    HapCpu,
    UserPower,
    UavPower,
    Subchannels,
    TaskSize,
    Uncertainty,
    NumUsers,
}

impl Axis {
    pub const ALL: [Axis; 8] = [
        Axis::UavCpu,
        Axis::HapCpu,
        Axis::UserPower,
        Axis::UavPower,
        Axis::Subchannels,
        Axis::TaskSize,
        Axis::Uncertainty,
        Axis::NumUsers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::UavCpu => "uav_cpu",
            Axis::HapCpu => "hap_cpu",
            Axis::UserPower => "user_power",
            Axis::UavPower => "uav_power",
            Axis::Subchannels => "subchannels",
            Axis::TaskSize => "task_size",
            Axis::Uncertainty => "uncertainty",
            Axis::NumUsers => "num_users",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match Self::ALL.into_iter().find(|a| a.name() == s) {
            Some(a) => Ok(a),
            None => bail!("unknown sweep axis {s:?}"),
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let count = || -> Result<usize> {
            ensure!(
                value >= 1.0 && value.fract() == 0.0,
                "{} takes positive integers, got {value}",
                self.name()
            );
            Ok(value as usize)
        };
        let mut c = base.clone();
        match self {
            Axis::UavCpu => c.cpu_max_uav = value,
            Axis::HapCpu => c.cpu_max_hap = value,
            Axis::UserPower => c.p_max_user = value,
            Axis::UavPower => c.p_max_uav = value,
            Axis::Subchannels => c.num_subchannels = count()?,
            Axis::TaskSize => c.task_size = value,
            Axis::Uncertainty => c.csi_uncertainty = value,
            Axis::NumUsers => c.num_users = count()?,
        }
        c.validate().with_context(|| format!("{} = {value}", self.name()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

/// Manifest file as written by users; every field may be omitted.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub profile: Option<String>,
    pub mode: Option<Mode>,
    pub policy: Option<PolicyKind>,
    pub algo: Option<Algo>,
    pub seeds: Option<Vec<u64>>,
    pub episodes: Option<usize>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
    pub stop_after: Option<usize>,
    pub sweep: Option<SweepSpec>,
    pub scenario: Option<toml::Table>,
    pub train: Option<toml::Table>,
}

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub profile: String,
    pub mode: Mode,
    pub policy: PolicyKind,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    /// Training episodes in `train` mode; episodes per seed otherwise.
    pub episodes: usize,
    pub out: PathBuf,
    /// Trainer state to resume (`train`) or networks to run (`evaluate`).
    pub checkpoint: Option<PathBuf>,
    /// Episodes between saved actor snapshots while training; 0 disables.
    pub checkpoint_every: usize,
    /// Stop training after this many episodes of the current invocation and
    /// save a resumable state.
    pub stop_after: Option<usize>,
    pub sweep: Option<SweepSpec>,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

/// Fields of `base` replaced by the keys of `overlay`; unknown keys and
/// ill-typed values are rejected.
pub fn overlay<T>(base: &T, overlay: Option<&toml::Table>, what: &str) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let Some(over) = overlay else {
        return toml::Value::try_from(base)?.try_into().map_err(Into::into);
    };
    let mut table = match toml::Value::try_from(base)? {
        toml::Value::Table(t) => t,
        _ => bail!("{what} does not serialize to a table"),
    };
    for (k, v) in over {
        table.insert(k.clone(), v.clone());
    }
    toml::Value::Table(table).try_into().with_context(|| format!("[{what}] overrides"))
}

impl RunManifest {
    /// Resolves a manifest file against its profile.
    pub fn resolve(file: ManifestFile) -> Result<Self> {
        let profile = file.profile.unwrap_or_else(|| "desk".into());
        let Some(base) = ScenarioConfig::profile(&profile) else {
            bail!("unknown profile {profile:?} (paper, desk, tiny)");
        };
        let train_base = TrainConfig::profile(&profile).expect("profiles cover both configs");
        let scenario = overlay(&base, file.scenario.as_ref(), "scenario")?;
        let mut train = overlay(&train_base, file.train.as_ref(), "train")?;
        let mode = file.mode.unwrap_or(Mode::Simulate);
        let episodes = match (file.episodes, mode) {
            (Some(e), _) => e,
            (None, Mode::Train) => train.episodes,
            (None, _) => 1,
        };
        if mode == Mode::Train {
            train.episodes = episodes;
        }
        let m = Self {
            profile,
            mode,
            policy: file.policy.unwrap_or(PolicyKind::RandomFeasible),
            algo: file.algo.unwrap_or(Algo::Maddpg),
            seeds: file.seeds.unwrap_or_else(|| vec![0]),
            episodes,
            out: file.out.unwrap_or_else(|| "runs/out".into()),
            checkpoint: file.checkpoint,
            checkpoint_every: file.checkpoint_every.unwrap_or(100),
            stop_after: file.stop_after,
            sweep: file.sweep,
            scenario,
            train,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        self.scenario.validate()?;
        self.train.validate()?;
        match self.mode {
            Mode::Sweep => {
                let Some(s) = &self.sweep else { bail!("sweep mode needs an axis and values") };
                ensure!(!s.values.is_empty(), "sweep value list is empty");
                ensure!(self.policy != PolicyKind::Learned, "sweeps run the non-learned policies");
                for v in &s.values {
                    s.axis.apply(&self.scenario, *v)?;
                }
            }
            Mode::Evaluate => ensure!(self.checkpoint.is_some(), "evaluate mode needs --checkpoint"),
            Mode::Simulate => ensure!(
                self.policy != PolicyKind::Learned,
                "the learned policy runs in evaluate mode with a checkpoint"
            ),
            Mode::Train => {}
        }
        Ok(())
    }
}

/// Parses `"0,1,2"` or `"0..4"` (end exclusive).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        ensure!(a < b, "empty seed range {s:?}");
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}")))
        .collect()
}

pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad value {x:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> ManifestFile {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_resolve_to_desk_simulation() {
        let m = RunManifest::resolve(ManifestFile::default()).unwrap();
        assert_eq!(m.mode, Mode::Simulate);
        assert_eq!(m.scenario, ScenarioConfig::desk());
        assert_eq!(m.train, TrainConfig::desk());
        assert_eq!(m.seeds, [0]);
        assert_eq!(m.episodes, 1);
    }

    #[test]
    fn paper_profile_keeps_reference_values() {
        let m = RunManifest::resolve(file("profile = \"paper\"\nmode = \"train\"")).unwrap();
        assert_eq!(m.scenario, ScenarioConfig::paper());
        assert_eq!(m.train, TrainConfig::paper());
        assert_eq!((m.train.critic_lr, m.train.actor_lr), (1e-4, 1e-5));
        assert_eq!(m.train.tau, 0.0005);
        assert_eq!(m.train.replay_capacity, 50_000);
        assert_eq!(m.train.minibatch, 8);
    }

    #[test]
    fn overrides_merge_and_unknown_keys_fail() {
        let m = RunManifest::resolve(file("[scenario]\nnum_users = 8\n[train]\ngamma = 0.9")).unwrap();
        assert_eq!(m.scenario.num_users, 8);
        assert_eq!(m.scenario.num_uavs, ScenarioConfig::desk().num_uavs);
        assert_eq!(m.train.gamma, 0.9);
        assert!(RunManifest::resolve(file("[scenario]\nnum_drones = 8")).is_err());
        assert!(RunManifest::resolve(file("[scenario]\nnum_users = \"many\"")).is_err());
        assert!(toml::from_str::<ManifestFile>("colour = 1").is_err());
    }

    #[test]
    fn invalid_manifests_are_rejected() {
        assert!(RunManifest::resolve(file("seeds = []")).is_err());
        assert!(RunManifest::resolve(file("profile = \"huge\"")).is_err());
        assert!(RunManifest::resolve(file("mode = \"sweep\"")).is_err());
        assert!(RunManifest::resolve(file("mode = \"evaluate\"")).is_err());
        assert!(RunManifest::resolve(file("policy = \"learned\"")).is_err());
        let bad_axis = "mode = \"sweep\"\n[sweep]\naxis = \"altitude\"\nvalues = [1.0]";
        assert!(toml::from_str::<ManifestFile>(bad_axis).is_err());
        let bad_value = "mode = \"sweep\"\n[sweep]\naxis = \"subchannels\"\nvalues = [2.5]";
        assert!(RunManifest::resolve(file(bad_value)).is_err());
    }

    #[test]
    fn axes_set_their_field() {
        let b = ScenarioConfig::desk();
        for a in Axis::ALL {
            assert_eq!(Axis::parse(a.name()).unwrap(), a);
        }
        assert_eq!(Axis::UavCpu.apply(&b, 2e9).unwrap().cpu_max_uav, 2e9);
        assert_eq!(Axis::HapCpu.apply(&b, 7e9).unwrap().cpu_max_hap, 7e9);
        assert_eq!(Axis::UserPower.apply(&b, 0.1).unwrap().p_max_user, 0.1);
        assert_eq!(Axis::UavPower.apply(&b, 0.3).unwrap().p_max_uav, 0.3);
        assert_eq!(Axis::Subchannels.apply(&b, 6.0).unwrap().num_subchannels, 6);
        assert_eq!(Axis::TaskSize.apply(&b, 8e5).unwrap().task_size, 8e5);
        assert_eq!(Axis::Uncertainty.apply(&b, 0.2).unwrap().csi_uncertainty, 0.2);
        assert_eq!(Axis::NumUsers.apply(&b, 4.0).unwrap().num_users, 4);
        assert!(Axis::NumUsers.apply(&b, 0.0).is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3,1, 2").unwrap(), [3, 1, 2]);
        assert_eq!(parse_seeds("2..5").unwrap(), [2, 3, 4]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("a").is_err());
        assert_eq!(parse_values("0, 0.1,0.2").unwrap(), [0.0, 0.1, 0.2]);
    }
}
