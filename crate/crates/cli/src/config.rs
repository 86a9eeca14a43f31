//! The TOML scenario file and its resolution against command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridrl::model::{builtin, Partition, Scenario};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_MESHES: [usize; 4] = [4, 16, 64, 256];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub n: Option<usize>,
    pub points: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariationSection {
    pub limit_paths: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    pub cases: Option<Vec<String>>,
    pub substeps: Option<usize>,
    pub moment_paths: Option<usize>,
    pub moment_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdSection {
    pub lambda: Option<f64>,
    pub episodes: Option<usize>,
    pub alpha0: Option<f64>,
    pub k0: Option<f64>,
    /// Constant step size; overrides `alpha0`/`k0`.
    pub alpha: Option<f64>,
    pub loss_paths: Option<usize>,
    pub buckets: Option<usize>,
}

/// Everything a run can be configured with. All fields are optional; flags
/// override the file and built-in defaults fill the rest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub refine: Option<usize>,
    pub meshes: Option<Vec<usize>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub covariation: CovariationSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(default)]
    pub td: TdSection,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A fully specified run, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub scenario: String,
    pub seed: u64,
    pub paths: Option<usize>,
    /// Not echoed, so that reruns into different directories match.
    #[serde(skip)]
    pub out: PathBuf,
    pub refine: usize,
    pub partition: Vec<f64>,
    pub meshes: Vec<usize>,
    pub params: BTreeMap<String, f64>,
    pub covariation: CovariationSection,
    pub converge: ConvergeSection,
    pub td: TdSection,
}

impl Resolved {
    pub fn new(file: ScenarioConfig, flags: Overrides, command: &str) -> Result<(Self, Scenario), CliError> {
        let id = flags
            .scenario
            .or(file.scenario)
            .unwrap_or_else(|| default_scenario(command).to_string());
        let scenario = builtin(&id, &file.params)?;
        let paths = flags.paths.or(file.paths);
        if paths == Some(0) {
            return Err(CliError::Config("--paths must be positive".into()));
        }
        let refine = file.refine.unwrap_or(scenario.refine);
        if refine == 0 {
            return Err(CliError::Config("refine must be positive".into()));
        }
        let partition = match (&file.partition.n, &file.partition.points) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("partition takes either `n` or `points`, not both".into()))
            }
            (_, Some(points)) => Partition::new(points.clone())?,
            (n, None) => Partition::equidistant(scenario.model.horizon, n.unwrap_or(scenario.intervals))?,
        };
        if (partition.horizon() - scenario.model.horizon).abs() > 1e-12 * scenario.model.horizon {
            return Err(CliError::Config(format!(
                "partition ends at {}, model horizon is {}",
                partition.horizon(),
                scenario.model.horizon
            )));
        }
        let meshes = file.meshes.unwrap_or_else(|| DEFAULT_MESHES.to_vec());
        if meshes.is_empty() || meshes.contains(&0) {
            return Err(CliError::Config("meshes must be a non-empty list of positive sizes".into()));
        }
        let out = flags
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("gridrl-out").join(command));
        let resolved = Resolved {
            scenario: id,
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            paths,
            out,
            refine,
            partition: partition.points().to_vec(),
            meshes,
            params: scenario.params.clone(),
            covariation: file.covariation,
            converge: file.converge,
            td: file.td,
        };
        Ok((resolved, scenario))
    }

    pub fn partition(&self) -> Partition {
        Partition::new(self.partition.clone()).expect("validated on resolution")
    }

    pub fn paths_or(&self, default: usize) -> usize {
        self.paths.unwrap_or(default)
    }
}

fn default_scenario(command: &str) -> &'static str {
    match command {
        "td0" => "td0_bench",
        _ => "two_controls",
    }
}
