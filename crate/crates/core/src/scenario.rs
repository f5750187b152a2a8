//! Scenario configuration and the pipelines behind the command-line tool.
//!
//! Configs are `key = value` text files; `#` starts a comment. Relative
//! paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assignment::{offline_assign, online_assign, AssignmentProblem, Greedy};
use crate::error::{Error, Result};
use crate::estimators::{evaluate_all, EvalOptions, Evaluation};
use crate::io::{self, IngestOptions};
use crate::model::{CountingUnit, EvaluationDataset, PolicyAssignment, PredictionMatrix};
use crate::pooling::{build_pooling, pool_problem, resolve_pooled_assignment, PoolingMap};
use crate::propensity::{empirical_propensities, estimate_propensities, MultinomialLogit, PropensityModel};
use crate::report::{self, Record};
use crate::simulation::{
    enumerate_design, generate_population, monte_carlo, DesignInstance, OutcomeSurface, SyntheticConfig,
};

/// Parsed `key = value` pairs, in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    pub entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid value for {key}: {v}"))))
            .transpose()
    }

    fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityMode {
    Empirical,
    Estimated,
    /// Externally fitted `individual_id,pi_<loc>,...` table.
    External(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssignmentMode {
    Given,
    Offline,
    Online { arrival_column: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub individuals: PathBuf,
    pub capacities: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub propensity: PropensityMode,
    pub unit: CountingUnit,
    /// Pooling threshold; `None` disables pooling.
    pub pooling: Option<f64>,
    pub assignment: AssignmentMode,
    pub positivity_floor: f64,
    pub allow_positivity_violation: bool,
    pub baseline: Option<f64>,
    pub output_dir: PathBuf,
    /// Where to write the (resolved, original-space) policy, if anywhere.
    pub policy_out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Ridge penalty and probability floor of the reference propensity model.
    pub propensity_l2: f64,
    pub propensity_floor: f64,
}

pub const SCENARIO_KEYS: [&str; 19] = [
    "name",
    "individuals",
    "capacities",
    "predictions",
    "policy",
    "propensity",
    "propensity_file",
    "unit",
    "pooling",
    "assignment",
    "arrival_column",
    "positivity_floor",
    "allow_positivity_violation",
    "baseline",
    "output_dir",
    "policy_out",
    "seed",
    "propensity_l2",
    "propensity_floor",
];

impl ScenarioConfig {
    /// Builds a config from key-value pairs; paths resolve against `base`.
    pub fn from_key_values(kv: &KeyValues, base: &Path) -> Result<Self> {
        kv.check_keys(&SCENARIO_KEYS)?;
        let path = |key: &str| kv.get(key).map(|p| resolve(base, p));
        let individuals = path("individuals").ok_or_else(|| Error::Config("missing individuals".into()))?;
        let propensity = match kv.get("propensity").unwrap_or("empirical") {
            "empirical" => PropensityMode::Empirical,
            "estimated" => PropensityMode::Estimated,
            "external" | "external-file" => PropensityMode::External(
                path("propensity_file")
                    .ok_or_else(|| Error::Config("propensity = external needs propensity_file".into()))?,
            ),
            other => return Err(Error::Config(format!("unknown propensity mode {other}"))),
        };
        let assignment = match kv.get("assignment").unwrap_or("given") {
            "given" => AssignmentMode::Given,
            "offline" => AssignmentMode::Offline,
            "online" => AssignmentMode::Online {
                arrival_column: kv
                    .get("arrival_column")
                    .ok_or_else(|| Error::Config("online assignment needs arrival_column".into()))?
                    .to_string(),
            },
            other => return Err(Error::Config(format!("unknown assignment mode {other}"))),
        };
        let pooling = match kv.get("pooling") {
            None | Some("off") => None,
            Some(t) => Some(
                t.parse::<f64>()
                    .map_err(|_| Error::Config(format!("invalid pooling threshold {t}")))?,
            ),
        };
        let policy = path("policy");
        if policy.is_some() && assignment != AssignmentMode::Given {
            return Err(Error::Config(
                "exactly one policy source: drop policy or use assignment = given".into(),
            ));
        }
        let name = kv.get("name").map(str::to_string).unwrap_or_else(|| {
            individuals
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into())
        });
        Ok(Self {
            name,
            individuals,
            capacities: path("capacities"),
            predictions: path("predictions"),
            policy,
            propensity,
            unit: kv.parsed("unit")?.unwrap_or_default(),
            pooling,
            assignment,
            positivity_floor: kv.parsed("positivity_floor")?.unwrap_or(0.0),
            allow_positivity_violation: kv.parsed("allow_positivity_violation")?.unwrap_or(false),
            baseline: kv.parsed("baseline")?,
            output_dir: path("output_dir").unwrap_or_else(|| base.to_path_buf()),
            policy_out: path("policy_out"),
            seed: kv.parsed("seed")?,
            propensity_l2: kv.parsed("propensity_l2")?.unwrap_or(1e-2),
            propensity_floor: kv.parsed("propensity_floor")?.unwrap_or(1e-3),
        })
    }

    pub fn from_file(path: &Path, overrides: &KeyValues) -> Result<Self> {
        let mut kv = KeyValues::parse(&io::read_text(path)?)?;
        for (k, v) in &overrides.entries {
            kv.set(k, v.clone());
        }
        if !kv.entries.contains_key("name") {
            if let Some(stem) = path.file_stem() {
                kv.set("name", stem.to_string_lossy());
            }
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let config = Self::from_key_values(&kv, base)?;
        config.check_files()?;
        Ok(config)
    }

    /// Every referenced input file exists.
    pub fn check_files(&self) -> Result<()> {
        let external = match &self.propensity {
            PropensityMode::External(p) => Some(p),
            _ => None,
        };
        let inputs = [Some(&self.individuals), self.capacities.as_ref(), self.predictions.as_ref(), self.policy.as_ref(), external];
        match inputs.into_iter().flatten().find(|p| !p.is_file()) {
            Some(p) => Err(Error::Config(format!("{}: file not found", p.display()))),
            None => Ok(()),
        }
    }

    /// Every resolved setting as `key = value` lines.
    pub fn render(&self) -> String {
        let mut kv = KeyValues::default();
        let p = |x: &Path| x.display().to_string();
        kv.set("name", &self.name);
        kv.set("individuals", p(&self.individuals));
        if let Some(c) = &self.capacities {
            kv.set("capacities", p(c));
        }
        if let Some(m) = &self.predictions {
            kv.set("predictions", p(m));
        }
        if let Some(g) = &self.policy {
            kv.set("policy", p(g));
        }
        match &self.propensity {
            PropensityMode::Empirical => kv.set("propensity", "empirical"),
            PropensityMode::Estimated => kv.set("propensity", "estimated"),
            PropensityMode::External(f) => {
                kv.set("propensity", "external");
                kv.set("propensity_file", p(f));
            }
        }
        kv.set(
            "unit",
            match self.unit {
                CountingUnit::Case => "case",
                CountingUnit::Individual => "individual",
            },
        );
        kv.set("pooling", self.pooling.map_or("off".to_string(), |t| t.to_string()));
        match &self.assignment {
            AssignmentMode::Given => kv.set("assignment", "given"),
            AssignmentMode::Offline => kv.set("assignment", "offline"),
            AssignmentMode::Online { arrival_column } => {
                kv.set("assignment", "online");
                kv.set("arrival_column", arrival_column);
            }
        }
        kv.set("positivity_floor", self.positivity_floor.to_string());
        kv.set("allow_positivity_violation", self.allow_positivity_violation.to_string());
        if let Some(b) = self.baseline {
            kv.set("baseline", b.to_string());
        }
        kv.set("output_dir", p(&self.output_dir));
        if let Some(o) = &self.policy_out {
            kv.set("policy_out", p(o));
        }
        kv.set("seed", self.seed.map_or("none".to_string(), |s| s.to_string()));
        kv.set("propensity_l2", self.propensity_l2.to_string());
        kv.set("propensity_floor", self.propensity_floor.to_string());
        kv.render()
    }

    fn given_policy(&self) -> Result<&Path> {
        self.policy
            .as_deref()
            .ok_or_else(|| Error::Config("assignment = given needs a policy file".into()))
    }

    fn require_seed(&self, why: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("--seed is required: {why}")))
    }
}

/// Inputs and policy in the evaluation space (pooled when enabled).
pub struct Prepared {
    pub original: EvaluationDataset<f64>,
    pub pooling: PoolingMap<f64>,
    pub dataset: EvaluationDataset<f64>,
    pub predictions: PredictionMatrix<f64>,
    pub propensities: PropensityModel<f64>,
    pub policy: PolicyAssignment,
}

fn ingest_options(config: &ScenarioConfig) -> IngestOptions {
    IngestOptions {
        ignore_columns: match &config.assignment {
            AssignmentMode::Online { arrival_column } => vec![arrival_column.clone()],
            _ => Vec::new(),
        },
    }
}

fn load_propensities(config: &ScenarioConfig, dataset: &EvaluationDataset<f64>) -> Result<PropensityModel<f64>> {
    match &config.propensity {
        PropensityMode::Empirical => Ok(empirical_propensities(dataset, config.unit)),
        PropensityMode::Estimated => {
            let model = MultinomialLogit {
                l2: config.propensity_l2,
                floor: config.propensity_floor,
                ..MultinomialLogit::default()
            };
            estimate_propensities(dataset, &model, config.unit)
        }
        PropensityMode::External(path) => {
            let table = io::read_propensity_table(&path.display().to_string(), io::open(path)?, dataset)?;
            PropensityModel::from_conditional_normalized(dataset.n(), dataset.k(), table, config.unit, 1e-6)
        }
    }
}

/// Loads inputs, applies pooling and produces the policy to evaluate.
pub fn prepare(config: &ScenarioConfig) -> Result<Prepared> {
    let original: EvaluationDataset<f64> =
        io::ingest_dataset_files(&config.individuals, config.capacities.as_deref(), &ingest_options(config))?;
    let predictions_path = config
        .predictions
        .as_ref()
        .ok_or_else(|| Error::Config("missing predictions".into()))?;
    let predictions = io::read_predictions(
        &predictions_path.display().to_string(),
        io::open(predictions_path)?,
        &original,
    )?;
    let propensities = load_propensities(config, &original)?;
    let pooling = match config.pooling {
        Some(t) => build_pooling(&empirical_propensities(&original, config.unit), t)?,
        None => PoolingMap::identity(original.k(), crate::pooling::DEFAULT_THRESHOLD),
    };
    let pooled = pool_problem(&original, &predictions, &propensities, &pooling)?;
    let policy = match &config.assignment {
        AssignmentMode::Given => {
            let path = config.given_policy()?;
            let given = io::read_policy(&path.display().to_string(), io::open(path)?, &original)?;
            pooling.pool_policy(&pooled.dataset, &given)?
        }
        AssignmentMode::Offline => {
            let problem = AssignmentProblem::from_dataset(&pooled.dataset, &pooled.predictions)?;
            PolicyAssignment::from_case_indices(&pooled.dataset, offline_assign(&problem)?)?
        }
        AssignmentMode::Online { arrival_column } => {
            let order = io::read_arrival_order(
                &config.individuals.display().to_string(),
                io::open(&config.individuals)?,
                arrival_column,
                &original,
            )?;
            let problem =
                AssignmentProblem::from_dataset(&pooled.dataset, &pooled.predictions)?.with_arrival_order(order)?;
            PolicyAssignment::from_case_indices(&pooled.dataset, online_assign(&problem, &mut Greedy)?)?
        }
    };
    Ok(Prepared {
        original,
        pooling,
        dataset: pooled.dataset,
        predictions: pooled.predictions,
        propensities: pooled.propensities,
        policy,
    })
}

/// Policy in the original location space; pooled cases are resolved with
/// the scenario seed.
pub fn original_space_policy(config: &ScenarioConfig, prepared: &Prepared) -> Result<PolicyAssignment> {
    if prepared.pooling.is_identity() {
        return Ok(prepared.policy.clone());
    }
    if let AssignmentMode::Given = config.assignment {
        let path = config.given_policy()?;
        return io::read_policy(&path.display().to_string(), io::open(path)?, &prepared.original);
    }
    let seed = config.require_seed("resolving pooled assignments")?;
    resolve_pooled_assignment(&prepared.original, &prepared.policy, &prepared.pooling, seed)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub name: String,
    pub evaluation: Evaluation<f64>,
    pub records: Vec<Record>,
    pub table: String,
}

/// Runs one scenario without touching the filesystem beyond its inputs
/// (and `policy_out` when set).
pub fn evaluate_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    let prepared = prepare(config)?;
    if let Some(out) = &config.policy_out {
        let policy = original_space_policy(config, &prepared)?;
        io::write_policy(&prepared.original, &policy, BufWriter::new(io::create(out)?))?;
    }
    let options = EvalOptions {
        positivity_floor: config.positivity_floor,
        enforce_positivity: !config.allow_positivity_violation,
        baseline: config.baseline,
        local_unit: config.unit,
    };
    let evaluation = evaluate_all(
        &prepared.dataset,
        &prepared.propensities,
        &prepared.predictions,
        &prepared.policy,
        &options,
    )?;
    let records = report::records_from(&config.name, &evaluation);
    let table = report::format_table(&records, &evaluation.flags);
    Ok(ScenarioOutput {
        name: config.name.clone(),
        evaluation,
        records,
        table,
    })
}

/// Writes `<name>.report.txt`, `<name>.records.csv` and `<name>.config.txt`.
pub fn write_scenario(config: &ScenarioConfig, output: &ScenarioOutput) -> Result<()> {
    let path = |suffix: &str| config.output_dir.join(format!("{}.{suffix}", output.name));
    io::write_text(&path("report.txt"), &output.table)?;
    report::write_records(&output.records, BufWriter::new(io::create(&path("records.csv"))?))?;
    io::write_text(&path("config.txt"), &config.render())?;
    Ok(())
}

/// Evaluates every scenario (concurrently) and writes per-scenario files
/// plus `gains_summary.csv` in `summary_dir`.
pub fn run_evaluate(configs: &[ScenarioConfig], summary_dir: &Path) -> Result<Vec<ScenarioOutput>> {
    let mut names = std::collections::HashSet::new();
    for c in configs {
        if !names.insert((&c.output_dir, &c.name)) {
            return Err(Error::Config(format!("duplicate scenario name {}", c.name)));
        }
    }
    let outputs = configs
        .par_iter()
        .map(|c| {
            let out = evaluate_scenario(c)?;
            write_scenario(c, &out)?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(f64, Vec<Record>)> = outputs
        .iter()
        .map(|o| (o.evaluation.baseline, o.records.clone()))
        .collect();
    report::write_gains_summary(
        &rows,
        BufWriter::new(io::create(&summary_dir.join("gains_summary.csv"))?),
    )?;
    Ok(outputs)
}

/// Produces a policy file; `assignment = given` passes the input through.
pub fn run_assign(config: &ScenarioConfig, out: &Path) -> Result<PolicyAssignment> {
    let policy = if let AssignmentMode::Given = config.assignment {
        let original: EvaluationDataset<f64> =
            io::ingest_dataset_files(&config.individuals, config.capacities.as_deref(), &ingest_options(config))?;
        let path = config.given_policy()?;
        let given = io::read_policy(&path.display().to_string(), io::open(path)?, &original)?;
        io::write_policy(&original, &given, BufWriter::new(io::create(out)?))?;
        return Ok(given);
    } else {
        let prepared = prepare(config)?;
        let policy = original_space_policy(config, &prepared)?;
        io::write_policy(&prepared.original, &policy, BufWriter::new(io::create(out)?))?;
        policy
    };
    Ok(policy)
}

/// Writes the pooling map for a dataset.
pub fn run_pool_inspect(config: &ScenarioConfig, out: &mut dyn std::io::Write) -> Result<PoolingMap<f64>> {
    let dataset: EvaluationDataset<f64> =
        io::ingest_dataset_files(&config.individuals, config.capacities.as_deref(), &ingest_options(config))?;
    let threshold = config.pooling.unwrap_or(crate::pooling::DEFAULT_THRESHOLD);
    let map = build_pooling(&empirical_propensities(&dataset, config.unit), threshold)?;
    map.write(dataset.locations(), out)?;
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulationMode {
    MonteCarlo,
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulationPolicy {
    /// Each case to its best predicted location, ignoring capacity.
    Argmax,
    /// Exact offline optimum under historical capacities.
    Offline,
    /// Greedy online in case order under historical capacities.
    Online,
    /// Uniformly random location per case.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub synthetic: SyntheticConfig<f64>,
    pub mode: SimulationMode,
    pub replications: usize,
    pub policy: SimulationPolicy,
    pub pooling: Option<f64>,
    pub unit: CountingUnit,
    pub output: PathBuf,
}

pub const SIMULATION_KEYS: [&str; 17] = [
    "n",
    "k",
    "max_case_size",
    "covariate_dim",
    "surface",
    "intercept_scale",
    "slope_scale",
    "propensities",
    "noise",
    "seed",
    "mode",
    "replications",
    "policy",
    "pooling",
    "unit",
    "output",
    "name",
];

impl SimulationRun {
    pub fn from_key_values(kv: &KeyValues, base: &Path) -> Result<Self> {
        kv.check_keys(&SIMULATION_KEYS)?;
        let n: usize = kv.parsed("n")?.ok_or_else(|| Error::Config("missing n".into()))?;
        let k: usize = kv.parsed("k")?.ok_or_else(|| Error::Config("missing k".into()))?;
        let seed: u64 = kv
            .parsed("seed")?
            .ok_or_else(|| Error::Config("--seed is required for simulation".into()))?;
        let mut synthetic = SyntheticConfig::new(n, k, seed);
        if let Some(m) = kv.parsed("max_case_size")? {
            synthetic.max_case_size = m;
        }
        if let Some(p) = kv.parsed("covariate_dim")? {
            synthetic.covariate_dim = p;
        }
        match kv.get("surface").unwrap_or("logistic") {
            "logistic" => {
                synthetic.surface = OutcomeSurface::Logistic {
                    intercept_scale: kv.parsed("intercept_scale")?.unwrap_or(0.5),
                    slope_scale: kv.parsed("slope_scale")?.unwrap_or(0.5),
                }
            }
            s => {
                let c = s
                    .strip_prefix("constant:")
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown surface {s}")))?;
                synthetic.surface = OutcomeSurface::Constant(c);
            }
        }
        match kv.get("propensities").unwrap_or("uniform") {
            "uniform" => {}
            list => {
                synthetic.propensities = list
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("invalid propensities {list}")))?;
            }
        }
        if let Some(noise) = kv.parsed("noise")? {
            synthetic.prediction_noise = noise;
        }
        synthetic.validate()?;
        let mode = match kv.get("mode").unwrap_or("monte_carlo") {
            "monte_carlo" => SimulationMode::MonteCarlo,
            "enumerate" => SimulationMode::Enumerate,
            m => return Err(Error::Config(format!("unknown mode {m}"))),
        };
        let policy = match kv.get("policy").unwrap_or("argmax") {
            "argmax" => SimulationPolicy::Argmax,
            "offline" => SimulationPolicy::Offline,
            "online" => SimulationPolicy::Online,
            "random" => SimulationPolicy::Random,
            p => return Err(Error::Config(format!("unknown policy {p}"))),
        };
        let pooling = match kv.get("pooling") {
            None | Some("off") => None,
            Some(t) => Some(t.parse().map_err(|_| Error::Config(format!("invalid pooling {t}")))?),
        };
        let output = kv
            .get("output")
            .map(|p| resolve(base, p))
            .unwrap_or_else(|| base.join("simulation.csv"));
        Ok(Self {
            synthetic,
            mode,
            replications: kv.parsed("replications")?.unwrap_or(1000),
            policy,
            pooling,
            unit: kv.parsed("unit")?.unwrap_or_default(),
            output,
        })
    }
}

fn simulation_policy(run: &SimulationRun, dataset: &EvaluationDataset<f64>, mu: &PredictionMatrix<f64>) -> Result<PolicyAssignment> {
    let cases = match run.policy {
        SimulationPolicy::Argmax => {
            let problem = AssignmentProblem::from_dataset(dataset, mu)?
                .with_capacities(vec![crate::assignment::UNBOUNDED; dataset.k()])?;
            online_assign(&problem, &mut Greedy)?
        }
        SimulationPolicy::Offline => offline_assign(&AssignmentProblem::from_dataset(dataset, mu)?)?,
        SimulationPolicy::Online => online_assign(&AssignmentProblem::from_dataset(dataset, mu)?, &mut Greedy)?,
        SimulationPolicy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(run.synthetic.seed ^ 0x5eed);
            (0..dataset.cases().len()).map(|_| rng.random_range(0..dataset.k())).collect()
        }
    };
    PolicyAssignment::from_case_indices(dataset, cases)
}

/// Builds the synthetic design instance a simulation run describes.
pub fn simulation_instance(run: &SimulationRun) -> Result<DesignInstance<f64>> {
    let pop = generate_population(&run.synthetic)?;
    let policy = simulation_policy(run, &pop.dataset, &pop.predictions)?;
    let instance = DesignInstance::new(
        &pop.dataset,
        &pop.outcomes,
        &pop.predictions,
        &policy,
        run.synthetic.propensities.clone(),
        run.unit,
    )?;
    match run.pooling {
        Some(t) => {
            let pi = PropensityModel::from_marginal(pop.dataset.n(), run.synthetic.propensities.clone(), run.unit)?;
            instance.pooled(&build_pooling(&pi, t)?)
        }
        None => Ok(instance),
    }
}

/// Runs the simulation and writes its result file.
pub fn run_simulate(run: &SimulationRun) -> Result<()> {
    let instance = simulation_instance(run)?;
    let out = BufWriter::new(io::create(&run.output)?);
    match run.mode {
        SimulationMode::MonteCarlo => {
            let result = monte_carlo(&instance, run.replications, run.synthetic.seed)?;
            report::write_monte_carlo(&result, out)
        }
        SimulationMode::Enumerate => report::write_enumeration(&enumerate_design(&instance)?, out),
    }
}
