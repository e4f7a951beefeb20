//! Command implementations behind `slicectl`. Each command reads a scenario,
//! writes its artifacts into an output directory and returns a short report.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::agent::checkpoint::Checkpoint;
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::metrics::{cdf, export_text, quantile_below, Labels, Registry};
use crate::orchestrator::engine::{compare, evaluate, train, RunConfig};
use crate::orchestrator::record::{
    read_episode_csv, step_csv, write_episode_csv, write_step_header, write_step_rows, EpisodeSummary,
};
use crate::orchestrator::Variant;

/// Default output root when `--out` is not given.
pub const OUT_DIR_ENV: &str = "SLICECTL_OUT";
pub const MANIFEST: &str = "manifest.txt";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const STEPS_CSV: &str = "steps.csv";
pub const SCENARIO_COPY: &str = "scenario.cfg";
pub const METRICS_TEXT: &str = "metrics.prom";

/// Flags shared by every command that reads a scenario.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub out: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub steps: Option<usize>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        if !self.config.exists() {
            return Err(Error::artifact(&self.config, "config file not found"));
        }
        Scenario::load(&self.config)
    }

    fn run_config(&self, scenario: &Scenario) -> Result<RunConfig> {
        let mut run = RunConfig::from_scenario(scenario)?;
        if let Some(v) = &self.variant {
            run.variant = Variant::parse(v)?;
        }
        if let Some(s) = self.seed {
            run.seed = s;
        }
        if let Some(e) = self.episodes {
            run.episodes = e;
        }
        if let Some(s) = self.steps {
            run.steps = s;
        }
        run.validate()?;
        Ok(run)
    }

    fn out_dir(&self, default_name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
            root.join(default_name)
        })
    }
}

/// Artifact listing written next to the artifacts themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub variant: Variant,
    pub seed: u64,
    pub episodes: usize,
    pub steps: usize,
    pub config_hash: String,
    /// `(file name relative to the manifest, hex SHA-256)`.
    pub artifacts: Vec<(String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "slicectl-manifest 1\ncommand {}\nvariant {}\nseed {}\nepisodes {}\nsteps {}\nconfig_hash {}\n",
            self.command, self.variant, self.seed, self.episodes, self.steps, self.config_hash
        );
        for (name, digest) in &self.artifacts {
            s.push_str(&format!("artifact {name} {digest}\n"));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::artifact(path, m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("slicectl-manifest 1") {
            return Err(bad("not a manifest"));
        }
        let mut m = Manifest {
            command: String::new(),
            variant: Variant::StaticBaseline,
            seed: 0,
            episodes: 0,
            steps: 0,
            config_hash: String::new(),
            artifacts: Vec::new(),
        };
        for line in lines {
            let mut parts = line.splitn(2, ' ');
            let key = parts.next().unwrap_or("");
            let value = parts.next().ok_or_else(|| bad(&format!("line `{line}` has no value")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(&format!("bad number in `{line}`")));
            match key {
                "command" => m.command = value.to_string(),
                "variant" => m.variant = Variant::parse(value)?,
                "seed" => m.seed = num(value)?,
                "episodes" => m.episodes = num(value)? as usize,
                "steps" => m.steps = num(value)? as usize,
                "config_hash" => m.config_hash = value.to_string(),
                "artifact" => {
                    let (name, digest) = value
                        .split_once(' ')
                        .ok_or_else(|| bad(&format!("artifact line `{line}` lacks a digest")))?;
                    m.artifacts.push((name.to_string(), digest.to_string()));
                }
                _ => return Err(bad(&format!("unknown manifest key `{key}`"))),
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::artifact(&path, e.to_string()))?;
        Self::parse(&text, &path)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::artifact(path, e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn checkpoint_name(k: usize) -> String {
    format!("agent-{k}.ckpt")
}

/// Scenario text with any trace path made absolute so the copy can be
/// reloaded from another directory.
fn portable_scenario(scenario: &Scenario) -> Result<Scenario> {
    scenario.with_source(|f| {
        if let Some(p) = &scenario.trace_path {
            f.traffic.trace_path = Some(fs::canonicalize(p).unwrap_or_else(|_| p.clone()));
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::artifact(path, e.to_string()))?,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub summaries: Vec<EpisodeSummary>,
}

pub fn cmd_train(args: &Common) -> Result<TrainReport> {
    let scenario = args.scenario()?;
    let run = args.run_config(&scenario)?;
    let out_dir = args.out_dir(&format!("{}-seed{}", run.variant, run.seed));
    fs::create_dir_all(&out_dir).map_err(|e| Error::artifact(&out_dir, e.to_string()))?;

    let steps_path = out_dir.join(STEPS_CSV);
    let mut steps = csv::Writer::from_writer(create(&steps_path)?);
    write_step_header(&mut steps)?;
    let out = train(&scenario, &run, |r| write_step_rows(&mut steps, r))?;
    steps.flush()?;
    drop(steps);

    let mut names = vec![SCENARIO_COPY.to_string(), EPISODES_CSV.to_string(), STEPS_CSV.to_string()];
    let portable = portable_scenario(&scenario)?;
    fs::write(out_dir.join(SCENARIO_COPY), portable.to_toml_string())?;
    write_episode_csv(create(&out_dir.join(EPISODES_CSV))?, &out.summaries)?;
    for ck in out.checkpoints() {
        let name = checkpoint_name(ck.agent);
        ck.save(&out_dir.join(&name))?;
        names.push(name);
    }
    let snapshot = out.metrics.snapshot();
    if !snapshot.is_empty() {
        fs::write(out_dir.join(METRICS_TEXT), export_text(&snapshot, None)?)?;
        names.push(METRICS_TEXT.to_string());
    }
    let manifest = write_manifest(&out_dir, "train", &run, &portable, names)?;
    Ok(TrainReport {
        out_dir,
        manifest,
        summaries: out.summaries,
    })
}

fn write_manifest(
    dir: &Path,
    command: &str,
    run: &RunConfig,
    scenario: &Scenario,
    names: Vec<String>,
) -> Result<Manifest> {
    let artifacts = names
        .into_iter()
        .map(|n| sha256_file(&dir.join(&n)).map(|d| (n, d)))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        command: command.to_string(),
        variant: run.variant,
        seed: run.seed,
        episodes: run.episodes,
        steps: run.steps,
        config_hash: scenario.hash(),
        artifacts,
    };
    fs::write(dir.join(MANIFEST), manifest.to_text())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub out_dir: PathBuf,
    pub summaries: Vec<EpisodeSummary>,
    /// Fraction of latency samples at or below the configured threshold.
    pub latency_below_threshold: f64,
}

/// Greedy rollouts from the checkpoints in `checkpoints` (a training output
/// directory). Episodes default to the scenario's `eval_episodes`.
pub fn cmd_eval(args: &Common, checkpoints: &Path) -> Result<EvalReport> {
    let scenario = args.scenario()?;
    let mut run = args.run_config(&scenario)?;
    if args.episodes.is_none() {
        run.episodes = scenario.run.eval_episodes.max(1);
    }
    if args.variant.is_none() {
        if let Ok(m) = Manifest::load(checkpoints) {
            run.variant = m.variant;
        }
    }
    let cks = (0..scenario.num_slices())
        .filter(|_| run.variant.learns())
        .map(|k| Checkpoint::load(&checkpoints.join(checkpoint_name(k))))
        .collect::<Result<Vec<_>>>()?;
    let records = evaluate(&scenario, &run, &cks)?;
    let out_dir = args.out_dir(&format!("eval-{}-seed{}", run.variant, run.seed));
    fs::create_dir_all(&out_dir).map_err(|e| Error::artifact(&out_dir, e.to_string()))?;
    fs::write(out_dir.join(STEPS_CSV), step_csv(&records)?)?;
    let summaries: Vec<EpisodeSummary> = records.iter().map(|r| r.summary()).collect();
    write_episode_csv(create(&out_dir.join(EPISODES_CSV))?, &summaries)?;
    let lat: Vec<f64> = records.iter().flat_map(|r| r.latencies()).collect();
    let below = quantile_below(&cdf(&lat)?, scenario.metrics.latency_threshold);
    write_manifest(
        &out_dir,
        "evaluate",
        &run,
        &scenario,
        vec![STEPS_CSV.to_string(), EPISODES_CSV.to_string()],
    )?;
    Ok(EvalReport {
        out_dir,
        summaries,
        latency_below_threshold: below,
    })
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub out_dir: PathBuf,
    pub grid: PathBuf,
    pub summary: String,
}

/// Trains each variant on the scenario's seeds (or `--seed` alone) and
/// writes `grid.csv` and `summary.txt`.
pub fn cmd_compare(args: &Common, variants: &[Variant], mut progress: impl FnMut(&str)) -> Result<CompareReport> {
    let scenario = args.scenario()?;
    let run = args.run_config(&scenario)?;
    let seeds = match args.seed {
        Some(s) => vec![s],
        None => scenario.run.seeds.clone(),
    };
    let variants = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants.to_vec()
    };
    let cmp = compare(&scenario, &variants, &seeds, run.episodes, run.steps, |o| {
        progress(&format!(
            "{} seed {}: final conflict rate {:.4}",
            o.config.variant,
            o.config.seed,
            o.final_mean(scenario.metrics.final_window, |s| s.conflict_rate)
        ))
    })?;
    let out_dir = args.out_dir("compare");
    fs::create_dir_all(&out_dir).map_err(|e| Error::artifact(&out_dir, e.to_string()))?;
    let grid = out_dir.join("grid.csv");
    cmp.write_grid(create(&grid)?)?;
    let summary = cmp.summary_table();
    fs::write(out_dir.join("summary.txt"), &summary)?;
    Ok(CompareReport { out_dir, grid, summary })
}

/// Re-runs the training recorded in `run_dir` and returns its step CSV.
/// With `check`, the result must match the recorded `steps.csv` byte for byte.
pub fn cmd_replay(run_dir: &Path, check: bool) -> Result<String> {
    let manifest = Manifest::load(run_dir)?;
    if manifest.command != "train" {
        return Err(Error::artifact(run_dir.join(MANIFEST), "only training runs can be replayed"));
    }
    let scenario = Scenario::load(run_dir.join(SCENARIO_COPY))?;
    if scenario.hash() != manifest.config_hash {
        return Err(Error::artifact(
            run_dir.join(SCENARIO_COPY),
            "scenario does not match the manifest hash",
        ));
    }
    let run = RunConfig::new(manifest.variant, manifest.seed, manifest.episodes, manifest.steps);
    let mut w = csv::Writer::from_writer(Vec::new());
    write_step_header(&mut w)?;
    train(&scenario, &run, |r| write_step_rows(&mut w, r))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let text = String::from_utf8(bytes).expect("csv output is UTF-8");
    if check {
        let path = run_dir.join(STEPS_CSV);
        let recorded = fs::read_to_string(&path).map_err(|e| Error::artifact(&path, e.to_string()))?;
        if recorded != text {
            return Err(Error::artifact(&path, "replay diverged from the recorded run"));
        }
    }
    Ok(text)
}

/// Converts an episode CSV into a series of exposition documents, one per
/// episode, each sample stamped with the episode index.
pub fn cmd_export(csv_path: &Path, labels: &Labels) -> Result<String> {
    let file = File::open(csv_path).map_err(|e| Error::artifact(csv_path, e.to_string()))?;
    let rows = read_episode_csv(file, csv_path)?;
    if rows.is_empty() {
        return Err(Error::artifact(csv_path, "episode CSV has no rows"));
    }
    let mut out = String::new();
    for s in rows {
        let mut reg = Registry::new();
        for (name, v) in [
            ("episode_reward", s.mean_reward),
            ("conflict_rate", s.conflict_rate),
            ("utilization", s.mean_utilization),
            ("latency_seconds", s.mean_latency),
            ("epsilon", s.epsilon),
        ] {
            if v.is_finite() {
                reg.set(name, labels.clone(), v)?;
            }
        }
        out.push_str(&export_text(&reg, Some(s.episode as i64))?);
    }
    Ok(out)
}
