//! Presets, Monte-Carlo sweeps and CSV output.
//!
//! Every realization derives its seed from the master seed and its index
//! alone, so different sweep values of one realization share their random
//! draws wherever the array sizes agree.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info};
use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{best_route_by_search, SearchKind, DEFAULT_MAX_ROUNDS, EXHAUSTIVE_CAP};
use crate::channel::{
    cascaded_channel, derive_seed, overall_channel, synthesize_channels, BeamAssignment, ChannelConfig, ChannelSet,
};
use crate::codebook::Codebooks;
use crate::error::{arg, Error, Result};
use crate::routing::{optimal_route, ReflectionPath};
use crate::scene::{build_los_graph, Scene};
use crate::training::{train_offline, train_online, BrtSet, MeasurementCounter, TrainingConfig};

pub const PRESETS: [&str; 3] = ["paper-indoor", "toy-chain", "toy-parallel"];

const PAPER_INDOOR: &str = include_str!("../presets/paper_indoor.toml");
const TOY_CHAIN: &str = include_str!("../presets/toy_chain.toml");
const TOY_PARALLEL: &str = include_str!("../presets/toy_parallel.toml");

/// Edge list of the paper-indoor LoS graph for user location 1.
pub const PAPER_INDOOR_EDGES: &str = include_str!("../presets/paper_indoor_edges.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Distributed,
    Sequential,
    Exhaustive,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Distributed => "distributed",
            Scheme::Sequential => "sequential",
            Scheme::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "distributed" => Ok(Scheme::Distributed),
            "sequential" => Ok(Scheme::Sequential),
            "exhaustive" => Ok(Scheme::Exhaustive),
            other => arg(format!("unknown scheme '{other}' (expected distributed, sequential or exhaustive)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    M0,
    RicianK,
    UserLocation,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::M0 => "m0",
            SweepVariable::RicianK => "rician_k",
            SweepVariable::UserLocation => "user_location",
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "m0" => Ok(SweepVariable::M0),
            "rician_k" | "k" => Ok(SweepVariable::RicianK),
            "user_location" | "user" => Ok(SweepVariable::UserLocation),
            other => arg(format!("unknown sweep variable '{other}' (expected m0, rician_k or user_location)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = Error;
    /// `NAME=V1,V2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (name, list) =
            s.split_once('=').ok_or_else(|| Error::Argument(format!("sweep '{s}' is not NAME=V1,V2,...")))?;
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Argument(format!("sweep value '{v}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep { variable: name.parse()?, values })
    }
}

/// Codebook sizes: `D_B`, `D_I^(1)`, `D_I^(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSizes {
    pub bs: usize,
    pub horizontal: usize,
    pub vertical: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Scene file; unused when the scene is supplied directly.
    pub scene_path: Option<PathBuf>,
    pub channel: ChannelConfig,
    pub codebooks: CodebookSizes,
    pub realizations: usize,
    pub sweep: Sweep,
    pub schemes: Vec<Scheme>,
    /// Defaults to the number of IRSs.
    pub max_hops: Option<usize>,
    pub max_rounds: usize,
    /// Square IRS size applied to every IRS unless `m0` is swept.
    pub m0: Option<usize>,
    /// 1-based user location used unless the location is swept.
    pub user: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    carrier_frequency: Option<f64>,
    rician_factor_db: Option<f64>,
    los_pathloss_exponent: Option<f64>,
    nlos_pathloss_exponent: Option<f64>,
    reference_distance: Option<f64>,
    los_only: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scene: PathBuf,
    #[serde(default)]
    channel: ChannelSection,
    codebook: CodebookSizes,
    realizations: usize,
    sweep: Sweep,
    schemes: Vec<Scheme>,
    max_hops: Option<usize>,
    max_rounds: Option<usize>,
    m0: Option<usize>,
    user: Option<usize>,
    output: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

impl ExperimentConfig {
    /// Parses a config file. A relative scene path is resolved against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let d = ChannelConfig::default();
        let c = f.channel;
        let channel = ChannelConfig {
            carrier_frequency: c.carrier_frequency.unwrap_or(d.carrier_frequency),
            rician_factor_db: c.rician_factor_db.unwrap_or(d.rician_factor_db),
            los_pathloss_exponent: c.los_pathloss_exponent.unwrap_or(d.los_pathloss_exponent),
            nlos_pathloss_exponent: c.nlos_pathloss_exponent.unwrap_or(d.nlos_pathloss_exponent),
            reference_distance: c.reference_distance.unwrap_or(d.reference_distance),
            los_only: c.los_only.unwrap_or(d.los_only),
            ..d
        };
        let scene_path = if f.scene.is_relative() { base_dir.join(f.scene) } else { f.scene };
        let cfg = ExperimentConfig {
            scene_path: Some(scene_path),
            channel,
            codebooks: f.codebook,
            realizations: f.realizations,
            sweep: f.sweep,
            schemes: f.schemes,
            max_hops: f.max_hops,
            max_rounds: f.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
            m0: f.m0,
            user: f.user.unwrap_or(1),
            output: f.output,
            seed: f.seed,
        };
        Ok(cfg)
    }

    /// Reads a config file and the scene it points to.
    pub fn load(path: &Path) -> Result<(Scene, ExperimentConfig)> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))?;
        let scene_path = cfg.scene_path.as_ref().expect("set by from_toml_str");
        let scene = Scene::from_toml_str(&std::fs::read_to_string(scene_path)?)?;
        cfg.validate(&scene)?;
        Ok((scene, cfg))
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if self.realizations == 0 {
            return arg("realizations must be at least 1");
        }
        if self.sweep.values.is_empty() {
            return arg("sweep values must be nonempty");
        }
        if self.schemes.is_empty() {
            return arg("at least one scheme is required");
        }
        if self.max_rounds == 0 {
            return arg("max_rounds must be at least 1");
        }
        self.channel.validate()?;
        let users = scene.user_positions.len();
        for &v in &self.sweep.values {
            match self.sweep.variable {
                SweepVariable::M0 | SweepVariable::UserLocation if v.fract() != 0.0 || v < 1.0 => {
                    return arg(format!("{} values must be positive integers, got {v}", self.sweep.variable));
                }
                SweepVariable::UserLocation if v as usize > users => {
                    return arg(format!("user location {v} does not exist (scene has {users})"));
                }
                SweepVariable::RicianK if v.is_nan() => return arg("Rician factor must not be NaN"),
                _ => {}
            }
        }
        if self.sweep.variable != SweepVariable::UserLocation && (self.user == 0 || self.user > users) {
            return arg(format!("user location {} does not exist (scene has {users})", self.user));
        }
        if self.m0 == Some(0) {
            return arg("m0 must be positive");
        }
        if self.schemes.contains(&Scheme::Exhaustive) {
            let hops = self.max_hops.unwrap_or(scene.irs_count());
            let count = self.codebooks.bs as f64
                * ((self.codebooks.horizontal * self.codebooks.vertical) as f64).powi(hops as i32);
            if count > EXHAUSTIVE_CAP {
                return Err(Error::Refused { count, cap: EXHAUSTIVE_CAP });
            }
        }
        Ok(())
    }
}

/// Scene and default experiment of a named preset.
pub fn preset_scenario(name: &str) -> Result<(Scene, ExperimentConfig)> {
    let base = ExperimentConfig {
        scene_path: None,
        channel: ChannelConfig::default(),
        codebooks: CodebookSizes { bs: 4, horizontal: 4, vertical: 4 },
        realizations: 50,
        sweep: Sweep { variable: SweepVariable::RicianK, values: vec![10.0] },
        schemes: vec![Scheme::Distributed, Scheme::Sequential, Scheme::Exhaustive],
        max_hops: None,
        max_rounds: DEFAULT_MAX_ROUNDS,
        m0: None,
        user: 1,
        output: None,
        seed: 0,
    };
    let (text, cfg) = match name {
        "paper-indoor" => (
            PAPER_INDOOR,
            ExperimentConfig {
                codebooks: CodebookSizes { bs: 16, horizontal: 32, vertical: 32 },
                realizations: 100,
                sweep: Sweep { variable: SweepVariable::M0, values: vec![8.0, 12.0, 16.0, 20.0] },
                schemes: vec![Scheme::Distributed, Scheme::Sequential],
                m0: Some(20),
                ..base
            },
        ),
        "toy-chain" => (TOY_CHAIN, base),
        "toy-parallel" => (TOY_PARALLEL, base),
        other => return arg(format!("unknown preset '{other}' (available: {})", PRESETS.join(", "))),
    };
    let scene = Scene::from_toml_str(text)?;
    cfg.validate(&scene)?;
    Ok((scene, cfg))
}

/// Parses an edge list: one `i j` pair per line, `#` comments.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut it = l.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(Error::Parse(format!("bad edge line '{l}'"))),
            }
        })
        .collect()
}

/// One CSV row: one scheme in one realization at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep: SweepVariable,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub realization: usize,
    /// `None` when no feasible path exists.
    pub path: Option<ReflectionPath>,
    /// `|h(Ω)|²` of the cascaded channel, linear.
    pub cascaded_gain: Option<f64>,
    /// Cascaded plus all scattered sub-paths, linear.
    pub overall_gain: Option<f64>,
    /// BRT-based estimate (distributed only), linear.
    pub estimated_gain: Option<f64>,
    pub counts: MeasurementCounter,
}

impl ResultRow {
    pub fn feasible(&self) -> bool {
        self.path.is_some()
    }

    pub fn cascaded_gain_db(&self) -> Option<f64> {
        self.cascaded_gain.map(to_db)
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub const CSV_HEADER: &str = "sweep,sweep_value,scheme,realization,path,hops,cascaded_gain_db,overall_gain_db,\
estimated_gain_db,bs_training,passive_offline,passive_online,search_measurements,feasible";

/// CSV text with header; gains in dB with 4 decimals, empty cells where a
/// value does not apply.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let db = |g: Option<f64>| g.map(|x| format!("{:.4}", to_db(x))).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sweep,
            r.sweep_value,
            r.scheme,
            r.realization,
            r.path.as_ref().map(ToString::to_string).unwrap_or_default(),
            r.path.as_ref().map(|p| p.len().to_string()).unwrap_or_default(),
            db(r.cascaded_gain),
            db(r.overall_gain),
            db(r.estimated_gain),
            c.bs_training_transmissions,
            c.passive_offline_measurements,
            c.passive_online_measurements,
            c.sequential_measurements + c.exhaustive_measurements,
            r.feasible(),
        );
    }
    out
}

/// Scene, channel config and user index for one sweep value.
fn instance(scene: &Scene, cfg: &ExperimentConfig, value: f64) -> (Scene, ChannelConfig, usize) {
    let s = match (cfg.sweep.variable, cfg.m0) {
        (SweepVariable::M0, _) => scene.with_square_irs(value as usize),
        (_, Some(m0)) => scene.with_square_irs(m0),
        _ => scene.clone(),
    };
    let mut ch = cfg.channel.clone();
    let mut user = cfg.user - 1;
    match cfg.sweep.variable {
        SweepVariable::RicianK => ch.rician_factor_db = value,
        SweepVariable::UserLocation => user = value as usize - 1,
        SweepVariable::M0 => {}
    }
    (s, ch, user)
}

/// Seed shared by every sweep value of realization `r`.
pub fn realization_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, &[r as u64])
}

fn evaluate(
    channels: &ChannelSet,
    path: &ReflectionPath,
    beams: &BeamAssignment,
    cb: &Codebooks,
) -> Result<(f64, f64)> {
    Ok((
        cascaded_channel(channels, path, beams, cb)?.norm_sqr(),
        overall_channel(channels, path, beams, cb)?.norm_sqr(),
    ))
}

fn run_realization(scene: &Scene, cfg: &ExperimentConfig, r: usize) -> Result<Vec<(usize, ResultRow)>> {
    let seed = realization_seed(cfg.seed, r);
    let tcfg = TrainingConfig { seed, ..Default::default() };
    let mut rows = Vec::new();
    // Offline tables never involve the user, so locations can share them.
    let mut offline_cache: Option<(BrtSet, MeasurementCounter)> = None;
    for (vi, &value) in cfg.sweep.values.iter().enumerate() {
        let (s, mut ch_cfg, user) = instance(scene, cfg, value);
        ch_cfg.rng_seed = seed;
        let graph = build_los_graph(&s, user)?;
        let channels = synthesize_channels(&s, &graph, &ch_cfg)?;
        let cb = Codebooks::for_scene(&s, cfg.codebooks.bs, cfg.codebooks.horizontal, cfg.codebooks.vertical)?;
        let max_hops = cfg.max_hops.unwrap_or(graph.irs_count());
        let blank = |scheme| ResultRow {
            sweep: cfg.sweep.variable,
            sweep_value: value,
            scheme,
            realization: r,
            path: None,
            cascaded_gain: None,
            overall_gain: None,
            estimated_gain: None,
            counts: MeasurementCounter::default(),
        };
        for &scheme in &cfg.schemes {
            let mut row = blank(scheme);
            match scheme {
                Scheme::Distributed => {
                    let (offline, offline_counts) = match (&offline_cache, cfg.sweep.variable) {
                        (Some(c), SweepVariable::UserLocation) => c.clone(),
                        _ => {
                            let mut c = MeasurementCounter::default();
                            let b = train_offline(&channels, &cb, &mut c, &tcfg)?;
                            offline_cache = Some((b.clone(), c));
                            (b, c)
                        }
                    };
                    let mut counts = offline_counts;
                    let brts = train_online(&channels, &cb, offline, &mut counts, &tcfg)?;
                    row.counts = counts;
                    match optimal_route(&graph, &brts, channels.q_gains(), max_hops) {
                        Ok(route) => {
                            let (c, o) = evaluate(&channels, &route.path, &route.beam_assignment, &cb)?;
                            row.cascaded_gain = Some(c);
                            row.overall_gain = Some(o);
                            row.estimated_gain = Some(route.estimated_gain);
                            row.path = Some(route.path);
                        }
                        Err(Error::Infeasible) => {}
                        Err(e) => return Err(e),
                    }
                }
                Scheme::Sequential | Scheme::Exhaustive => {
                    let kind = if scheme == Scheme::Sequential {
                        SearchKind::Sequential { max_rounds: cfg.max_rounds }
                    } else {
                        SearchKind::Exhaustive
                    };
                    let mut counts = MeasurementCounter::default();
                    match best_route_by_search(&channels, &graph, &cb, kind, max_hops, &mut counts) {
                        Ok(res) => {
                            let (c, o) = evaluate(&channels, &res.path, &res.beams, &cb)?;
                            row.cascaded_gain = Some(c);
                            row.overall_gain = Some(o);
                            row.path = Some(res.path);
                        }
                        Err(Error::Infeasible) => {}
                        Err(e) => return Err(e),
                    }
                    row.counts = counts;
                }
            }
            rows.push((vi, row));
        }
    }
    debug!("realization {r} done");
    Ok(rows)
}

/// Runs every sweep value × realization × scheme. Realizations run in
/// parallel; rows come back ordered by (sweep value, realization, scheme).
pub fn run_experiment(scene: &Scene, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate(scene)?;
    info!(
        "running {} realizations over {} = {:?} with schemes {:?}",
        cfg.realizations, cfg.sweep.variable, cfg.sweep.values, cfg.schemes
    );
    let per_realization =
        (0..cfg.realizations).into_par_iter().map(|r| run_realization(scene, cfg, r)).collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<(usize, ResultRow)> = per_realization.into_iter().flatten().collect();
    rows.sort_by_key(|(vi, row)| (*vi, row.realization));
    Ok(rows.into_iter().map(|(_, row)| row).collect())
}

/// Aggregate of one (sweep value, scheme) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub rows: usize,
    /// dB of the mean linear cascaded gain over feasible rows.
    pub mean_gain_db: f64,
    pub median_gain_db: f64,
    pub mean_overall_db: f64,
    pub mean_measurements: f64,
    pub infeasible_rate: f64,
}

/// Median of a nonempty slice; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Groups rows by (sweep value, scheme) in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return arg("cannot summarize an empty result set");
    }
    let mut order: Vec<(u64, Scheme)> = Vec::new();
    let mut groups: BTreeMap<(u64, Scheme), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.sweep_value.to_bits(), r.scheme);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let feasible: Vec<&&ResultRow> = g.iter().filter(|r| r.feasible()).collect();
            let gains: Vec<f64> = feasible.iter().filter_map(|r| r.cascaded_gain).collect();
            let overall: Vec<f64> = feasible.iter().filter_map(|r| r.overall_gain).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            SummaryRow {
                sweep_value: f64::from_bits(key.0),
                scheme: key.1,
                rows: g.len(),
                mean_gain_db: to_db(mean(&gains)),
                median_gain_db: median(&gains.iter().map(|&x| to_db(x)).collect::<Vec<_>>()),
                mean_overall_db: to_db(mean(&overall)),
                mean_measurements: g.iter().map(|r| r.counts.total() as f64).sum::<f64>() / g.len() as f64,
                infeasible_rate: (g.len() - feasible.len()) as f64 / g.len() as f64,
            }
        })
        .collect())
}

/// Plain-text table of a summary.
pub fn summary_table(summary: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:>10} {:>12} {:>6} {:>12} {:>12} {:>12} {:>14} {:>10}\n",
        "value", "scheme", "rows", "mean_db", "median_db", "overall_db", "measurements", "infeasible"
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{:>10} {:>12} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>14.1} {:>10.3}",
            s.sweep_value,
            s.scheme,
            s.rows,
            s.mean_gain_db,
            s.median_gain_db,
            s.mean_overall_db,
            s.mean_measurements,
            s.infeasible_rate
        );
    }
    out
}
