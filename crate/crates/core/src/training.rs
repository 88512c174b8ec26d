//! Distributed beam training.
//!
//! The BS sweeps its codebook once while every IRS controller in `N₀`
//! listens (active training). Each IRS controller then trains its passive
//! beam for every (predecessor, successor) pair: offline for controller
//! successors, online when the user is the successor. Horizontal and
//! vertical beams are searched one after the other, and the direct link
//! between the two end nodes is measured with the IRS switched off and
//! subtracted from every reading.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_gaussian, derive_seed, ChannelSet};
use crate::codebook::{Codebook, Codebooks};
use crate::error::{arg, Error, Result};
use crate::scene::{LoSGraph, NodeKind};
use crate::NodeId;

/// Measurement tallies. Every field only ever grows during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeasurementCounter {
    pub bs_training_transmissions: u64,
    pub passive_offline_measurements: u64,
    pub passive_online_measurements: u64,
    pub sequential_measurements: u64,
    pub exhaustive_measurements: u64,
}

impl MeasurementCounter {
    pub fn total(&self) -> u64 {
        self.bs_training_transmissions
            + self.passive_offline_measurements
            + self.passive_online_measurements
            + self.sequential_measurements
            + self.exhaustive_measurements
    }
}

impl AddAssign for MeasurementCounter {
    fn add_assign(&mut self, o: Self) {
        self.bs_training_transmissions += o.bs_training_transmissions;
        self.passive_offline_measurements += o.passive_offline_measurements;
        self.passive_online_measurements += o.passive_online_measurements;
        self.sequential_measurements += o.sequential_measurements;
        self.exhaustive_measurements += o.exhaustive_measurements;
    }
}

/// RSS measurement model. The default is noise-free, single-shot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Readings averaged per reported RSS.
    pub rss_snapshots: usize,
    /// Additive receiver noise power in dB relative to unit transmit
    /// power; `None` disables noise.
    pub noise_power_db: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { rss_snapshots: 1, noise_power_db: None, seed: 0 }
    }
}

/// Turns complex received amplitudes into average RSS readings.
struct Receiver {
    noise_std: f64,
    snapshots: usize,
    rng: ChaCha8Rng,
}

impl Receiver {
    fn new(cfg: &TrainingConfig, stream: &[u64]) -> Result<Self> {
        if cfg.rss_snapshots == 0 {
            return arg("RSS averaging needs at least one snapshot");
        }
        let noise_std = cfg.noise_power_db.map_or(0.0, |db| 10f64.powf(db / 10.0).sqrt());
        Ok(Receiver {
            noise_std,
            snapshots: cfg.rss_snapshots,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream)),
        })
    }

    fn sample(&mut self, signal: Complex64) -> Complex64 {
        if self.noise_std > 0.0 {
            signal + complex_gaussian(&mut self.rng) * self.noise_std
        } else {
            signal
        }
    }

    /// Average RSS of `signal`, after subtracting a calibrated `offset`.
    fn rss(&mut self, signal: Complex64, offset: Complex64) -> f64 {
        (0..self.snapshots).map(|_| (self.sample(signal) - offset).norm_sqr()).sum::<f64>() / self.snapshots as f64
    }

    /// Average received amplitude, used for the IRS-off calibration slot.
    fn calibrate(&mut self, signal: Complex64) -> Complex64 {
        (0..self.snapshots).map(|_| self.sample(signal)).sum::<Complex64>() / self.snapshots as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsBrtRow {
    /// `k_j^*`, 0-based.
    pub beam_index: usize,
    /// `Γ^(j)`, linear.
    pub gain: f64,
}

/// BS beam routing table: best beam per next-hop IRS.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BsBrt {
    pub rows: BTreeMap<NodeId, BsBrtRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrsBrtRow {
    pub h_index: usize,
    pub v_index: usize,
    /// `Λ^(i,j,r)`, linear.
    pub gain: f64,
}

/// Beam routing table of IRS `owner`, keyed by (previous, next) node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IrsBrt {
    pub owner: NodeId,
    pub rows: BTreeMap<(NodeId, NodeId), IrsBrtRow>,
}

/// Everything the BS knows after feedback: its own table plus every IRS
/// table, offline and online rows together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BrtSet {
    pub bs: BsBrt,
    pub irs: BTreeMap<NodeId, IrsBrt>,
    /// Vertex id of the user the online rows refer to.
    pub user: NodeId,
}

impl BrtSet {
    pub fn lambda(&self, prev: NodeId, irs: NodeId, next: NodeId) -> Option<&IrsBrtRow> {
        self.irs.get(&irs).and_then(|t| t.rows.get(&(prev, next)))
    }

    /// Merges online rows (successor = user) into the IRS tables.
    pub fn add_online_rows(&mut self, online: BTreeMap<NodeId, Vec<(NodeId, IrsBrtRow)>>) {
        for (j, rows) in online {
            let table = self.irs.entry(j).or_insert_with(|| IrsBrt { owner: j, rows: BTreeMap::new() });
            for (i, row) in rows {
                table.rows.insert((i, self.user), row);
            }
        }
    }

    /// Text export in the layout of a routing table per node: 1-based beam
    /// indices and linear gains.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# beam routing tables; beam indices are 1-based, gains linear");
        let _ = writeln!(s, "user {}", self.user);
        let _ = writeln!(s, "\n[bs]\nnext\tbeam\tgain");
        for (j, row) in &self.bs.rows {
            let _ = writeln!(s, "{}\t{}\t{:e}", j, row.beam_index + 1, row.gain);
        }
        for (j, table) in &self.irs {
            let _ = writeln!(s, "\n[irs {j}]\nprev\tnext\th_beam\tv_beam\tgain");
            for ((i, r), row) in &table.rows {
                let _ = writeln!(s, "{}\t{}\t{}\t{}\t{:e}", i, r, row.h_index + 1, row.v_index + 1, row.gain);
            }
        }
        s
    }

    /// Parses the format written by [`BrtSet::to_text`].
    pub fn from_text(text: &str) -> Result<BrtSet> {
        enum Section {
            None,
            Bs,
            Irs(NodeId),
        }
        let perr = |line: usize, msg: &str| Error::Parse(format!("BRT line {line}: {msg}"));
        let mut out = BrtSet::default();
        let mut section = Section::None;
        let mut have_user = false;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("user ") {
                out.user = rest.trim().parse().map_err(|_| perr(line_no, "bad user id"))?;
                have_user = true;
                continue;
            }
            if line == "[bs]" {
                section = Section::Bs;
                continue;
            }
            if let Some(id) = line.strip_prefix("[irs ").and_then(|r| r.strip_suffix(']')) {
                let j: NodeId = id.trim().parse().map_err(|_| perr(line_no, "bad IRS id"))?;
                out.irs.insert(j, IrsBrt { owner: j, rows: BTreeMap::new() });
                section = Section::Irs(j);
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
                // Column header.
                continue;
            }
            let int = |k: usize| -> Result<usize> {
                fields.get(k).and_then(|f| f.parse().ok()).ok_or_else(|| perr(line_no, "expected an integer"))
            };
            let index = |k: usize| -> Result<usize> {
                int(k)?.checked_sub(1).ok_or_else(|| perr(line_no, "beam indices are 1-based"))
            };
            let float = |k: usize| -> Result<f64> {
                fields.get(k).and_then(|f| f.parse().ok()).ok_or_else(|| perr(line_no, "expected a number"))
            };
            match section {
                Section::None => return Err(perr(line_no, "row outside any table")),
                Section::Bs => {
                    if fields.len() != 3 {
                        return Err(perr(line_no, "BS rows have 3 columns"));
                    }
                    out.bs.rows.insert(int(0)?, BsBrtRow { beam_index: index(1)?, gain: float(2)? });
                }
                Section::Irs(j) => {
                    if fields.len() != 5 {
                        return Err(perr(line_no, "IRS rows have 5 columns"));
                    }
                    let row = IrsBrtRow { h_index: index(2)?, v_index: index(3)?, gain: float(4)? };
                    out.irs.get_mut(&j).expect("section table exists").rows.insert((int(0)?, int(1)?), row);
                }
            }
        }
        if !have_user {
            return Err(Error::Parse("BRT text lacks a 'user' line".into()));
        }
        Ok(out)
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best
}

fn dot(row: impl Iterator<Item = Complex64>, x: &[Complex64]) -> Complex64 {
    row.zip(x).map(|(a, b)| a * b).sum()
}

/// BS sweep: every controller in `N₀` records the RSS of each BS beam on
/// its reference-element channel. One sweep serves all listeners.
pub fn active_beam_training(
    channels: &ChannelSet,
    bs_codebook: &Codebook,
    graph: &LoSGraph,
    counter: &mut MeasurementCounter,
) -> Result<BsBrt> {
    active_beam_training_with(channels, bs_codebook, graph, counter, &TrainingConfig::default())
}

pub fn active_beam_training_with(
    channels: &ChannelSet,
    bs_codebook: &Codebook,
    graph: &LoSGraph,
    counter: &mut MeasurementCounter,
    cfg: &TrainingConfig,
) -> Result<BsBrt> {
    let mut brt = BsBrt::default();
    let listeners: Vec<NodeId> =
        graph.bs_successors().iter().copied().filter(|&j| matches!(channels.kind(j), Ok(NodeKind::Irs(_)))).collect();
    if listeners.is_empty() {
        return Ok(brt);
    }
    for &j in &listeners {
        let h = channels.bs_to_irs(j)?;
        let mut rx = Receiver::new(cfg, &[0, j as u64, 0])?;
        let rss: Vec<f64> =
            bs_codebook.iter().map(|w| rx.rss(dot(h.row(0).iter().copied(), w), Complex64::new(0.0, 0.0))).collect();
        let (beam_index, gain) = argmax(rss).expect("codebook is nonempty");
        brt.rows.insert(j, BsBrtRow { beam_index, gain });
    }
    counter.bs_training_transmissions += bs_codebook.size() as u64;
    Ok(brt)
}

/// Received amplitude at `rx`'s reference point through IRS `j`, split
/// into (reflected, direct) parts.
fn cascade_amplitudes(
    channels: &ChannelSet,
    tx: NodeId,
    j: NodeId,
    rx: NodeId,
    irs_beam: &[Complex64],
    tx_beam: Option<&[Complex64]>,
) -> Result<(Complex64, Complex64)> {
    let graph = channels.graph();
    if !graph.has_edge(tx, j) || !graph.has_edge(j, rx) {
        return arg(format!("triple ({tx},{j},{rx}) is not supported by LoS edges"));
    }
    let (m1, m2) = channels.irs_dims(j)?;
    if irs_beam.len() != m1 * m2 {
        return arg(format!("passive beam has {} elements, IRS {j} has {}", irs_beam.len(), m1 * m2));
    }
    let incoming = &channels.link(tx, j)?.matrix;
    let outgoing = &channels.link(j, rx)?.matrix;
    let direct = &channels.link(tx, rx)?.matrix;
    let (arriving, direct_amp): (Vec<Complex64>, Complex64) = match tx {
        0 => {
            let w = tx_beam.ok_or_else(|| Error::Argument("BS transmission needs a beam".into()))?;
            if w.len() != incoming.ncols() {
                return arg("BS beam length does not match the antenna count");
            }
            (
                incoming.rows().into_iter().map(|r| dot(r.iter().copied(), w)).collect(),
                dot(direct.row(0).iter().copied(), w),
            )
        }
        _ => (incoming.column(0).to_vec(), direct[[0, 0]]),
    };
    let reflected: Complex64 = outgoing.row(0).iter().zip(irs_beam).zip(&arriving).map(|((g, t), a)| g * t * a).sum();
    Ok((reflected, direct_amp))
}

/// RSS at `rx` for transmitter `tx` via IRS `j` (noise-free). With
/// `cancel_direct` the IRS-off reading of the direct link is subtracted
/// from the received amplitude before squaring.
pub fn measure_cascade_rss(
    channels: &ChannelSet,
    tx: NodeId,
    j: NodeId,
    rx: NodeId,
    irs_beam: &[Complex64],
    tx_beam: Option<&[Complex64]>,
    cancel_direct: bool,
) -> Result<f64> {
    let (reflected, direct) = cascade_amplitudes(channels, tx, j, rx, irs_beam, tx_beam)?;
    let received = reflected + direct;
    Ok(if cancel_direct { (received - direct).norm_sqr() } else { received.norm_sqr() })
}

/// Horizontal-then-vertical beam search: sweep every horizontal beam with
/// vertical beam 0, keep the best, then sweep every vertical beam.
/// Exactly `h_size + v_size` calls to `rss`, all added to `count`.
pub fn decoupled_hv_search<F>(mut rss: F, h_size: usize, v_size: usize, count: &mut u64) -> Result<(usize, usize, f64)>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    if h_size == 0 || v_size == 0 {
        return arg("decoupled search needs nonempty codebooks");
    }
    let h_vals = (0..h_size).map(|h| rss(h, 0)).collect::<Result<Vec<_>>>()?;
    let (h_best, _) = argmax(h_vals).expect("nonempty");
    let v_vals = (0..v_size).map(|v| rss(h_best, v)).collect::<Result<Vec<_>>>()?;
    let (v_best, gain) = argmax(v_vals).expect("nonempty");
    *count += (h_size + v_size) as u64;
    Ok((h_best, v_best, gain))
}

/// Trains one triple: the calibration slot plus a decoupled search.
fn train_triple(
    channels: &ChannelSet,
    codebooks: &Codebooks,
    bs_brt: &BsBrt,
    (i, j, r): (NodeId, NodeId, NodeId),
    cfg: &TrainingConfig,
    count: &mut u64,
) -> Result<IrsBrtRow> {
    let tx_beam = if i == 0 {
        let row = bs_brt.rows.get(&j).ok_or_else(|| Error::Data(format!("BS BRT has no row for IRS {j}")))?;
        Some(codebooks.bs.entry(row.beam_index))
    } else {
        None
    };
    let (m1, m2) = channels.irs_dims(j)?;
    let hcb = codebooks.horizontal(m1)?;
    let vcb = codebooks.vertical(m2)?;
    let mut rx = Receiver::new(cfg, &[i as u64, j as u64, r as u64])?;

    // IRS j switched off: only the direct link reaches r.
    let zero_beam = vec![Complex64::new(0.0, 0.0); m1 * m2];
    let (_, direct) = cascade_amplitudes(channels, i, j, r, &zero_beam, tx_beam)?;
    let calibration = rx.calibrate(direct);
    *count += 1;

    let (h_index, v_index, gain) = decoupled_hv_search(
        |h, v| {
            let beam = crate::codebook::compose_3d_beam(hcb.entry(h), vcb.entry(v));
            let (reflected, direct) = cascade_amplitudes(channels, i, j, r, &beam, tx_beam)?;
            Ok(rx.rss(reflected + direct, calibration))
        },
        hcb.size(),
        vcb.size(),
        count,
    )?;
    Ok(IrsBrtRow { h_index, v_index, gain })
}

/// Offline passive training for every triple `(i, j, r)` with `r` an IRS.
pub fn passive_beam_training_offline(
    channels: &ChannelSet,
    graph: &LoSGraph,
    codebooks: &Codebooks,
    bs_brt: &BsBrt,
    counter: &mut MeasurementCounter,
    cfg: &TrainingConfig,
) -> Result<BTreeMap<NodeId, IrsBrt>> {
    let user = graph.user();
    let mut tables = BTreeMap::new();
    for j in 1..=graph.irs_count() {
        let mut table = IrsBrt { owner: j, rows: BTreeMap::new() };
        for &i in graph.predecessors(j) {
            for &r in graph.successors(j).iter().filter(|&&r| r != user) {
                let row = train_triple(
                    channels,
                    codebooks,
                    bs_brt,
                    (i, j, r),
                    cfg,
                    &mut counter.passive_offline_measurements,
                )?;
                table.rows.insert((i, r), row);
            }
        }
        tables.insert(j, table);
    }
    Ok(tables)
}

/// Online passive training with the user as receiver: one row per
/// user-adjacent IRS `j` and predecessor `i`.
pub fn passive_beam_training_online(
    channels: &ChannelSet,
    graph: &LoSGraph,
    codebooks: &Codebooks,
    bs_brt: &BsBrt,
    counter: &mut MeasurementCounter,
    cfg: &TrainingConfig,
) -> Result<BTreeMap<NodeId, Vec<(NodeId, IrsBrtRow)>>> {
    let user = graph.user();
    let mut out = BTreeMap::new();
    for &j in graph.user_neighbors() {
        if !matches!(channels.kind(j)?, NodeKind::Irs(_)) {
            continue;
        }
        let rows = graph
            .predecessors(j)
            .iter()
            .map(|&i| {
                train_triple(channels, codebooks, bs_brt, (i, j, user), cfg, &mut counter.passive_online_measurements)
                    .map(|row| (i, row))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(j, rows);
    }
    Ok(out)
}

/// Offline phase (active + passive training without the user).
pub fn train_offline(
    channels: &ChannelSet,
    codebooks: &Codebooks,
    counter: &mut MeasurementCounter,
    cfg: &TrainingConfig,
) -> Result<BrtSet> {
    let graph = channels.graph();
    let bs = active_beam_training_with(channels, &codebooks.bs, graph, counter, cfg)?;
    let irs = passive_beam_training_offline(channels, graph, codebooks, &bs, counter, cfg)?;
    Ok(BrtSet { bs, irs, user: graph.user() })
}

/// Online phase: adds the user rows to an offline BRT set.
pub fn train_online(
    channels: &ChannelSet,
    codebooks: &Codebooks,
    mut brts: BrtSet,
    counter: &mut MeasurementCounter,
    cfg: &TrainingConfig,
) -> Result<BrtSet> {
    let graph = channels.graph();
    brts.user = graph.user();
    let online = passive_beam_training_online(channels, graph, codebooks, &brts.bs, counter, cfg)?;
    brts.add_online_rows(online);
    Ok(brts)
}

/// Full distributed training: offline then online.
pub fn train_distributed(
    channels: &ChannelSet,
    codebooks: &Codebooks,
    counter: &mut MeasurementCounter,
    cfg: &TrainingConfig,
) -> Result<BrtSet> {
    let offline = train_offline(channels, codebooks, counter, cfg)?;
    train_online(channels, codebooks, offline, counter, cfg)
}
