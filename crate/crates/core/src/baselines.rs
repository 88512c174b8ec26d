//! Exhaustive and sequential beam search on the true channels.
//!
//! Both searches model the user reporting the RSS of every tried beam
//! combination; the simulator plays the user and returns
//! `|cascaded_channel|²` exactly.

use ndarray::Array1;
use num_complex::Complex64;

use crate::channel::{cascaded_channel, BeamAssignment, ChannelSet};
use crate::codebook::Codebooks;
use crate::error::{arg, Error, Result};
use crate::routing::{enumerate_paths, ReflectionPath};
use crate::scene::LoSGraph;
use crate::training::MeasurementCounter;
use crate::NodeId;

/// Default ceiling on exhaustive evaluations.
pub const EXHAUSTIVE_CAP: f64 = 1e7;

/// Default round limit for the sequential search.
pub const DEFAULT_MAX_ROUNDS: usize = 10;

/// Relative margin a sweep candidate must beat the incumbent by before the
/// beam is switched, as a fraction of `(Σ|zₘ|)²`. Below it the difference
/// is rounding noise.
const SWITCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub path: ReflectionPath,
    pub beams: BeamAssignment,
    /// `|h_{0,J+1}|²` of the cascaded channel with `beams`.
    pub achieved_gain: f64,
    pub measurements_used: u64,
    /// Completed rounds (sequential only; 0 for exhaustive).
    pub iterations: usize,
    /// `D_B + L·D_I` for sequential, 0 for exhaustive.
    pub per_round_measurements: u64,
    /// Objective after every sweep, starting with the initial assignment
    /// (sequential only).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchKind {
    Exhaustive,
    Sequential { max_rounds: usize },
}

fn gain_of(channels: &ChannelSet, path: &ReflectionPath, beams: &BeamAssignment, codebooks: &Codebooks) -> Result<f64> {
    Ok(cascaded_channel(channels, path, beams, codebooks)?.norm_sqr())
}

fn check_feasible(channels: &ChannelSet, path: &ReflectionPath) -> Result<()> {
    if !path.is_feasible(channels.graph()) {
        return arg(format!("path {path} is not feasible in the LoS graph"));
    }
    Ok(())
}

/// `D_B · D_I^L` as a float, so full-scale counts do not overflow.
pub fn exhaustive_count(codebooks: &Codebooks, hops: usize) -> f64 {
    codebooks.bs_size() as f64 * (codebooks.irs_size() as f64).powi(hops as i32)
}

/// Every beam combination on `path`, lowest index kept on ties.
pub fn exhaustive_beam_search(
    channels: &ChannelSet,
    path: &ReflectionPath,
    codebooks: &Codebooks,
    counter: &mut MeasurementCounter,
) -> Result<SearchResult> {
    exhaustive_beam_search_capped(channels, path, codebooks, counter, EXHAUSTIVE_CAP)
}

pub fn exhaustive_beam_search_capped(
    channels: &ChannelSet,
    path: &ReflectionPath,
    codebooks: &Codebooks,
    counter: &mut MeasurementCounter,
    cap: f64,
) -> Result<SearchResult> {
    check_feasible(channels, path)?;
    let count = exhaustive_count(codebooks, path.len());
    if count > cap {
        return Err(Error::Refused { count, cap });
    }
    let d_i = codebooks.irs_size();
    let d_v = codebooks.vertical_size;
    // Mixed-radix digits: BS beam first, then one composed index per hop.
    let mut digits = vec![0usize; path.len() + 1];
    let radix: Vec<usize> = std::iter::once(codebooks.bs_size()).chain(std::iter::repeat_n(d_i, path.len())).collect();
    let assign = |digits: &[usize]| BeamAssignment {
        bs_beam_index: digits[0],
        irs_beams: path.hops().iter().zip(&digits[1..]).map(|(&a, &k)| (a, (k / d_v, k % d_v))).collect(),
    };
    let mut best: Option<(f64, BeamAssignment)> = None;
    let total = count as u64;
    for _ in 0..total {
        let beams = assign(&digits);
        let g = gain_of(channels, path, &beams, codebooks)?;
        if best.as_ref().is_none_or(|(b, _)| g > *b) {
            best = Some((g, beams));
        }
        // Increment, last digit fastest.
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < radix[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    let (achieved_gain, beams) = best.expect("at least one combination");
    counter.exhaustive_measurements += total;
    Ok(SearchResult {
        path: path.clone(),
        beams,
        achieved_gain,
        measurements_used: total,
        iterations: 0,
        per_round_measurements: 0,
        objective_trace: Vec::new(),
    })
}

/// All beams at index 0.
pub fn initial_assignment(path: &ReflectionPath) -> BeamAssignment {
    BeamAssignment { bs_beam_index: 0, irs_beams: path.hops().iter().map(|&a| (a, (0, 0))).collect() }
}

/// Round-robin coordinate ascent starting from index 0 everywhere.
pub fn sequential_beam_search(
    channels: &ChannelSet,
    path: &ReflectionPath,
    codebooks: &Codebooks,
    counter: &mut MeasurementCounter,
    max_rounds: usize,
) -> Result<SearchResult> {
    sequential_beam_search_from(channels, path, codebooks, counter, max_rounds, initial_assignment(path))
}

/// Round-robin coordinate ascent from a given assignment. Each round sweeps
/// the BS codebook, then the full composed codebook of every IRS in hop
/// order; a beam is only switched on a strict improvement.
pub fn sequential_beam_search_from(
    channels: &ChannelSet,
    path: &ReflectionPath,
    codebooks: &Codebooks,
    counter: &mut MeasurementCounter,
    max_rounds: usize,
    initial: BeamAssignment,
) -> Result<SearchResult> {
    check_feasible(channels, path)?;
    if max_rounds == 0 {
        return arg("sequential search needs at least one round");
    }
    let chain = path.node_chain(channels.user());
    let mut beams = initial;
    for &a in path.hops() {
        let &(h, v) =
            beams.irs_beams.get(&a).ok_or_else(|| Error::Argument(format!("initial assignment lacks IRS {a}")))?;
        if h >= codebooks.horizontal_size || v >= codebooks.vertical_size {
            return arg(format!("initial beam ({h},{v}) of IRS {a} outside codebook"));
        }
    }
    if beams.bs_beam_index >= codebooks.bs_size() {
        return arg("initial BS beam outside codebook");
    }
    let per_round = (codebooks.bs_size() + path.len() * codebooks.irs_size()) as u64;
    let mut trace = vec![gain_of(channels, path, &beams, codebooks)?];
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let mut changed = false;

        let r = left_row(channels, &chain, 0, &beams, codebooks)?;
        let z: Vec<Complex64> = r.to_vec();
        let scores: Vec<Complex64> = codebooks.bs.iter().map(|w| z.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
        if let Some(k) = pick(&scores, beams.bs_beam_index, &z) {
            beams.bs_beam_index = k;
            changed = true;
        }
        trace.push(gain_of(channels, path, &beams, codebooks)?);

        for l in 1..=path.len() {
            let node = chain[l];
            let (m1, m2) = channels.irs_dims(node)?;
            let y = left_row(channels, &chain, l, &beams, codebooks)?;
            let x = right_vector(channels, &chain, l, &beams, codebooks)?;
            let z: Vec<Complex64> = y.iter().zip(x.iter()).map(|(a, b)| a * b).collect();
            let scores = irs_scores(&z, codebooks, m1, m2)?;
            let (h, v) = beams.irs_beams[&node];
            let current = h * codebooks.vertical_size + v;
            if let Some(k) = pick(&scores, current, &z) {
                beams.irs_beams.insert(node, (k / codebooks.vertical_size, k % codebooks.vertical_size));
                changed = true;
            }
            trace.push(gain_of(channels, path, &beams, codebooks)?);
        }
        if !changed {
            break;
        }
    }
    let used = per_round * rounds as u64;
    counter.sequential_measurements += used;
    Ok(SearchResult {
        path: path.clone(),
        achieved_gain: *trace.last().expect("nonempty trace"),
        beams,
        measurements_used: used,
        iterations: rounds,
        per_round_measurements: per_round,
        objective_trace: trace,
    })
}

/// Index of the best score if it beats `current` by more than the switch
/// tolerance; lowest index on ties.
fn pick(scores: &[Complex64], current: usize, z: &[Complex64]) -> Option<usize> {
    let scale: f64 = z.iter().map(|c| c.norm()).sum::<f64>().powi(2);
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if s.norm_sqr() > scores[best].norm_sqr() {
            best = k;
        }
    }
    (best != current && scores[best].norm_sqr() > scores[current].norm_sqr() + SWITCH_TOLERANCE * scale).then_some(best)
}

/// `Σₘ zₘ θₘ` for every composed beam `θ = h ⊗ v`, indexed `h·D_v + v`.
fn irs_scores(z: &[Complex64], codebooks: &Codebooks, m1: usize, m2: usize) -> Result<Vec<Complex64>> {
    let hcb = codebooks.horizontal(m1)?;
    let vcb = codebooks.vertical(m2)?;
    // partial[i1][v] = Σ_{i2} z[i1·m2 + i2] · v[i2]
    let partial: Vec<Vec<Complex64>> = (0..m1)
        .map(|i1| {
            let zr = &z[i1 * m2..(i1 + 1) * m2];
            vcb.iter().map(|ve| zr.iter().zip(ve).map(|(a, b)| a * b).sum()).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(hcb.size() * vcb.size());
    for he in hcb.iter() {
        for vi in 0..vcb.size() {
            out.push(he.iter().zip(&partial).map(|(h, p)| h * p[vi]).sum());
        }
    }
    Ok(out)
}

/// Row vector mapping the signal arriving at `chain[l]` (before its own
/// phase shifts, or the BS beam when `l == 0`) to the user.
fn left_row(
    channels: &ChannelSet,
    chain: &[NodeId],
    l: usize,
    beams: &BeamAssignment,
    codebooks: &Codebooks,
) -> Result<Array1<Complex64>> {
    let last = chain.len() - 1;
    let mut y = channels.link(chain[last - 1], chain[last])?.matrix.row(0).to_owned();
    for k in (l + 1..last).rev() {
        let theta = channels.irs_phase_vector(chain[k], beams, codebooks)?;
        y.iter_mut().zip(&theta).for_each(|(a, t)| *a *= t);
        y = y.dot(&channels.link(chain[k - 1], chain[k])?.matrix);
    }
    Ok(y)
}

/// Signal incident on `chain[l]` (`l ≥ 1`) before its phase shifts.
fn right_vector(
    channels: &ChannelSet,
    chain: &[NodeId],
    l: usize,
    beams: &BeamAssignment,
    codebooks: &Codebooks,
) -> Result<Array1<Complex64>> {
    let w = codebooks.bs.get(beams.bs_beam_index).ok_or_else(|| Error::Argument("BS beam outside codebook".into()))?;
    let mut x = Array1::from(w.to_vec());
    for k in 1..=l {
        x = channels.link(chain[k - 1], chain[k])?.matrix.dot(&x);
        if k < l {
            let theta = channels.irs_phase_vector(chain[k], beams, codebooks)?;
            x.iter_mut().zip(&theta).for_each(|(a, t)| *a *= t);
        }
    }
    Ok(x)
}

/// Runs the per-path search on every feasible path up to `max_hops` and
/// keeps the best. Ties go to the earlier path in lexicographic order.
pub fn best_route_by_search(
    channels: &ChannelSet,
    graph: &LoSGraph,
    codebooks: &Codebooks,
    search: SearchKind,
    max_hops: usize,
    counter: &mut MeasurementCounter,
) -> Result<SearchResult> {
    let paths = enumerate_paths(graph, max_hops);
    if paths.is_empty() {
        return Err(Error::Infeasible);
    }
    let mut best: Option<SearchResult> = None;
    let mut used = 0;
    for p in &paths {
        let r = match search {
            SearchKind::Exhaustive => exhaustive_beam_search(channels, p, codebooks, counter)?,
            SearchKind::Sequential { max_rounds } => {
                sequential_beam_search(channels, p, codebooks, counter, max_rounds)?
            }
        };
        used += r.measurements_used;
        if best.as_ref().is_none_or(|b| r.achieved_gain > b.achieved_gain) {
            best = Some(r);
        }
    }
    let mut best = best.expect("nonempty");
    best.measurements_used = used;
    Ok(best)
}
