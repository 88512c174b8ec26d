//! Link channel synthesis and end-to-end channel evaluation.
//!
//! Every forward link (BS to any node, any node to the user, and IRS to a
//! farther IRS) gets a full `rx × tx` matrix. Links that are edges of the
//! LoS graph are Rician, everything else is Rayleigh. Each link draws its
//! small-scale fading from its own RNG stream keyed by `(seed, tx, rx)`, so
//! BS/IRS links are identical across user locations for a given seed.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codebook::Codebooks;
use crate::error::{arg, Error, Result};
use crate::routing::ReflectionPath;
use crate::scene::{LoSGraph, NodeKind, Placement, Scene};
use crate::NodeId;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Hz.
    pub carrier_frequency: f64,
    /// Rician factor of LoS links in dB; `f64::INFINITY` gives pure LoS.
    pub rician_factor_db: f64,
    pub los_pathloss_exponent: f64,
    pub nlos_pathloss_exponent: f64,
    /// Meters.
    pub reference_distance: f64,
    /// Linear power above which a measured Q declares LoS.
    pub los_gain_threshold: f64,
    pub rng_seed: u64,
    /// Zero every random (NLoS) component, leaving only the deterministic
    /// LoS parts of the graph edges.
    pub los_only: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            carrier_frequency: 5e9,
            rician_factor_db: 10.0,
            los_pathloss_exponent: 2.0,
            nlos_pathloss_exponent: 3.5,
            reference_distance: 1.0,
            los_gain_threshold: 1e-10,
            rng_seed: 0,
            los_only: false,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency.is_finite() && self.carrier_frequency > 0.0) {
            return arg("carrier frequency must be positive");
        }
        if !(self.los_pathloss_exponent > 0.0 && self.nlos_pathloss_exponent > 0.0) {
            return arg("path-loss exponents must be positive");
        }
        if !(self.reference_distance.is_finite() && self.reference_distance > 0.0) {
            return arg("reference distance must be positive");
        }
        if self.rician_factor_db.is_nan() {
            return arg("Rician factor must not be NaN");
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Free-space gain at the reference distance, `(λ / 4π d₀)²`.
    pub fn reference_gain(&self) -> f64 {
        (self.wavelength() / (4.0 * PI * self.reference_distance)).powi(2)
    }

    pub fn rician_k_linear(&self) -> f64 {
        10f64.powf(self.rician_factor_db / 10.0)
    }

    /// Amplitude weights of the (LoS, scattered) components of a Rician link.
    fn rician_weights(&self) -> (f64, f64) {
        let k = self.rician_k_linear();
        if self.los_only || k.is_infinite() {
            (1.0, 0.0)
        } else {
            ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
        }
    }

    /// True when a measured average gain is high enough to declare LoS.
    pub fn declares_los(&self, gain: f64) -> bool {
        gain > self.los_gain_threshold
    }
}

/// Log-distance path gain `β₀ (d/d₀)^(−exponent)`.
pub fn path_gain(d: f64, exponent: f64, config: &ChannelConfig) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return arg(format!("path gain needs a positive distance, got {d}"));
    }
    Ok(config.reference_gain() * (d / config.reference_distance).powf(-exponent))
}

/// Far-field array responses of the link `i → j`: the departure vector at
/// `i` and the arrival vector at `j`. Entry `m` is `exp(i·2π/λ · pₘ·u)`
/// where `pₘ` is the element offset and `u` the unit direction from the
/// array towards the other end.
pub fn steering_vectors(
    placement: &Placement<'_>,
    i: NodeId,
    j: NodeId,
    wavelength: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if i == j {
        return arg("steering vectors need two distinct nodes");
    }
    let (pi, pj) = (placement.position(i)?, placement.position(j)?);
    let Some(u) = (pj - pi).normalized() else {
        return arg(format!("nodes {i} and {j} are coincident"));
    };
    let k = 2.0 * PI / wavelength;
    let response = |offsets: Vec<crate::scene::Vec3>, dir| {
        offsets.iter().map(|p| Complex64::from_polar(1.0, k * p.dot(dir))).collect()
    };
    Ok((response(placement.element_offsets(i)?, u), response(placement.element_offsets(j)?, -u)))
}

/// Selected codebook beams: BS beam index plus `(horizontal, vertical)`
/// indices per IRS, all 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeamAssignment {
    pub bs_beam_index: usize,
    pub irs_beams: BTreeMap<NodeId, (usize, usize)>,
}

/// One synthesized link channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// `rx_elements × tx_elements`.
    pub matrix: Array2<Complex64>,
    /// Large-scale gain `β(d)`.
    pub path_gain: f64,
    /// Whether the link is a LoS-graph edge (Rician) rather than Rayleigh.
    pub line_of_sight: bool,
}

/// All channels of one realization for one user location.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    graph: LoSGraph,
    config: ChannelConfig,
    /// `(m1, m2)` of IRS node `k + 1`.
    irs_dims: Vec<(usize, usize)>,
    bs_antennas: usize,
    links: BTreeMap<(NodeId, NodeId), Link>,
    q_gains: BTreeMap<(NodeId, NodeId), f64>,
}

/// Mixes a base seed with a list of stream identifiers (SplitMix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Whether `i → j` is a forward link that the simulator synthesizes.
fn is_forward(placement: &Placement<'_>, i: NodeId, j: NodeId) -> Result<bool> {
    let user = placement.user();
    if i == j || i == user || j == 0 {
        return Ok(false);
    }
    if i == 0 || j == user {
        return Ok(true);
    }
    Ok(placement.distance(0, j)? > placement.distance(0, i)?)
}

/// Synthesizes one channel realization for the graph's user location.
pub fn synthesize_channels(scene: &Scene, graph: &LoSGraph, config: &ChannelConfig) -> Result<ChannelSet> {
    config.validate()?;
    let placement = scene.with_user(graph.user_index())?;
    if graph.irs_count() != scene.irs_count() {
        return arg("graph and scene disagree on the IRS count");
    }
    let user = placement.user();
    let (los_w, nlos_w) = config.rician_weights();
    let lambda = config.wavelength();
    let site_key = |n: NodeId| if n == user { (user + graph.user_index()) as u64 } else { n as u64 };

    let mut links = BTreeMap::new();
    let mut q_gains = BTreeMap::new();
    for i in 0..user {
        for j in 1..=user {
            if !is_forward(&placement, i, j)? {
                continue;
            }
            let d = placement.distance(i, j)?;
            let los = graph.has_edge(i, j);
            let exponent = if los { config.los_pathloss_exponent } else { config.nlos_pathloss_exponent };
            let gain = path_gain(d, exponent, config)?;
            let amp = gain.sqrt();
            let (rx, tx) = (placement.element_count(j)?, placement.element_count(i)?);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &[site_key(i), site_key(j)]));
            let matrix = if los {
                let (departure, arrival) = steering_vectors(&placement, i, j, lambda)?;
                Array2::from_shape_fn((rx, tx), |(r, t)| {
                    let scatter =
                        if nlos_w > 0.0 { complex_gaussian(&mut rng) * nlos_w } else { Complex64::new(0.0, 0.0) };
                    (arrival[r] * departure[t].conj() * los_w + scatter) * amp
                })
            } else if config.los_only {
                Array2::zeros((rx, tx))
            } else {
                Array2::from_shape_fn((rx, tx), |_| complex_gaussian(&mut rng) * amp)
            };
            if los {
                q_gains.insert((i, j), gain);
            }
            links.insert((i, j), Link { matrix, path_gain: gain, line_of_sight: los });
        }
    }
    let irs_dims = scene.irs_list.iter().map(|s| (s.m1, s.m2)).collect();
    Ok(ChannelSet {
        graph: graph.clone(),
        config: config.clone(),
        irs_dims,
        bs_antennas: scene.bs_antenna_count,
        links,
        q_gains,
    })
}

impl ChannelSet {
    pub fn graph(&self) -> &LoSGraph {
        &self.graph
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn user(&self) -> NodeId {
        self.graph.user()
    }

    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas
    }

    pub fn kind(&self, node: NodeId) -> Result<NodeKind> {
        let j = self.irs_dims.len();
        match node {
            0 => Ok(NodeKind::Bs),
            n if n <= j => Ok(NodeKind::Irs(n - 1)),
            n if n == j + 1 => Ok(NodeKind::User),
            n => arg(format!("node {n} out of range")),
        }
    }

    /// `(m1, m2)` of an IRS node.
    pub fn irs_dims(&self, node: NodeId) -> Result<(usize, usize)> {
        match self.kind(node)? {
            NodeKind::Irs(k) => Ok(self.irs_dims[k]),
            _ => arg(format!("node {node} is not an IRS")),
        }
    }

    pub fn link(&self, i: NodeId, j: NodeId) -> Result<&Link> {
        self.links.get(&(i, j)).ok_or_else(|| Error::Data(format!("no channel synthesized for link {i} -> {j}")))
    }

    pub fn links(&self) -> impl Iterator<Item = ((NodeId, NodeId), &Link)> {
        self.links.iter().map(|(k, v)| (*k, v))
    }

    pub fn link_mut(&mut self, i: NodeId, j: NodeId) -> Result<&mut Link> {
        self.links.get_mut(&(i, j)).ok_or_else(|| Error::Data(format!("no channel synthesized for link {i} -> {j}")))
    }

    /// `H_{0,j}`, `M × N`.
    pub fn bs_to_irs(&self, j: NodeId) -> Result<&Array2<Complex64>> {
        self.irs_dims(j)?;
        Ok(&self.link(0, j)?.matrix)
    }

    /// `S_{i,j}`, `M × M`.
    pub fn irs_to_irs(&self, i: NodeId, j: NodeId) -> Result<&Array2<Complex64>> {
        self.irs_dims(i)?;
        self.irs_dims(j)?;
        Ok(&self.link(i, j)?.matrix)
    }

    /// `g^H_{j,J+1}` as a `1 × M` row.
    pub fn irs_to_user(&self, j: NodeId) -> Result<&Array2<Complex64>> {
        self.irs_dims(j)?;
        Ok(&self.link(j, self.user())?.matrix)
    }

    /// Reference-element channel between controllers (or controller and user).
    pub fn direct_scalar(&self, i: NodeId, j: NodeId) -> Result<Complex64> {
        Ok(self.link(i, j)?.matrix[[0, 0]])
    }

    /// Analytic large-scale gain `Q_{i,j}` of a graph edge.
    pub fn q_gain(&self, i: NodeId, j: NodeId) -> Result<f64> {
        self.q_gains.get(&(i, j)).copied().ok_or_else(|| Error::Data(format!("no Q gain for edge {i} -> {j}")))
    }

    pub fn q_gains(&self) -> &BTreeMap<(NodeId, NodeId), f64> {
        &self.q_gains
    }

    /// Diagonal of `Φ_j` for the assigned beam of IRS `node`.
    pub fn irs_phase_vector(
        &self,
        node: NodeId,
        beams: &BeamAssignment,
        codebooks: &Codebooks,
    ) -> Result<Vec<Complex64>> {
        let (m1, m2) = self.irs_dims(node)?;
        let &(h, v) =
            beams.irs_beams.get(&node).ok_or_else(|| Error::Argument(format!("no beam assigned to IRS {node}")))?;
        codebooks.irs_beam(m1, m2, h, v)
    }

    fn bs_beam<'a>(&self, beams: &BeamAssignment, codebooks: &'a Codebooks) -> Result<&'a [Complex64]> {
        if codebooks.bs.entry_length() != self.bs_antennas {
            return arg("BS codebook length does not match the antenna count");
        }
        codebooks
            .bs
            .get(beams.bs_beam_index)
            .ok_or_else(|| Error::Argument(format!("BS beam {} outside codebook", beams.bs_beam_index)))
    }

    /// Signal at the user through the node chain `0 → … → J+1`, using the
    /// full link matrices and the assigned beams at every IRS on the chain.
    pub fn chain_response(&self, chain: &[NodeId], beams: &BeamAssignment, codebooks: &Codebooks) -> Result<Complex64> {
        let w = self.bs_beam(beams, codebooks)?;
        let mut x = Array1::from(w.to_vec());
        for pair in chain.windows(2) {
            let (p, q) = (pair[0], pair[1]);
            x = self.link(p, q)?.matrix.dot(&x);
            if let NodeKind::Irs(_) = self.kind(q)? {
                let theta = self.irs_phase_vector(q, beams, codebooks)?;
                x.iter_mut().zip(&theta).for_each(|(a, t)| *a *= t);
            }
        }
        Ok(x[0])
    }

    fn check_path(&self, path: &ReflectionPath) -> Result<Vec<NodeId>> {
        let chain = path.node_chain(self.user());
        if path.hops().is_empty() {
            return arg("reflection path must contain at least one IRS");
        }
        for pair in chain.windows(2) {
            if !self.graph.has_edge(pair[0], pair[1]) {
                return arg(format!("path {path} uses missing edge {} -> {}", pair[0], pair[1]));
            }
        }
        Ok(chain)
    }
}

/// Multi-hop channel `h_{0,J+1}(Ω)` with every off-path IRS switched off.
pub fn cascaded_channel(
    channels: &ChannelSet,
    path: &ReflectionPath,
    beams: &BeamAssignment,
    codebooks: &Codebooks,
) -> Result<Complex64> {
    let chain = channels.check_path(path)?;
    channels.chain_response(&chain, beams, codebooks)
}

/// Cascaded path plus every forward-ordered sub-path over the same nodes,
/// including the direct BS-user link: `2^L` terms in total.
pub fn overall_channel(
    channels: &ChannelSet,
    path: &ReflectionPath,
    beams: &BeamAssignment,
    codebooks: &Codebooks,
) -> Result<Complex64> {
    channels.check_path(path)?;
    let hops = path.hops();
    let user = channels.user();
    let mut total = Complex64::new(0.0, 0.0);
    for mask in 0u64..(1u64 << hops.len()) {
        let mut chain = vec![0];
        chain.extend(hops.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &a)| a));
        chain.push(user);
        total += channels.chain_response(&chain, beams, codebooks)?;
    }
    Ok(total)
}

/// Sample mean of `|reference-point channel|²` over `snapshots` fresh
/// small-scale draws of link `i → j`, with the large-scale gain fixed.
pub fn measure_link_gain(channels: &ChannelSet, i: NodeId, j: NodeId, snapshots: usize, seed: u64) -> Result<f64> {
    if snapshots == 0 {
        return arg("measurement needs at least one snapshot");
    }
    let link = channels.link(i, j)?;
    let cfg = channels.config();
    let (los_w, nlos_w) = if link.line_of_sight {
        cfg.rician_weights()
    } else if cfg.los_only {
        (0.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64, j as u64]));
    let amp = link.path_gain.sqrt();
    let sum: f64 = (0..snapshots)
        .map(|_| {
            // The LoS component at the reference elements has unit phase.
            let s = if nlos_w > 0.0 { complex_gaussian(&mut rng) * nlos_w } else { Complex64::new(0.0, 0.0) };
            ((s + los_w) * amp).norm_sqr()
        })
        .sum();
    Ok(sum / snapshots as f64)
}
