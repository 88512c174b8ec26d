//! Deployment geometry and the directed LoS graph.
//!
//! A [`Scene`] holds every physical site: the BS, the IRSs and one or more
//! candidate user locations. Graph-level code always works on a single user
//! location, selected through [`Scene::with_user`], so that vertex `J + 1`
//! unambiguously names the user.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::Deserialize;

use crate::error::{arg, Error, Result};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Vec3([b * z - c * y, c * x - a * z, a * y - b * x])
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// One reflecting surface. `position` is the reference element, which is
/// also where the IRS controller sits.
#[derive(Debug, Clone, PartialEq)]
pub struct IrsDescriptor {
    pub position: Vec3,
    /// Outward unit normal pointing into the reflection half-space.
    pub pointing: Vec3,
    /// Horizontal element count.
    pub m1: usize,
    /// Vertical element count.
    pub m2: usize,
    pub element_spacing: f64,
}

impl IrsDescriptor {
    pub fn element_count(&self) -> usize {
        self.m1 * self.m2
    }

    /// Unit vectors spanning the surface: (horizontal, vertical).
    ///
    /// The vertical axis is the projection of +z onto the surface; for a
    /// surface lying flat (pointing along z) the x axis is used instead.
    pub fn surface_axes(&self) -> (Vec3, Vec3) {
        let up = Vec3::new(0.0, 0.0, 1.0);
        let horizontal = up
            .cross(self.pointing)
            .normalized()
            .unwrap_or_else(|| Vec3::new(0.0, 1.0, 0.0).cross(self.pointing).normalized().unwrap());
        let vertical = self.pointing.cross(horizontal);
        (horizontal, vertical)
    }

    /// Offset of element `(h, v)` from the reference element. Elements are
    /// stored row-major with the horizontal index varying slower, which
    /// matches `horizontal ⊗ vertical` beam composition.
    pub fn element_offsets(&self) -> Vec<Vec3> {
        let (h_axis, v_axis) = self.surface_axes();
        let mut out = Vec::with_capacity(self.element_count());
        for h in 0..self.m1 {
            for v in 0..self.m2 {
                out.push(h_axis * (h as f64 * self.element_spacing) + v_axis * (v as f64 * self.element_spacing));
            }
        }
        out
    }
}

/// Symmetric LoS availability table over sites (BS, IRSs, user locations).
#[derive(Debug, Clone, PartialEq)]
pub struct Blockage {
    size: usize,
    clear: Vec<bool>,
}

impl Blockage {
    /// All pairs unobstructed.
    pub fn all_clear(site_count: usize) -> Self {
        Blockage { size: site_count, clear: vec![true; site_count * site_count] }
    }

    pub fn site_count(&self) -> usize {
        self.size
    }

    pub fn set_blocked(&mut self, a: usize, b: usize, blocked: bool) {
        self.clear[a * self.size + b] = !blocked;
        self.clear[b * self.size + a] = !blocked;
    }

    pub fn is_clear(&self, a: usize, b: usize) -> bool {
        self.clear[a * self.size + b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bs_position: Vec3,
    pub bs_antenna_count: usize,
    /// Unit vector along the BS uniform linear array.
    pub bs_array_axis: Vec3,
    pub bs_element_spacing: f64,
    pub irs_list: Vec<IrsDescriptor>,
    pub user_positions: Vec<Vec3>,
    /// Site order: BS, IRS 1..=J, user locations 1..=U.
    pub blockage: Blockage,
}

/// What a graph vertex is, given a selected user location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Bs,
    /// Index into `Scene::irs_list`.
    Irs(usize),
    User,
}

impl Scene {
    pub fn new(
        bs_position: Vec3,
        bs_antenna_count: usize,
        bs_array_axis: Vec3,
        bs_element_spacing: f64,
        irs_list: Vec<IrsDescriptor>,
        user_positions: Vec<Vec3>,
        blockage: Option<Blockage>,
    ) -> Result<Self> {
        let sites = 1 + irs_list.len() + user_positions.len();
        let blockage = blockage.unwrap_or_else(|| Blockage::all_clear(sites));
        let scene = Scene {
            bs_position,
            bs_antenna_count,
            bs_array_axis,
            bs_element_spacing,
            irs_list,
            user_positions,
            blockage,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_antenna_count == 0 {
            return arg("BS antenna count must be positive");
        }
        if !self.bs_position.is_finite() || !self.bs_array_axis.is_finite() {
            return arg("BS position and axis must be finite");
        }
        if (self.bs_array_axis.norm() - 1.0).abs() > 1e-12 {
            return arg("BS array axis must be a unit vector");
        }
        if !(self.bs_element_spacing.is_finite() && self.bs_element_spacing > 0.0) {
            return arg("BS element spacing must be positive");
        }
        for (k, irs) in self.irs_list.iter().enumerate() {
            if !irs.position.is_finite() || !irs.pointing.is_finite() {
                return arg(format!("IRS {} has a non-finite position or pointing", k + 1));
            }
            if (irs.pointing.norm() - 1.0).abs() > 1e-12 {
                return arg(format!("IRS {} pointing must be a unit vector", k + 1));
            }
            if irs.m1 == 0 || irs.m2 == 0 {
                return arg(format!("IRS {} must have positive m1 and m2", k + 1));
            }
            if !(irs.element_spacing.is_finite() && irs.element_spacing > 0.0) {
                return arg(format!("IRS {} element spacing must be positive", k + 1));
            }
        }
        if self.user_positions.iter().any(|p| !p.is_finite()) {
            return arg("user positions must be finite");
        }
        let sites = 1 + self.irs_list.len() + self.user_positions.len();
        if self.blockage.site_count() != sites {
            return arg(format!("blockage table covers {} sites, scene has {}", self.blockage.site_count(), sites));
        }
        for a in 0..sites {
            for b in 0..sites {
                if self.blockage.is_clear(a, b) != self.blockage.is_clear(b, a) {
                    return arg("blockage table must be symmetric");
                }
            }
        }
        Ok(())
    }

    /// Number of IRSs, `J`.
    pub fn irs_count(&self) -> usize {
        self.irs_list.len()
    }

    /// View of the scene with user location `user_index` (0-based) acting
    /// as vertex `J + 1`.
    pub fn with_user(&self, user_index: usize) -> Result<Placement<'_>> {
        if user_index >= self.user_positions.len() {
            return arg(format!(
                "user index {} out of range ({} user locations)",
                user_index,
                self.user_positions.len()
            ));
        }
        Ok(Placement { scene: self, user_index })
    }

    /// Copy of the scene with every IRS resized to `m0 × m0` elements.
    pub fn with_square_irs(&self, m0: usize) -> Scene {
        let mut s = self.clone();
        for irs in &mut s.irs_list {
            irs.m1 = m0;
            irs.m2 = m0;
        }
        s
    }

    /// Name of a site in scene-file notation (`bs`, `irs3`, `user1`).
    pub fn site_name(&self, site: usize) -> String {
        let j = self.irs_count();
        match site {
            0 => "bs".to_string(),
            s if s <= j => format!("irs{s}"),
            s => format!("user{}", s - j),
        }
    }

    fn site_index(&self, name: &str) -> Result<usize> {
        let j = self.irs_count();
        let parse =
            |rest: &str, max: usize| -> Option<usize> { rest.parse::<usize>().ok().filter(|k| *k >= 1 && *k <= max) };
        if name == "bs" {
            Ok(0)
        } else if let Some(k) = name.strip_prefix("irs").and_then(|r| parse(r, j)) {
            Ok(k)
        } else if let Some(k) = name.strip_prefix("user").and_then(|r| parse(r, self.user_positions.len())) {
            Ok(j + k)
        } else {
            Err(Error::Parse(format!("unknown site name '{name}'")))
        }
    }

    /// Parses a scene description (TOML). Unknown keys are rejected;
    /// pointing and axis vectors are normalized.
    pub fn from_toml_str(text: &str) -> Result<Scene> {
        let file: SceneFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let unit = |v: [f64; 3], what: &str| {
            Vec3(v).normalized().ok_or_else(|| Error::Parse(format!("{what} must be a nonzero finite vector")))
        };
        let irs_list = file
            .irs
            .iter()
            .enumerate()
            .map(|(k, i)| {
                Ok(IrsDescriptor {
                    position: Vec3(i.position),
                    pointing: unit(i.pointing, &format!("irs{} pointing", k + 1))?,
                    m1: i.m1,
                    m2: i.m2,
                    element_spacing: i.spacing,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let users: Vec<Vec3> = file.user.iter().map(|u| Vec3(u.position)).collect();
        let mut scene = Scene::new(
            Vec3(file.bs.position),
            file.bs.antennas,
            unit(file.bs.axis, "bs axis")?,
            file.bs.spacing,
            irs_list,
            users,
            None,
        )?;
        if let Some(b) = file.blockage {
            for [a, c] in &b.blocked {
                let (ia, ic) = (scene.site_index(a)?, scene.site_index(c)?);
                if ia == ic {
                    return Err(Error::Parse(format!("blocked pair names '{a}' twice")));
                }
                scene.blockage.set_blocked(ia, ic, true);
            }
        }
        Ok(scene)
    }

    /// Serializes to the scene-file format accepted by [`Scene::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        let v = |p: Vec3| format!("[{:?}, {:?}, {:?}]", p.0[0], p.0[1], p.0[2]);
        let mut s = String::new();
        s.push_str("[bs]\n");
        s.push_str(&format!("position = {}\n", v(self.bs_position)));
        s.push_str(&format!("antennas = {}\n", self.bs_antenna_count));
        s.push_str(&format!("axis = {}\n", v(self.bs_array_axis)));
        s.push_str(&format!("spacing = {:?}\n", self.bs_element_spacing));
        for irs in &self.irs_list {
            s.push_str("\n[[irs]]\n");
            s.push_str(&format!("position = {}\n", v(irs.position)));
            s.push_str(&format!("pointing = {}\n", v(irs.pointing)));
            s.push_str(&format!("m1 = {}\nm2 = {}\n", irs.m1, irs.m2));
            s.push_str(&format!("spacing = {:?}\n", irs.element_spacing));
        }
        for u in &self.user_positions {
            s.push_str("\n[[user]]\n");
            s.push_str(&format!("position = {}\n", v(*u)));
        }
        let sites = self.blockage.site_count();
        let blocked: Vec<String> = (0..sites)
            .flat_map(|a| ((a + 1)..sites).map(move |b| (a, b)))
            .filter(|&(a, b)| !self.blockage.is_clear(a, b))
            .map(|(a, b)| format!("[\"{}\", \"{}\"]", self.site_name(a), self.site_name(b)))
            .collect();
        s.push_str("\n[blockage]\n");
        s.push_str(&format!("blocked = [{}]\n", blocked.join(", ")));
        s
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    bs: BsEntry,
    #[serde(default)]
    irs: Vec<IrsEntry>,
    #[serde(default)]
    user: Vec<UserEntry>,
    blockage: Option<BlockageEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BsEntry {
    position: [f64; 3],
    antennas: usize,
    axis: [f64; 3],
    spacing: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IrsEntry {
    position: [f64; 3],
    pointing: [f64; 3],
    m1: usize,
    m2: usize,
    spacing: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UserEntry {
    position: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockageEntry {
    #[serde(default)]
    blocked: Vec<[String; 2]>,
}

/// A [`Scene`] with one user location selected, addressed by graph vertex ids.
#[derive(Debug, Clone, Copy)]
pub struct Placement<'a> {
    pub scene: &'a Scene,
    pub user_index: usize,
}

impl<'a> Placement<'a> {
    pub fn irs_count(&self) -> usize {
        self.scene.irs_count()
    }

    pub fn user(&self) -> NodeId {
        self.irs_count() + 1
    }

    pub fn node_count(&self) -> usize {
        self.irs_count() + 2
    }

    pub fn kind(&self, node: NodeId) -> Result<NodeKind> {
        let j = self.irs_count();
        match node {
            0 => Ok(NodeKind::Bs),
            n if n <= j => Ok(NodeKind::Irs(n - 1)),
            n if n == j + 1 => Ok(NodeKind::User),
            n => arg(format!("node {n} out of range 0..={}", j + 1)),
        }
    }

    pub fn position(&self, node: NodeId) -> Result<Vec3> {
        Ok(match self.kind(node)? {
            NodeKind::Bs => self.scene.bs_position,
            NodeKind::Irs(k) => self.scene.irs_list[k].position,
            NodeKind::User => self.scene.user_positions[self.user_index],
        })
    }

    pub fn irs(&self, node: NodeId) -> Result<&'a IrsDescriptor> {
        match self.kind(node)? {
            NodeKind::Irs(k) => Ok(&self.scene.irs_list[k]),
            _ => arg(format!("node {node} is not an IRS")),
        }
    }

    /// Number of antenna elements at a node (N, M or 1).
    pub fn element_count(&self, node: NodeId) -> Result<usize> {
        Ok(match self.kind(node)? {
            NodeKind::Bs => self.scene.bs_antenna_count,
            NodeKind::Irs(k) => self.scene.irs_list[k].element_count(),
            NodeKind::User => 1,
        })
    }

    /// Element offsets relative to the node's reference point.
    pub fn element_offsets(&self, node: NodeId) -> Result<Vec<Vec3>> {
        Ok(match self.kind(node)? {
            NodeKind::Bs => (0..self.scene.bs_antenna_count)
                .map(|n| self.scene.bs_array_axis * (n as f64 * self.scene.bs_element_spacing))
                .collect(),
            NodeKind::Irs(k) => self.scene.irs_list[k].element_offsets(),
            NodeKind::User => vec![Vec3::default()],
        })
    }

    /// Euclidean distance between reference points.
    pub fn distance(&self, i: NodeId, j: NodeId) -> Result<f64> {
        Ok(self.position(i)?.distance(self.position(j)?))
    }

    fn site(&self, node: NodeId) -> usize {
        if node == self.user() {
            self.irs_count() + 1 + self.user_index
        } else {
            node
        }
    }

    /// LoS availability from the blockage table.
    pub fn los_clear(&self, i: NodeId, j: NodeId) -> Result<bool> {
        self.kind(i)?;
        self.kind(j)?;
        Ok(self.scene.blockage.is_clear(self.site(i), self.site(j)))
    }

    /// True iff `other` lies strictly inside the front half-space of IRS
    /// `irs_node`.
    pub fn half_space_visible(&self, irs_node: NodeId, other: NodeId) -> Result<bool> {
        let irs = self.irs(irs_node)?;
        if other == irs_node {
            return arg("half-space test needs two distinct nodes");
        }
        let to_other = self.position(other)? - irs.position;
        let Some(dir) = to_other.normalized() else {
            return Ok(false);
        };
        Ok(irs.pointing.dot(dir) > 0.0)
    }

    /// Whether an IRS can effectively reflect between `i` and `j`.
    pub fn effective_reflection(&self, i: NodeId, j: NodeId) -> Result<bool> {
        if i == j {
            return arg("effective reflection needs two distinct nodes");
        }
        match (self.kind(i)?, self.kind(j)?) {
            (NodeKind::Irs(_), NodeKind::Irs(_)) => {
                Ok(self.half_space_visible(i, j)? && self.half_space_visible(j, i)?)
            }
            (NodeKind::Irs(_), _) => self.half_space_visible(i, j),
            (_, NodeKind::Irs(_)) => self.half_space_visible(j, i),
            _ => arg(format!("nodes {i} and {j} involve no IRS")),
        }
    }

    /// Builds the directed LoS graph for this user location.
    pub fn los_graph(&self) -> LoSGraph {
        let user = self.user();
        let mut edges = BTreeSet::new();
        for i in 0..user {
            for j in 1..=user {
                if i == j {
                    continue;
                }
                if self.edge_conditions_hold(i, j) {
                    edges.insert((i, j));
                }
            }
        }
        LoSGraph::from_edges_unchecked(self.irs_count(), self.user_index, edges)
    }

    fn edge_conditions_hold(&self, i: NodeId, j: NodeId) -> bool {
        let user = self.user();
        let Ok(true) = self.los_clear(i, j) else { return false };
        // BS to user: no reflection involved, only LoS matters.
        let reflect = self.effective_reflection(i, j).unwrap_or(true);
        if !reflect {
            return false;
        }
        if j == user {
            return true;
        }
        let (Ok(d0i), Ok(d0j)) = (self.distance(0, i), self.distance(0, j)) else { return false };
        d0j > d0i
    }
}

/// Builds the LoS graph `G_L` for user location `user_index`.
pub fn build_los_graph(scene: &Scene, user_index: usize) -> Result<LoSGraph> {
    Ok(scene.with_user(user_index)?.los_graph())
}

/// Directed LoS graph over vertices `0..=J+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoSGraph {
    irs_count: usize,
    user_index: usize,
    edges: BTreeSet<(NodeId, NodeId)>,
    predecessors: Vec<Vec<NodeId>>,
    successors: Vec<Vec<NodeId>>,
}

impl LoSGraph {
    /// Builds a graph from an explicit edge list, checking the structural
    /// invariants (no self-loops, nothing into the BS or out of the user,
    /// acyclic).
    pub fn from_edges(
        irs_count: usize,
        user_index: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let user = irs_count + 1;
        let edges: BTreeSet<_> = edges.into_iter().collect();
        for &(i, j) in &edges {
            if i > user || j > user {
                return arg(format!("edge ({i},{j}) references a node outside 0..={user}"));
            }
            if i == j {
                return arg(format!("self-loop at node {i}"));
            }
            if j == 0 {
                return arg(format!("edge ({i},0) points into the BS"));
            }
            if i == user {
                return arg(format!("edge ({user},{j}) leaves the user"));
            }
        }
        let g = Self::from_edges_unchecked(irs_count, user_index, edges);
        if g.topological_order().is_none() {
            return arg("edge set contains a cycle");
        }
        Ok(g)
    }

    fn from_edges_unchecked(irs_count: usize, user_index: usize, edges: BTreeSet<(NodeId, NodeId)>) -> Self {
        let n = irs_count + 2;
        let mut predecessors = vec![Vec::new(); n];
        let mut successors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            successors[i].push(j);
            predecessors[j].push(i);
        }
        LoSGraph { irs_count, user_index, edges, predecessors, successors }
    }

    pub fn irs_count(&self) -> usize {
        self.irs_count
    }

    pub fn vertex_count(&self) -> usize {
        self.irs_count + 2
    }

    /// Which scene user location this graph was built for.
    pub fn user_index(&self) -> usize {
        self.user_index
    }

    /// Vertex id of the user, `J + 1`.
    pub fn user(&self) -> NodeId {
        self.irs_count + 1
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        self.edges.contains(&(i, j))
    }

    /// `N_j^(P)`, ascending.
    pub fn predecessors(&self, j: NodeId) -> &[NodeId] {
        self.predecessors.get(j).map_or(&[], Vec::as_slice)
    }

    /// `N_j^(N)`, ascending.
    pub fn successors(&self, j: NodeId) -> &[NodeId] {
        self.successors.get(j).map_or(&[], Vec::as_slice)
    }

    /// `N_0`.
    pub fn bs_successors(&self) -> &[NodeId] {
        self.successors(0)
    }

    /// IRSs with an edge to the user.
    pub fn user_neighbors(&self) -> &[NodeId] {
        self.predecessors(self.user())
    }

    /// Kahn topological order of all vertices, smallest ready id first, or
    /// `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let n = self.vertex_count();
        let mut indegree: Vec<usize> = (0..n).map(|v| self.predecessors[v].len()).collect();
        let mut ready: VecDeque<NodeId> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_front() {
            order.push(v);
            for &s in &self.successors[v] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push_back(s);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Adjacency map, mostly for display.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        (0..self.vertex_count()).map(|v| (v, self.successors[v].clone())).collect()
    }
}

impl fmt::Display for LoSGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, j) in self.edges() {
            writeln!(f, "{i} -> {j}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn irs(position: Vec3, pointing: Vec3) -> IrsDescriptor {
        IrsDescriptor { position, pointing, m1: 2, m2: 2, element_spacing: 0.015 }
    }

    fn corridor(users: Vec<Vec3>) -> Scene {
        Scene::new(
            Vec3::new(0.0, 3.0, 2.0),
            4,
            Vec3::new(0.0, 1.0, 0.0),
            0.03,
            vec![
                irs(Vec3::new(4.0, 6.0, 2.0), Vec3::new(0.0, -1.0, 0.0)),
                irs(Vec3::new(8.0, 0.0, 2.0), Vec3::new(0.0, 1.0, 0.0)),
            ],
            users,
            None,
        )
        .unwrap()
    }

    #[test]
    fn half_space_front_back_and_plane() {
        let scene = Scene::new(
            Vec3::default(),
            1,
            Vec3::new(1.0, 0.0, 0.0),
            0.03,
            vec![irs(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0))],
            vec![Vec3::new(0.0, 5.0, 0.0), Vec3::new(0.0, -5.0, 0.0), Vec3::new(5.0, 0.0, 0.0)],
            None,
        );
        // BS coincides with the IRS here, so only use user nodes.
        let scene = scene.unwrap();
        assert!(scene.with_user(0).unwrap().half_space_visible(1, 2).unwrap());
        assert!(!scene.with_user(1).unwrap().half_space_visible(1, 2).unwrap());
        assert!(!scene.with_user(2).unwrap().half_space_visible(1, 2).unwrap());
    }

    #[test]
    fn half_space_rejects_bad_nodes() {
        let scene = corridor(vec![Vec3::new(10.0, 3.0, 1.0)]);
        let p = scene.with_user(0).unwrap();
        assert!(p.half_space_visible(0, 1).is_err());
        assert!(p.half_space_visible(1, 1).is_err());
        assert!(p.half_space_visible(1, 9).is_err());
    }

    #[test]
    fn effective_reflection_cases() {
        let scene = corridor(vec![Vec3::new(10.0, 3.0, 1.0)]);
        let p = scene.with_user(0).unwrap();
        // Opposite walls face each other.
        assert!(p.effective_reflection(1, 2).unwrap());
        assert!(p.effective_reflection(0, 1).unwrap());
        assert!(p.effective_reflection(2, 3).unwrap());
        assert!(p.effective_reflection(0, 3).is_err());

        // Back-to-back surfaces cannot reflect successively.
        let b2b = Scene::new(
            Vec3::new(-3.0, 0.0, 0.0),
            1,
            Vec3::new(0.0, 1.0, 0.0),
            0.03,
            vec![
                irs(Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
                irs(Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, -1.0, 0.0)),
            ],
            vec![Vec3::new(5.0, 0.0, 0.0)],
            None,
        )
        .unwrap();
        assert!(!b2b.with_user(0).unwrap().effective_reflection(1, 2).unwrap());
    }

    #[test]
    fn corridor_graph() {
        let mut scene = corridor(vec![Vec3::new(12.0, 3.0, 1.0)]);
        scene.blockage.set_blocked(0, 3, true);
        let g = build_los_graph(&scene, 0).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(g.predecessors(3), &[1, 2]);
        assert_eq!(g.bs_successors(), &[1, 2]);
        assert!(g.topological_order().is_some());
    }

    #[test]
    fn no_irs_blocked_direct_link_is_empty() {
        let mut scene = Scene::new(
            Vec3::default(),
            2,
            Vec3::new(0.0, 1.0, 0.0),
            0.03,
            vec![],
            vec![Vec3::new(3.0, 0.0, 0.0)],
            None,
        )
        .unwrap();
        scene.blockage.set_blocked(0, 1, true);
        assert_eq!(build_los_graph(&scene, 0).unwrap().edge_count(), 0);
        scene.blockage.set_blocked(0, 1, false);
        assert_eq!(build_los_graph(&scene, 0).unwrap().edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn equal_bs_distance_yields_no_edge() {
        let scene = Scene::new(
            Vec3::new(0.0, 0.0, 0.0),
            1,
            Vec3::new(0.0, 1.0, 0.0),
            0.03,
            vec![
                irs(Vec3::new(3.0, 4.0, 0.0), Vec3::new(0.0, -1.0, 0.0)),
                irs(Vec3::new(3.0, -4.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            ],
            vec![Vec3::new(9.0, 0.0, 0.0)],
            None,
        )
        .unwrap();
        let g = build_los_graph(&scene, 0).unwrap();
        assert!(!g.has_edge(1, 2) && !g.has_edge(2, 1));
    }

    #[test]
    fn from_edges_rejects_bad_structure() {
        assert!(LoSGraph::from_edges(2, 0, [(1, 1)]).is_err());
        assert!(LoSGraph::from_edges(2, 0, [(1, 0)]).is_err());
        assert!(LoSGraph::from_edges(2, 0, [(3, 1)]).is_err());
        assert!(LoSGraph::from_edges(2, 0, [(1, 2), (2, 1)]).is_err());
        assert!(LoSGraph::from_edges(2, 0, [(0, 1), (1, 2), (2, 3)]).is_ok());
    }

    #[test]
    fn scene_file_round_trip_and_unknown_keys() {
        let mut scene = corridor(vec![Vec3::new(12.0, 3.0, 1.0), Vec3::new(6.0, 3.0, 1.0)]);
        scene.blockage.set_blocked(0, 3, true);
        scene.blockage.set_blocked(2, 4, true);
        let text = scene.to_toml_string();
        assert_eq!(Scene::from_toml_str(&text).unwrap(), scene);

        let bad = text.replace("antennas = 4", "antennas = 4\ncolor = \"red\"");
        assert!(matches!(Scene::from_toml_str(&bad), Err(Error::Parse(_))));
        let bad_site = text.replace("\"irs2\"", "\"irs7\"");
        assert!(Scene::from_toml_str(&bad_site).is_err());
    }

    #[test]
    fn rejects_non_unit_pointing() {
        let r = Scene::new(
            Vec3::default(),
            1,
            Vec3::new(0.0, 1.0, 0.0),
            0.03,
            vec![irs(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0))],
            vec![],
            None,
        );
        assert!(r.is_err());
    }
}
