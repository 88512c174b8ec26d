//! DFT beam codebooks and 3D passive beam composition.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{arg, Result};
use crate::scene::Scene;

/// A finite set of phase-only beams of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<Vec<Complex64>>,
    entry_length: usize,
}

impl Codebook {
    /// Builds a codebook from explicit entries. All entries must share a
    /// length and be unit-modulus element-wise.
    pub fn from_entries(entries: Vec<Vec<Complex64>>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return arg("codebook needs at least one entry");
        };
        let entry_length = first.len();
        if entry_length == 0 {
            return arg("codebook entries must be nonempty");
        }
        for e in &entries {
            if e.len() != entry_length {
                return arg("codebook entries differ in length");
            }
            if e.iter().any(|c| (c.norm() - 1.0).abs() > 1e-12) {
                return arg("codebook entries must have unit-modulus elements");
            }
        }
        Ok(Codebook { entries, entry_length })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entry_length(&self) -> usize {
        self.entry_length
    }

    pub fn entry(&self, index: usize) -> &[Complex64] {
        &self.entries[index]
    }

    pub fn get(&self, index: usize) -> Option<&[Complex64]> {
        self.entries.get(index).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Complex64]> {
        self.entries.iter().map(Vec::as_slice)
    }
}

/// `size`-beam DFT codebook over `length` elements: entry `k` has element
/// `m` equal to `exp(i·2π·k·m/size)`.
///
/// With `length == 1` every entry is the scalar `1`.
pub fn dft_codebook(length: usize, size: usize) -> Result<Codebook> {
    if length == 0 || size == 0 {
        return arg(format!("DFT codebook needs positive length and size, got {length} and {size}"));
    }
    let entries = (0..size)
        .map(|k| {
            (0..length).map(|m| Complex64::from_polar(1.0, 2.0 * PI * ((k * m) % size) as f64 / size as f64)).collect()
        })
        .collect();
    Ok(Codebook { entries, entry_length: length })
}

/// Kronecker product `horizontal ⊗ vertical`; the horizontal index varies
/// slower.
pub fn compose_3d_beam(horizontal: &[Complex64], vertical: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(horizontal.len() * vertical.len());
    for h in horizontal {
        for v in vertical {
            out.push(h * v);
        }
    }
    out
}

/// Like [`compose_3d_beam`] but checks the factor lengths against an IRS
/// of `m1 × m2` elements.
pub fn compose_for_irs(
    horizontal: &[Complex64],
    vertical: &[Complex64],
    m1: usize,
    m2: usize,
) -> Result<Vec<Complex64>> {
    if horizontal.len() != m1 || vertical.len() != m2 {
        return arg(format!(
            "beam factors of length {}x{} do not fit a {m1}x{m2} IRS",
            horizontal.len(),
            vertical.len()
        ));
    }
    Ok(compose_3d_beam(horizontal, vertical))
}

/// The BS codebook plus per-dimension IRS codebooks for every IRS size in
/// a scene.
#[derive(Debug, Clone)]
pub struct Codebooks {
    pub bs: Codebook,
    pub horizontal_size: usize,
    pub vertical_size: usize,
    horizontal: BTreeMap<usize, Codebook>,
    vertical: BTreeMap<usize, Codebook>,
}

impl Codebooks {
    /// DFT codebooks with `d_b` BS beams and `d_h`/`d_v` IRS beams per
    /// dimension, sized to the scene's arrays.
    pub fn for_scene(scene: &Scene, d_b: usize, d_h: usize, d_v: usize) -> Result<Self> {
        if d_h == 0 || d_v == 0 {
            return arg("IRS codebook sizes must be positive");
        }
        let bs = dft_codebook(scene.bs_antenna_count, d_b)?;
        let mut horizontal = BTreeMap::new();
        let mut vertical = BTreeMap::new();
        for irs in &scene.irs_list {
            if let std::collections::btree_map::Entry::Vacant(e) = horizontal.entry(irs.m1) {
                e.insert(dft_codebook(irs.m1, d_h)?);
            }
            if let std::collections::btree_map::Entry::Vacant(e) = vertical.entry(irs.m2) {
                e.insert(dft_codebook(irs.m2, d_v)?);
            }
        }
        Ok(Codebooks { bs, horizontal_size: d_h, vertical_size: d_v, horizontal, vertical })
    }

    pub fn bs_size(&self) -> usize {
        self.bs.size()
    }

    /// `D_I = D_I^(1) · D_I^(2)`.
    pub fn irs_size(&self) -> usize {
        self.horizontal_size * self.vertical_size
    }

    pub fn horizontal(&self, m1: usize) -> Result<&Codebook> {
        match self.horizontal.get(&m1) {
            Some(c) => Ok(c),
            None => arg(format!("no horizontal codebook for {m1} elements")),
        }
    }

    pub fn vertical(&self, m2: usize) -> Result<&Codebook> {
        match self.vertical.get(&m2) {
            Some(c) => Ok(c),
            None => arg(format!("no vertical codebook for {m2} elements")),
        }
    }

    /// Composed passive beam for an `m1 × m2` IRS.
    pub fn irs_beam(&self, m1: usize, m2: usize, h_index: usize, v_index: usize) -> Result<Vec<Complex64>> {
        let h = self.horizontal(m1)?;
        let v = self.vertical(m2)?;
        match (h.get(h_index), v.get(v_index)) {
            (Some(he), Some(ve)) => Ok(compose_3d_beam(he, ve)),
            _ => arg(format!("IRS beam ({h_index},{v_index}) outside codebook {}x{}", h.size(), v.size())),
        }
    }
}
