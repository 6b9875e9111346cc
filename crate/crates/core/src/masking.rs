//! Masked channel modeling: four mask generators sharing one exact budget.
//!
//! Every generator first draws its structured pattern, then
//! [`enforce_exact_ratio`] trims or pads uniformly at random until exactly
//! `⌊ρ·L⌋` tokens are masked. Masks address the token grid; real and
//! imaginary parts of a token are always masked together.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Rect,
    Tube,
    Comb,
    Random,
}

impl MaskMode {
    pub const ALL: [MaskMode; 4] = [MaskMode::Rect, MaskMode::Tube, MaskMode::Comb, MaskMode::Random];

    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Rect => "rect",
            MaskMode::Tube => "tube",
            MaskMode::Comb => "comb",
            MaskMode::Random => "random",
        }
    }
}

/// Token grid shape (frames, angle patches, delay patches).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl GridDims {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        GridDims { t, h, w }
    }

    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn per_frame(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn index(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.h + h) * self.w + w
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let w = i % self.w;
        let h = (i / self.w) % self.h;
        (i / (self.w * self.h), h, w)
    }
}

/// A rectangle stamped into frame `t`; `group` ties together the frames of
/// one tube.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskBlock {
    pub group: usize,
    pub t: usize,
    pub h0: usize,
    pub w0: usize,
    pub kh: usize,
    pub kw: usize,
}

impl MaskBlock {
    pub fn contains(&self, t: usize, h: usize, w: usize) -> bool {
        t == self.t && (self.h0..self.h0 + self.kh).contains(&h) && (self.w0..self.w0 + self.kw).contains(&w)
    }
}

/// Pilot lattice: visible iff `t ≡ ot (mod st)` and `w ≡ ow (mod sw)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombLattice {
    pub st: usize,
    pub sw: usize,
    pub ot: usize,
    pub ow: usize,
}

impl CombLattice {
    pub fn visible(&self, t: usize, w: usize) -> bool {
        t % self.st == self.ot && w % self.sw == self.ow
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskGrid {
    pub dims: GridDims,
    /// `true` = masked, indexed by [`GridDims::index`].
    pub bits: Vec<bool>,
    pub mode: MaskMode,
    pub budget: usize,
    /// Structure drawn before budget enforcement (rect and tube modes).
    pub blocks: Vec<MaskBlock>,
    /// Lattice drawn before budget enforcement (comb mode).
    pub lattice: Option<CombLattice>,
}

impl MaskGrid {
    pub fn empty(dims: GridDims, mode: MaskMode) -> Self {
        MaskGrid {
            dims,
            bits: vec![false; dims.len()],
            mode,
            budget: 0,
            blocks: Vec::new(),
            lattice: None,
        }
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_masked(&self, t: usize, h: usize, w: usize) -> bool {
        self.bits[self.dims.index(t, h, w)]
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    fn stamp(&mut self, b: MaskBlock) {
        for h in b.h0..b.h0 + b.kh {
            for w in b.w0..b.w0 + b.kw {
                let i = self.dims.index(b.t, h, w);
                self.bits[i] = true;
            }
        }
        self.blocks.push(b);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    pub rho_start: f64,
    pub rho_end: f64,
    pub ramp_fraction: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            rho_start: 0.15,
            rho_end: 0.60,
            ramp_fraction: 0.5,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.rho_start && self.rho_start <= self.rho_end && self.rho_end <= 1.0) {
            return Err(Error::invalid("curriculum needs 0 <= rho_start <= rho_end <= 1"));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::invalid("ramp_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    /// Inclusive angle-extent range of rect blocks.
    pub rect_kh: [usize; 2],
    /// Inclusive delay-extent range of rect blocks.
    pub rect_kw: [usize; 2],
    /// Tube cross-section (angle, delay).
    pub tube_size: [usize; 2],
    /// Max per-frame drift of the tube origin (angle, delay).
    pub tube_drift: [usize; 2],
    pub comb_strides_t: Vec<usize>,
    pub comb_strides_w: Vec<usize>,
    /// Auto-mixture weights for rect, tube, comb, random.
    pub mix_weights: [f64; 4],
    pub curriculum: CurriculumSchedule,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            rect_kh: [4, 12],
            rect_kw: [1, 4],
            tube_size: [2, 2],
            tube_drift: [1, 1],
            comb_strides_t: vec![2, 4],
            comb_strides_w: vec![2, 4],
            mix_weights: [0.3, 0.3, 0.3, 0.1],
            curriculum: CurriculumSchedule::default(),
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(&self.mix_weights)?;
        self.curriculum.validate()?;
        if self.rect_kh[0] == 0 || self.rect_kw[0] == 0 || self.rect_kh[0] > self.rect_kh[1] || self.rect_kw[0] > self.rect_kw[1] {
            return Err(Error::invalid("rect block ranges must be non-empty and >= 1"));
        }
        if self.tube_size.contains(&0) {
            return Err(Error::invalid("tube size must be >= 1"));
        }
        if self.comb_strides_t.is_empty() || self.comb_strides_w.is_empty() || self.comb_strides_t.contains(&0) || self.comb_strides_w.contains(&0) {
            return Err(Error::invalid("comb strides must be non-empty and >= 1"));
        }
        Ok(())
    }
}

/// Number of masked tokens, `⌊ρ·L⌋`.
pub fn mask_budget(rho: f64, len: usize) -> usize {
    (rho * len as f64).floor() as usize
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("mask ratio {rho} outside (0, 1)")))
    }
}

/// Trim or pad uniformly at random so that exactly `k` tokens are masked.
pub fn enforce_exact_ratio(mut mask: MaskGrid, k: usize, rng: &mut Rng) -> Result<MaskGrid> {
    let len = mask.bits.len();
    if k > len {
        return Err(Error::invalid(format!("budget {k} exceeds {len} tokens")));
    }
    let masked = mask.popcount();
    if masked > k {
        let on = mask.masked_indices();
        for j in index::sample(rng, on.len(), masked - k) {
            mask.bits[on[j]] = false;
        }
    } else if masked < k {
        let off: Vec<usize> = (0..len).filter(|&i| !mask.bits[i]).collect();
        for j in index::sample(rng, off.len(), k - masked) {
            mask.bits[off[j]] = true;
        }
    }
    mask.budget = k;
    Ok(mask)
}

/// Stamp a `kh × kw` rectangle at `(h0, w0)` of frame `t`.
pub fn rect_block(dims: GridDims, t: usize, h0: usize, w0: usize, kh: usize, kw: usize) -> Result<MaskGrid> {
    if t >= dims.t || h0 + kh > dims.h || w0 + kw > dims.w {
        return Err(Error::invalid("block outside grid"));
    }
    let mut m = MaskGrid::empty(dims, MaskMode::Rect);
    m.stamp(MaskBlock {
        group: 0,
        t,
        h0,
        w0,
        kh,
        kw,
    });
    Ok(m)
}

fn draw_len(rng: &mut Rng, range: [usize; 2], cap: usize) -> usize {
    rng.random_range(range[0]..=range[1]).min(cap).max(1)
}

/// Frame-local anisotropic rectangles, narrower in delay than in angle.
pub fn mask_rect(dims: GridDims, rho: f64, rng: &mut Rng, cfg: &MaskConfig) -> Result<MaskGrid> {
    check_rho(rho)?;
    let k = mask_budget(rho, dims.len());
    let mut m = MaskGrid::empty(dims, MaskMode::Rect);
    let mut covered = 0;
    let mut tries = 0;
    while covered < k && tries < 64 * dims.len() {
        tries += 1;
        let t = rng.random_range(0..dims.t);
        let kh = draw_len(rng, cfg.rect_kh, dims.h);
        let mut kw = draw_len(rng, cfg.rect_kw, dims.w);
        if kw >= kh && kh > 1 {
            kw = kh - 1;
        }
        let h0 = rng.random_range(0..=dims.h - kh);
        let w0 = rng.random_range(0..=dims.w - kw);
        let group = m.blocks.len();
        m.stamp(MaskBlock { group, t, h0, w0, kh, kw });
        covered = m.popcount();
    }
    enforce_exact_ratio(m, k, rng)
}

/// Thin blocks that persist over consecutive frames with bounded drift.
pub fn mask_tube(dims: GridDims, rho: f64, rng: &mut Rng, cfg: &MaskConfig) -> Result<MaskGrid> {
    check_rho(rho)?;
    let k = mask_budget(rho, dims.len());
    let kh = cfg.tube_size[0].min(dims.h);
    let kw = cfg.tube_size[1].min(dims.w);
    let [dh, dw] = cfg.tube_drift;
    let mut m = MaskGrid::empty(dims, MaskMode::Tube);
    let mut group = 0;
    let mut tries = 0;
    while m.popcount() < k && tries < 64 * dims.len() {
        tries += 1;
        let t0 = rng.random_range(0..dims.t);
        let len = rng.random_range(1..=dims.t - t0);
        let mut h = rng.random_range(0..=dims.h - kh) as i64;
        let mut w = rng.random_range(0..=dims.w - kw) as i64;
        for t in t0..t0 + len {
            if t > t0 {
                h = (h + rng.random_range(-(dh as i64)..=dh as i64)).clamp(0, (dims.h - kh) as i64);
                w = (w + rng.random_range(-(dw as i64)..=dw as i64)).clamp(0, (dims.w - kw) as i64);
            }
            m.stamp(MaskBlock {
                group,
                t,
                h0: h as usize,
                w0: w as usize,
                kh,
                kw,
            });
        }
        group += 1;
    }
    enforce_exact_ratio(m, k, rng)
}

/// Pilot-comb pattern for an explicit lattice, before budget enforcement.
pub fn comb_lattice(dims: GridDims, lattice: CombLattice) -> MaskGrid {
    let mut m = MaskGrid::empty(dims, MaskMode::Comb);
    for t in 0..dims.t {
        for h in 0..dims.h {
            for w in 0..dims.w {
                m.bits[dims.index(t, h, w)] = !lattice.visible(t, w);
            }
        }
    }
    m.lattice = Some(lattice);
    m
}

/// Comb with a given lattice, then exact budget.
pub fn mask_comb_with(dims: GridDims, rho: f64, lattice: CombLattice, rng: &mut Rng) -> Result<MaskGrid> {
    check_rho(rho)?;
    if lattice.st == 0 || lattice.sw == 0 || lattice.ot >= lattice.st || lattice.ow >= lattice.sw {
        return Err(Error::invalid("comb strides must be >= 1 with offsets below them"));
    }
    enforce_exact_ratio(comb_lattice(dims, lattice), mask_budget(rho, dims.len()), rng)
}

/// Pilot comb over (t, w), shared across all angles.
///
/// Strides come from the configured sets, preferring lattices whose masked
/// fraction already reaches `rho` so that enforcement only has to trim.
pub fn mask_comb(dims: GridDims, rho: f64, rng: &mut Rng, cfg: &MaskConfig) -> Result<MaskGrid> {
    check_rho(rho)?;
    let mut pairs = Vec::new();
    for &st in &cfg.comb_strides_t {
        for &sw in &cfg.comb_strides_w {
            pairs.push((st, sw));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no comb strides configured"));
    }
    let feasible: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(st, sw)| 1.0 - 1.0 / (st * sw) as f64 >= rho)
        .collect();
    let (st, sw) = if feasible.is_empty() {
        *pairs.iter().max_by_key(|(st, sw)| st * sw).unwrap()
    } else {
        feasible[rng.random_range(0..feasible.len())]
    };
    let lattice = CombLattice {
        st,
        sw,
        ot: rng.random_range(0..st.min(dims.t)),
        ow: rng.random_range(0..sw.min(dims.w)),
    };
    mask_comb_with(dims, rho, lattice, rng)
}

/// Uniform `K`-subset without replacement.
pub fn mask_random(dims: GridDims, rho: f64, rng: &mut Rng) -> Result<MaskGrid> {
    check_rho(rho)?;
    enforce_exact_ratio(MaskGrid::empty(dims, MaskMode::Random), mask_budget(rho, dims.len()), rng)
}

pub fn generate_mask(mode: MaskMode, dims: GridDims, rho: f64, rng: &mut Rng, cfg: &MaskConfig) -> Result<MaskGrid> {
    match mode {
        MaskMode::Rect => mask_rect(dims, rho, rng, cfg),
        MaskMode::Tube => mask_tube(dims, rho, rng, cfg),
        MaskMode::Comb => mask_comb(dims, rho, rng, cfg),
        MaskMode::Random => mask_random(dims, rho, rng),
    }
}

fn check_weights(weights: &[f64; 4]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("mixture weights must be >= 0"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("mixture weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Categorical draw of a masking mode (rect, tube, comb, random order).
pub fn sample_mode(rng: &mut Rng, weights: &[f64; 4]) -> Result<MaskMode> {
    check_weights(weights)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (mode, w) in MaskMode::ALL.iter().zip(weights) {
        acc += w;
        if u < acc {
            return Ok(*mode);
        }
    }
    // rounding: fall back to the last mode with positive weight
    Ok(MaskMode::ALL[weights.iter().rposition(|&w| w > 0.0).unwrap()])
}

/// Linear ramp from `rho_start` to `rho_end` over the first
/// `ramp_fraction` of training, constant afterwards.
pub fn curriculum_rho(step: usize, total_steps: usize, schedule: &CurriculumSchedule) -> f64 {
    let ramp = schedule.ramp_fraction * total_steps as f64;
    if ramp <= 0.0 {
        return schedule.rho_end;
    }
    let frac = (step as f64 / ramp).min(1.0);
    schedule.rho_start + frac * (schedule.rho_end - schedule.rho_start)
}
