//! Simulated users: random click sampling for training and error-driven
//! click placement for evaluation sessions.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics;
use crate::transforms::{squared_edt_mask, ClickSet, Polarity};
use crate::volume::{
    centroid, connected_components, dilate_in_plane, erode_in_plane, skeletonize, Connectivity, Mask, VoxelIndex,
};

#[derive(Debug, Error)]
pub enum ClickError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("no foreground voxel survives the boundary margin")]
    EmptyAfterErosion,
    #[error("dims mismatch: prediction {0:?} vs ground truth {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("segmenter failed: {0}")]
    Segmenter(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegStrategy {
    /// Uniformly at random from the whole (margin-eroded) background.
    WholeBackground,
    /// Spread over the background band by farthest-point sampling.
    BandUniform,
    /// A fair coin per call picks one of the two above.
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// 2D positive bound; the 3D bound is `budget_3d(n_pos_2d)`.
    pub n_pos_2d: usize,
    pub n_neg_2d: usize,
    /// Background band width in voxels.
    pub bandwidth_w: usize,
    /// In-plane distance kept from object boundaries.
    pub d_margin: usize,
    /// Minimum per-axis separation (dz, dy, dx) between two clicks of one polarity.
    pub min_spacing: [usize; 3],
    pub neg_strategy: NegStrategy,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_pos_2d: 5,
            n_neg_2d: 5,
            bandwidth_w: 40,
            d_margin: 3,
            min_spacing: [1, 10, 10],
            neg_strategy: NegStrategy::Mixed,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), ClickError> {
        if self.n_pos_2d == 0 || self.n_neg_2d == 0 || self.bandwidth_w == 0 {
            return Err(ClickError::InvalidConfig("click bounds and bandwidth must be at least 1".into()));
        }
        if self.min_spacing.iter().any(|&s| s == 0) {
            return Err(ClickError::InvalidConfig("min_spacing must be at least 1 on every axis".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_clicks: usize,
    pub dsc_threshold: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { max_clicks: 20, dsc_threshold: 0.8 }
    }
}

/// 3D click bound from a 2D one: `round(n^{3/2})`, halves rounded up.
pub fn budget_3d(n_2d: usize) -> usize {
    let b = (n_2d as f64).powf(1.5);
    (b + 0.5).floor().max(1.0) as usize
}

/// Background voxels closer than `w` (voxel units) to the foreground.
pub fn background_band(gt: &Mask, w: usize) -> Result<Mask, ClickError> {
    let sq = squared_edt_mask(gt, false).ok_or(ClickError::EmptyGroundTruth)?;
    let w2 = (w * w) as f64;
    Ok(gt.with_data(gt.data().iter().zip(&sq).map(|(&f, &d)| !f && d < w2).collect()))
}

/// Foreground voxels at least `d_margin` in-plane from the boundary. Objects
/// (26-connected) whose in-plane extent is below `2·d_margin` on either axis
/// are kept whole.
pub fn positive_region(gt: &Mask, d_margin: usize) -> Mask {
    let eroded = erode_in_plane(gt, d_margin);
    if d_margin == 0 {
        return eroded;
    }
    let labels = connected_components(gt, Connectivity::TwentySix);
    let mut extent = vec![(usize::MAX, 0usize, usize::MAX, 0usize); labels.count + 1];
    for (o, &l) in labels.grid.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let v = gt.dims().index_of(o);
        let e = &mut extent[l as usize];
        e.0 = e.0.min(v.y);
        e.1 = e.1.max(v.y);
        e.2 = e.2.min(v.x);
        e.3 = e.3.max(v.x);
    }
    let thin: Vec<bool> = extent
        .iter()
        .map(|&(y0, y1, x0, x1)| y0 != usize::MAX && (y1 - y0 + 1 < 2 * d_margin || x1 - x0 + 1 < 2 * d_margin))
        .collect();
    let data = labels
        .grid
        .data()
        .iter()
        .zip(eroded.data())
        .map(|(&l, &e)| e || (l != 0 && thin[l as usize]))
        .collect();
    gt.with_data(data)
}

/// Background voxels with no foreground within `d_margin` in-plane.
pub fn negative_region(gt: &Mask, d_margin: usize) -> Mask {
    dilate_in_plane(gt, d_margin).not()
}

/// Per-axis separation rule: every axis must differ by at least its minimum.
pub fn well_separated(a: VoxelIndex, b: VoxelIndex, min_spacing: [usize; 3]) -> bool {
    a.z.abs_diff(b.z) >= min_spacing[0] && a.y.abs_diff(b.y) >= min_spacing[1] && a.x.abs_diff(b.x) >= min_spacing[2]
}

fn random_pick<R: Rng>(mut pool: Vec<VoxelIndex>, n: usize, min_spacing: [usize; 3], rng: &mut R) -> Vec<VoxelIndex> {
    let mut chosen: Vec<VoxelIndex> = Vec::with_capacity(n);
    let len = pool.len();
    for i in 0..len {
        if chosen.len() == n {
            break;
        }
        let j = rng.random_range(i..len);
        pool.swap(i, j);
        let c = pool[i];
        if chosen.iter().all(|&p| well_separated(p, c, min_spacing)) {
            chosen.push(c);
        }
    }
    chosen
}

fn farthest_point_pick<R: Rng>(
    pool: &[VoxelIndex],
    n: usize,
    min_spacing: [usize; 3],
    rng: &mut R,
) -> Vec<VoxelIndex> {
    let mut chosen = Vec::with_capacity(n);
    if pool.is_empty() || n == 0 {
        return chosen;
    }
    let mut alive: Vec<bool> = vec![true; pool.len()];
    let mut nearest = vec![f64::INFINITY; pool.len()];
    let mut next = rng.random_range(0..pool.len());
    loop {
        let c = pool[next];
        chosen.push(c);
        if chosen.len() == n {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in pool.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            if !well_separated(*p, c, min_spacing) {
                alive[i] = false;
                continue;
            }
            let d2 = sq_dist(p.as_f64(), c.as_f64());
            nearest[i] = nearest[i].min(d2);
            if best.is_none_or(|(bd, _)| nearest[i] > bd) {
                best = Some((nearest[i], i));
            }
        }
        match best {
            Some((_, i)) => next = i,
            None => break,
        }
    }
    chosen
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Negative clicks only; usable when the sample holds no foreground.
pub fn sample_negative_clicks<R: Rng>(
    gt: &Mask,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<VoxelIndex>, ClickError> {
    cfg.validate()?;
    let count = rng.random_range(0..=budget_3d(cfg.n_neg_2d));
    let eligible = negative_region(gt, cfg.d_margin);
    let strategy = match cfg.neg_strategy {
        NegStrategy::Mixed if rng.random_bool(0.5) => NegStrategy::WholeBackground,
        NegStrategy::Mixed => NegStrategy::BandUniform,
        s => s,
    };
    if count == 0 {
        return Ok(Vec::new());
    }
    Ok(match strategy {
        NegStrategy::BandUniform if !gt.is_all_false() => {
            let band = background_band(gt, cfg.bandwidth_w)?;
            let pool: Vec<VoxelIndex> = band.and(&eligible).voxels().collect();
            farthest_point_pick(&pool, count, cfg.min_spacing, rng)
        }
        _ => random_pick(eligible.voxels().collect(), count, cfg.min_spacing, rng),
    })
}

/// Random training clicks for one sample.
pub fn sample_training_clicks<R: Rng>(gt: &Mask, cfg: &SamplingConfig, rng: &mut R) -> Result<ClickSet, ClickError> {
    cfg.validate()?;
    if gt.is_all_false() {
        return Err(ClickError::EmptyGroundTruth);
    }
    let region = positive_region(gt, cfg.d_margin);
    if region.is_all_false() {
        return Err(ClickError::EmptyAfterErosion);
    }
    let n_pos = rng.random_range(1..=budget_3d(cfg.n_pos_2d));
    let positives = random_pick(region.voxels().collect(), n_pos, cfg.min_spacing, rng);
    let negatives = sample_negative_clicks(gt, cfg, rng)?;
    Ok(ClickSet { positives, negatives })
}

/// Same as [`sample_training_clicks`] with a generator seeded from `cfg.seed`.
pub fn sample_training_clicks_seeded(gt: &Mask, cfg: &SamplingConfig) -> Result<ClickSet, ClickError> {
    sample_training_clicks(gt, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextClick {
    /// Prediction already equals the ground truth.
    Done,
    Click { polarity: Polarity, at: VoxelIndex },
}

/// Places the next simulated click in the largest error region.
///
/// False-negative and false-positive voxels are grouped separately so that a
/// region is always of one kind; the largest region wins (ties: smaller
/// centroid in (z, y, x) order). The click goes to the rounded centroid when it
/// falls inside the region and otherwise to the region's skeleton voxel
/// nearest to the centroid.
pub fn next_click(pred: &Mask, gt: &Mask) -> Result<NextClick, ClickError> {
    if pred.dims() != gt.dims() {
        return Err(ClickError::DimsMismatch(pred.dims().as_array(), gt.dims().as_array()));
    }
    let missed = gt.and_not(pred);
    let extra = pred.and_not(gt);

    let mut best: Option<(usize, [f64; 3], Polarity, Mask)> = None;
    for (polarity, errors) in [(Polarity::Positive, missed), (Polarity::Negative, extra)] {
        let labels = connected_components(&errors, Connectivity::TwentySix);
        let sizes = labels.sizes();
        for label in 1..=labels.count as u32 {
            let size = sizes[label as usize];
            if best.as_ref().is_some_and(|b| size < b.0) {
                continue;
            }
            let region = labels.mask(label);
            let c = centroid(&region).expect("component is non-empty").continuous;
            let better = match &best {
                None => true,
                Some((bs, bc, _, _)) => size > *bs || lex_less(c, *bc),
            };
            if better {
                best = Some((size, c, polarity, region));
            }
        }
    }
    let Some((_, c, polarity, region)) = best else {
        return Ok(NextClick::Done);
    };
    let rounded = VoxelIndex::new(c[0].round() as usize, c[1].round() as usize, c[2].round() as usize);
    let at = if *region.get(rounded) { rounded } else { nearest_skeleton_voxel(&region, c) };
    Ok(NextClick::Click { polarity, at })
}

fn lex_less(a: [f64; 3], b: [f64; 3]) -> bool {
    a.partial_cmp(&b) == Some(std::cmp::Ordering::Less)
}

/// Skeleton voxel of `region` closest to `point`; ties go to the first voxel in raster order.
pub fn nearest_skeleton_voxel(region: &Mask, point: [f64; 3]) -> VoxelIndex {
    skeletonize(region)
        .voxels()
        .fold(None::<(f64, VoxelIndex)>, |best, v| {
            let d = sq_dist(v.as_f64(), point);
            match best {
                Some((bd, _)) if bd <= d => best,
                _ => Some((d, v)),
            }
        })
        .map(|(_, v)| v)
        .expect("skeleton of a non-empty region is non-empty")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// DSC reached the session threshold.
    Threshold,
    MaxClicks,
    /// Prediction matched the ground truth exactly.
    Perfect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStep {
    pub click_index: usize,
    pub polarity: Polarity,
    pub at: VoxelIndex,
    pub dsc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionTrace {
    /// DSC of the empty starting prediction.
    pub initial_dsc: f64,
    pub steps: Vec<SessionStep>,
    pub halted: HaltReason,
    pub clicks: ClickSet,
    pub final_prediction: Mask,
}

impl SessionTrace {
    /// DSC after `k` clicks; a halted session keeps its last value.
    pub fn dsc_after(&self, k: usize) -> f64 {
        if k == 0 || self.steps.is_empty() {
            return self.initial_dsc;
        }
        self.steps[k.min(self.steps.len()) - 1].dsc
    }

    /// Clicks needed to reach `threshold`, or `cap` when never reached.
    pub fn clicks_to(&self, threshold: f64, cap: usize) -> usize {
        if self.steps.is_empty() && self.initial_dsc >= threshold {
            return 0;
        }
        self.steps.iter().find(|s| s.dsc >= threshold).map(|s| s.click_index).unwrap_or(cap)
    }

    pub fn count(&self, polarity: Polarity) -> usize {
        self.steps.iter().filter(|s| s.polarity == polarity).count()
    }

    pub const CSV_HEADER: &'static str = "click_index,polarity,z,y,x,dsc";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            writeln!(out, "{},{},{},{},{},{:.6}", s.click_index, s.polarity, s.at.z, s.at.y, s.at.x, s.dsc)?;
        }
        Ok(())
    }
}

/// Alternates simulated clicks and re-segmentation until the DSC threshold,
/// the click budget, or a perfect prediction.
pub fn run_session<F>(mut segmenter: F, gt: &Mask, cfg: &SessionConfig) -> Result<SessionTrace, ClickError>
where
    F: FnMut(&ClickSet) -> Result<Mask, ClickError>,
{
    if cfg.max_clicks == 0 {
        return Err(ClickError::InvalidConfig("max_clicks must be at least 1".into()));
    }
    let mut pred = Mask::empty(gt.dims(), gt.spacing());
    let initial_dsc = metrics::dsc(&pred, gt).expect("same dims");
    let mut clicks = ClickSet::new();
    let mut steps = Vec::new();
    let mut halted = HaltReason::MaxClicks;
    for click_index in 1..=cfg.max_clicks {
        let (polarity, at) = match next_click(&pred, gt)? {
            NextClick::Done => {
                halted = HaltReason::Perfect;
                break;
            }
            NextClick::Click { polarity, at } => (polarity, at),
        };
        // Simulated clicks never contradict the ground truth, so this only
        // ever skips exact repeats.
        let _ = clicks.push(polarity, at);
        pred = segmenter(&clicks)?;
        if pred.dims() != gt.dims() {
            return Err(ClickError::DimsMismatch(pred.dims().as_array(), gt.dims().as_array()));
        }
        let dsc = metrics::dsc(&pred, gt).expect("same dims");
        steps.push(SessionStep { click_index, polarity, at, dsc });
        if dsc >= cfg.dsc_threshold {
            halted = if pred == *gt { HaltReason::Perfect } else { HaltReason::Threshold };
            break;
        }
    }
    if steps.is_empty() && halted != HaltReason::Perfect {
        halted = HaltReason::MaxClicks;
    }
    Ok(SessionTrace { initial_dsc, steps, halted, clicks, final_prediction: pred })
}
