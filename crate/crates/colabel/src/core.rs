//! Domain types shared by every stage: video volumes, label sets, unary and
//! marginal fields, and the mean-field run configuration.
//!
//! All fields use the same row-major memory layout `[t][y][x][l]`, matching
//! the binary file formats in [`crate::io`]. Values are immutable after
//! construction; every operation here is a pure function.

use crate::error::{Error, Result};

/// Dimensions of a frame batch: `t` frames of `h`×`w` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl VolumeDims {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidValue(format!(
                "volume dimensions must be positive, got t={t} h={h} w={w}"
            )));
        }
        Ok(Self { t, h, w })
    }

    /// Total pixel count `N = t*h*w`.
    pub fn pixels(&self) -> usize {
        self.t * self.h * self.w
    }

    /// Flat pixel index in `[t][y][x]` order.
    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.h + y) * self.w + x
    }

    /// Inverse of [`VolumeDims::index`].
    #[inline]
    pub fn coords(&self, pixel: usize) -> (usize, usize, usize) {
        let x = pixel % self.w;
        let rest = pixel / self.w;
        (rest / self.h, rest % self.h, x)
    }
}

/// An RGB frame batch: the spatio-temporal pixel domain inference runs over.
#[derive(Debug, Clone)]
pub struct VideoVolume {
    dims: VolumeDims,
    rgb: Vec<[u8; 3]>,
}

/// Borrowed view of one frame of a [`VideoVolume`].
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub h: usize,
    pub w: usize,
    pub rgb: &'a [[u8; 3]],
}

impl VideoVolume {
    pub fn new(dims: VolumeDims, rgb: Vec<[u8; 3]>) -> Result<Self> {
        if rgb.len() != dims.pixels() {
            return Err(Error::DimensionMismatch(format!(
                "video has {} pixels, dims require {}",
                rgb.len(),
                dims.pixels()
            )));
        }
        Ok(Self { dims, rgb })
    }

    /// Stacks equally sized frames into a volume.
    pub fn from_frames(frames: &[(usize, usize, Vec<[u8; 3]>)]) -> Result<Self> {
        let (h, w, _) = *frames.first().ok_or_else(|| {
            Error::InvalidValue("a video volume needs at least one frame".into())
        })?;
        let dims = VolumeDims::new(frames.len(), h, w)?;
        let mut rgb = Vec::with_capacity(dims.pixels());
        for (i, (fh, fw, data)) in frames.iter().enumerate() {
            if *fh != h || *fw != w {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i} is {fh}x{fw}, expected {h}x{w}"
                )));
            }
            if data.len() != h * w {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i} has {} pixels, expected {}",
                    data.len(),
                    h * w
                )));
            }
            rgb.extend_from_slice(data);
        }
        VideoVolume::new(dims, rgb)
    }

    pub fn dims(&self) -> VolumeDims {
        self.dims
    }

    #[inline]
    pub fn rgb(&self, pixel: usize) -> [u8; 3] {
        self.rgb[pixel]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.rgb
    }

    pub fn frame_view(&self, t: usize) -> FrameView<'_> {
        let fp = self.dims.h * self.dims.w;
        FrameView {
            h: self.dims.h,
            w: self.dims.w,
            rgb: &self.rgb[t * fp..(t + 1) * fp],
        }
    }

    /// Copy of the consecutive frame range `[t0, t1)`.
    pub fn window(&self, t0: usize, t1: usize) -> VideoVolume {
        assert!(t0 < t1 && t1 <= self.dims.t, "bad window [{t0}, {t1})");
        let fp = self.dims.h * self.dims.w;
        VideoVolume {
            dims: VolumeDims {
                t: t1 - t0,
                h: self.dims.h,
                w: self.dims.w,
            },
            rgb: self.rgb[t0 * fp..t1 * fp].to_vec(),
        }
    }
}

/// The semantic classes predictions range over, with display metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    palette: Vec<[u8; 3]>,
    ignore_label: Option<usize>,
}

impl LabelSet {
    pub fn new(
        names: Vec<String>,
        palette: Vec<[u8; 3]>,
        ignore_label: Option<usize>,
    ) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidValue(format!(
                "a label set needs at least 2 labels, got {}",
                names.len()
            )));
        }
        if palette.len() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "palette has {} entries for {} labels",
                palette.len(),
                names.len()
            )));
        }
        if let Some(ig) = ignore_label {
            if ig >= names.len() {
                return Err(Error::InvalidValue(format!(
                    "ignore_label {ig} out of range for {} labels",
                    names.len()
                )));
            }
        }
        Ok(Self {
            names,
            palette,
            ignore_label,
        })
    }

    /// Generated names (`class_0`, ...) and a hue-spread palette for `l` labels.
    pub fn generated(l: usize) -> Result<Self> {
        let names = (0..l).map(|i| format!("class_{i}")).collect();
        let palette = (0..l).map(|i| hue_color(i, l)).collect();
        LabelSet::new(names, palette, None)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn color(&self, label: usize) -> [u8; 3] {
        self.palette[label]
    }

    pub fn palette(&self) -> &[[u8; 3]] {
        &self.palette
    }

    pub fn ignore_label(&self) -> Option<usize> {
        self.ignore_label
    }
}

/// Evenly hue-spaced mid-brightness color for generated palettes.
pub(crate) fn hue_color(i: usize, total: usize) -> [u8; 3] {
    let h = 360.0 * i as f64 / total.max(1) as f64;
    let (s, v) = (0.65, 0.85);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Per-pixel per-label costs in negative-log-probability units (nats).
#[derive(Debug, Clone)]
pub struct UnaryField {
    dims: VolumeDims,
    labels: usize,
    costs: Vec<f64>,
}

impl UnaryField {
    pub fn new(dims: VolumeDims, labels: usize, costs: Vec<f64>) -> Result<Self> {
        if labels < 2 {
            return Err(Error::InvalidValue(format!(
                "unary field needs at least 2 labels, got {labels}"
            )));
        }
        if costs.len() != dims.pixels() * labels {
            return Err(Error::DimensionMismatch(format!(
                "unary field has {} entries, dims require {}",
                costs.len(),
                dims.pixels() * labels
            )));
        }
        if let Some(pos) = costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "unary cost at flat index {pos} is not finite"
            )));
        }
        Ok(Self {
            dims,
            labels,
            costs,
        })
    }

    pub fn dims(&self) -> VolumeDims {
        self.dims
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn cost(&self, pixel: usize, label: usize) -> f64 {
        self.costs[pixel * self.labels + label]
    }

    /// Costs of one pixel, all labels.
    #[inline]
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.costs[pixel * self.labels..(pixel + 1) * self.labels]
    }

    pub fn values(&self) -> &[f64] {
        &self.costs
    }

    /// Copy of the consecutive frame range `[t0, t1)`.
    pub fn window(&self, t0: usize, t1: usize) -> UnaryField {
        assert!(t0 < t1 && t1 <= self.dims.t, "bad window [{t0}, {t1})");
        let fl = self.dims.h * self.dims.w * self.labels;
        UnaryField {
            dims: VolumeDims {
                t: t1 - t0,
                h: self.dims.h,
                w: self.dims.w,
            },
            labels: self.labels,
            costs: self.costs[t0 * fl..t1 * fl].to_vec(),
        }
    }
}

/// Tolerance on per-pixel marginal sums: every `QField` row sums to 1 within this.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Mean-field marginal distributions, one simplex per pixel.
#[derive(Debug, Clone)]
pub struct QField {
    dims: VolumeDims,
    labels: usize,
    q: Vec<f64>,
}

impl QField {
    pub fn new(dims: VolumeDims, labels: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != dims.pixels() * labels {
            return Err(Error::DimensionMismatch(format!(
                "marginal field has {} entries, dims require {}",
                q.len(),
                dims.pixels() * labels
            )));
        }
        let field = Self { dims, labels, q };
        field.validate_simplex()?;
        Ok(field)
    }

    /// Checks that every row is a probability simplex (entries >= 0, sum 1
    /// within [`SIMPLEX_TOL`]).
    pub fn validate_simplex(&self) -> Result<()> {
        for pixel in 0..self.dims.pixels() {
            let row = self.row(pixel);
            let mut sum = 0.0;
            for &v in row {
                if !(v >= 0.0) {
                    return Err(Error::InvalidValue(format!(
                        "marginal at pixel {pixel} is negative or NaN: {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidValue(format!(
                    "marginals at pixel {pixel} sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> VolumeDims {
        self.dims
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn value(&self, pixel: usize, label: usize) -> f64 {
        self.q[pixel * self.labels + label]
    }

    #[inline]
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.q[pixel * self.labels..(pixel + 1) * self.labels]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub(crate) fn from_parts_unchecked(dims: VolumeDims, labels: usize, q: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), dims.pixels() * labels);
        Self { dims, labels, q }
    }
}

/// A `t`×`h`×`w` map of label indices (ground truth, predictions, or regions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: VolumeDims,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(dims: VolumeDims, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != dims.pixels() {
            return Err(Error::DimensionMismatch(format!(
                "label map has {} entries, dims require {}",
                labels.len(),
                dims.pixels()
            )));
        }
        Ok(Self { dims, labels })
    }

    pub fn dims(&self) -> VolumeDims {
        self.dims
    }

    pub fn values(&self) -> &[u32] {
        &self.labels
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let fp = self.dims.h * self.dims.w;
        &self.labels[t * fp..(t + 1) * fp]
    }

    pub fn into_values(self) -> Vec<u32> {
        self.labels
    }
}

/// Run parameters of the mean-field engine.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanFieldConfig {
    /// Parallel update sweeps per window.
    pub iterations: usize,
    /// Frames co-labeled at once; the video splits into consecutive windows
    /// of this many frames.
    pub batch_size: usize,
    /// Probability clamp used in every log / leave-one-out computation.
    pub q_floor: f64,
    /// Optional early stop: halt a window when `max |dQ|` falls below this.
    pub convergence_tol: Option<f64>,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            batch_size: 50,
            q_floor: 1e-10,
            convergence_tol: None,
        }
    }
}

impl MeanFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidValue("iterations must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidValue("batch_size must be >= 1".into()));
        }
        if !(self.q_floor > 0.0 && self.q_floor < 1e-3) {
            return Err(Error::InvalidValue(format!(
                "q_floor must lie in (0, 1e-3), got {}",
                self.q_floor
            )));
        }
        if let Some(tol) = self.convergence_tol {
            if !(tol > 0.0) {
                return Err(Error::InvalidValue(format!(
                    "convergence_tol must be positive, got {tol}"
                )));
            }
        }
        Ok(())
    }
}

/// Output of a full inference run.
#[derive(Debug, Clone)]
pub struct SegmentationResult {
    /// Argmax labels of the final marginals, `[t][y][x]`.
    pub labels: LabelMap,
    /// Final marginals (windows concatenated).
    pub final_q: Option<QField>,
    /// Mean-field sweeps actually executed, summed over windows.
    pub iterations_run: usize,
    /// Total wall time in seconds.
    pub wall_time: f64,
}

/// Converts classifier probabilities to unary costs `-log(max(p, floor))`.
pub fn unary_from_probabilities(
    dims: VolumeDims,
    labels: usize,
    probs: &[f64],
    floor: f64,
) -> Result<UnaryField> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::InvalidValue(format!(
            "probability floor must lie in (0, 1), got {floor}"
        )));
    }
    if probs.len() != dims.pixels() * labels {
        return Err(Error::DimensionMismatch(format!(
            "probability field has {} entries, dims require {}",
            probs.len(),
            dims.pixels() * labels
        )));
    }
    let mut costs = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidValue(format!(
                "probability at flat index {i} is {p}, expected [0, 1]"
            )));
        }
        costs.push(-p.max(floor).ln());
    }
    UnaryField::new(dims, labels, costs)
}

/// Per-pixel maximum-posterior-marginal decision: the smallest label index
/// attaining the maximum marginal.
pub fn argmax_labels(q: &QField) -> LabelMap {
    let labels: Vec<u32> = (0..q.dims().pixels())
        .map(|pixel| argmax_row(q.row(pixel)) as u32)
        .collect();
    LabelMap {
        dims: q.dims(),
        labels,
    }
}

/// Index of the row maximum; ties break toward the lowest index.
#[inline]
pub(crate) fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (l, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = l;
            best_v = v;
        }
    }
    best
}
