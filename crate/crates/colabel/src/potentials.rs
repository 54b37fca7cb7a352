//! Energy terms and their per-pixel, per-label mean-field expectation
//! contributions: Gaussian pairwise kernels under Potts compatibility,
//! Pn-Potts higher-order terms over superpixel cliques, and global
//! co-occurrence terms.
//!
//! Everything here is a pure function of the current marginals; the
//! [`crate::inference`] engine combines the contributions into the update
//! exponent. Contributions are *costs*: all non-negative for non-negative
//! weights, added to the unary before the softmax.

use crate::core::{QField, VideoVolume};
use crate::error::{Error, Result};
use crate::lattice::{FeaturePoints, GaussianFilter};
use crate::superpixels::CliqueLayerSet;

/// One Gaussian pairwise kernel. Feature recipes per kind:
///
/// - `Smoothness`: `(x/θγ, y/θγ, t/θτ)`, d=3 — local spatial and temporal
///   smoothing regardless of color.
/// - `Appearance`: `(x/θα, y/θα, t/θτ, r/θβ, g/θβ, b/θβ)`, d=6 — couples
///   nearby similar-looking pixels within and across frames.
/// - `GlobalAppearance`: `(r/θβg, g/θβg, b/θβg)`, d=3 — couples every pixel
///   of the co-labeled batch by color alone, regardless of position or
///   frame; this is the batch-wide co-labeling kernel.
///
/// Bandwidth scaling happens here when features are built; the lattice
/// always sees unit-bandwidth features.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Smoothness {
        weight: f64,
        theta_gamma: f64,
        theta_tau: f64,
    },
    Appearance {
        weight: f64,
        theta_alpha: f64,
        theta_beta: f64,
        theta_tau: f64,
    },
    GlobalAppearance {
        weight: f64,
        theta_beta_global: f64,
    },
}

impl KernelSpec {
    pub fn weight(&self) -> f64 {
        match *self {
            KernelSpec::Smoothness { weight, .. }
            | KernelSpec::Appearance { weight, .. }
            | KernelSpec::GlobalAppearance { weight, .. } => weight,
        }
    }

    /// Feature-space dimension of this kernel.
    pub fn feature_dim(&self) -> usize {
        match self {
            KernelSpec::Smoothness { .. } => 3,
            KernelSpec::Appearance { .. } => 6,
            KernelSpec::GlobalAppearance { .. } => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            KernelSpec::Smoothness { .. } => "smoothness",
            KernelSpec::Appearance { .. } => "appearance",
            KernelSpec::GlobalAppearance { .. } => "global_appearance",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight() < 0.0 {
            return Err(Error::InvalidValue(format!(
                "{} kernel: weight must be >= 0, got {}",
                self.kind_name(),
                self.weight()
            )));
        }
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidValue(format!(
                "{} kernel: {what} must be positive, got {v}",
                self.kind_name()
            )))
        };
        match *self {
            KernelSpec::Smoothness {
                theta_gamma,
                theta_tau,
                ..
            } => {
                if theta_gamma <= 0.0 {
                    return bad("theta_gamma", theta_gamma);
                }
                if theta_tau <= 0.0 {
                    return bad("theta_tau", theta_tau);
                }
            }
            KernelSpec::Appearance {
                theta_alpha,
                theta_beta,
                theta_tau,
                ..
            } => {
                if theta_alpha <= 0.0 {
                    return bad("theta_alpha", theta_alpha);
                }
                if theta_beta <= 0.0 {
                    return bad("theta_beta", theta_beta);
                }
                if theta_tau <= 0.0 {
                    return bad("theta_tau", theta_tau);
                }
            }
            KernelSpec::GlobalAppearance {
                theta_beta_global, ..
            } => {
                if theta_beta_global <= 0.0 {
                    return bad("theta_beta_global", theta_beta_global);
                }
            }
        }
        Ok(())
    }

    /// The default three-kernel bank: smoothness, appearance, global
    /// appearance, with common dense-CRF parameter choices.
    pub fn default_kernels() -> Vec<KernelSpec> {
        vec![
            KernelSpec::Smoothness {
                weight: 3.0,
                theta_gamma: 3.0,
                theta_tau: 1.0,
            },
            KernelSpec::Appearance {
                weight: 10.0,
                theta_alpha: 60.0,
                theta_beta: 20.0,
                theta_tau: 5.0,
            },
            KernelSpec::GlobalAppearance {
                weight: 1.0,
                theta_beta_global: 20.0,
            },
        ]
    }
}

/// Bandwidth-scaled feature matrix for one kernel over a video batch,
/// pixel order row-major `[t][y][x]`.
pub fn build_feature_points(video: &VideoVolume, spec: &KernelSpec) -> Result<FeaturePoints> {
    spec.validate()?;
    let dims = video.dims();
    let n = dims.pixels();
    let d = spec.feature_dim();
    let mut data = Vec::with_capacity(n * d);
    match *spec {
        KernelSpec::Smoothness {
            theta_gamma,
            theta_tau,
            ..
        } => {
            for t in 0..dims.t {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(x as f64 / theta_gamma);
                        data.push(y as f64 / theta_gamma);
                        data.push(t as f64 / theta_tau);
                    }
                }
            }
        }
        KernelSpec::Appearance {
            theta_alpha,
            theta_beta,
            theta_tau,
            ..
        } => {
            for t in 0..dims.t {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        let [r, g, b] = video.rgb(dims.index(t, y, x));
                        data.push(x as f64 / theta_alpha);
                        data.push(y as f64 / theta_alpha);
                        data.push(t as f64 / theta_tau);
                        data.push(r as f64 / theta_beta);
                        data.push(g as f64 / theta_beta);
                        data.push(b as f64 / theta_beta);
                    }
                }
            }
        }
        KernelSpec::GlobalAppearance {
            theta_beta_global, ..
        } => {
            for pixel in 0..n {
                let [r, g, b] = video.rgb(pixel);
                data.push(r as f64 / theta_beta_global);
                data.push(g as f64 / theta_beta_global);
                data.push(b as f64 / theta_beta_global);
            }
        }
    }
    FeaturePoints::new(n, d, data)
}

/// Weighted sum of Gaussian-filtered marginals with the self term removed:
///
/// ```text
/// M(i,l) = sum_m w_m * ( [filter_m Q(.,l)]_i - Q_i(l) )
///        = sum_m w_m * sum_{j != i} k_m(f_i, f_j) Q_j(l)
/// ```
///
/// The self-term subtraction uses kernel(0) = 1. Output layout matches the
/// marginal field (`N x L` row-major).
pub fn pairwise_message(q: &QField, kernels: &[(f64, &dyn GaussianFilter)]) -> Result<Vec<f64>> {
    let n = q.dims().pixels();
    let labels = q.labels();
    let mut message = vec![0.0f64; n * labels];
    for (weight, filter) in kernels {
        if filter.num_points() != n {
            return Err(Error::DimensionMismatch(format!(
                "kernel filter built over {} points, marginals have {}",
                filter.num_points(),
                n
            )));
        }
        if *weight == 0.0 {
            continue;
        }
        let filtered = filter.filter(q.values(), labels)?;
        for (m, (f, qv)) in message.iter_mut().zip(filtered.iter().zip(q.values())) {
            *m += weight * (f - qv);
        }
    }
    Ok(message)
}

/// Potts compatibility applied to a message field:
/// `out(i,l) = sum_{l' != l} M(i,l')`, i.e. row total minus self.
pub fn potts_transform(message: &[f64], labels: usize) -> Vec<f64> {
    assert!(labels > 0 && message.len() % labels == 0);
    let mut out = vec![0.0f64; message.len()];
    for (row_out, row) in out.chunks_mut(labels).zip(message.chunks(labels)) {
        let total: f64 = row.iter().sum();
        for (o, &m) in row_out.iter_mut().zip(row) {
            *o = total - m;
        }
    }
    out
}

/// Pn-Potts parameters: one `gamma_max` per clique layer and a shared
/// `gamma_low` (cost when a clique is label-pure; label-independent).
#[derive(Debug, Clone, PartialEq)]
pub struct PnPottsParams {
    pub gamma_low: f64,
    pub gamma_max: Vec<f64>,
}

impl PnPottsParams {
    /// Per-layer defaults pairing the default mean-shift layers
    /// (coarse-to-fine 0.5 / 0.4 / 0.3).
    pub fn default_for_layers(layers: usize) -> Self {
        let defaults = [0.5, 0.4, 0.3];
        PnPottsParams {
            gamma_low: 0.0,
            gamma_max: (0..layers)
                .map(|m| defaults.get(m).copied().unwrap_or(0.3))
                .collect(),
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.gamma_max.len() != layers {
            return Err(Error::DimensionMismatch(format!(
                "{} gamma_max values for {} clique layers",
                self.gamma_max.len(),
                layers
            )));
        }
        if self.gamma_low < 0.0 {
            return Err(Error::InvalidValue(format!(
                "gamma_low must be >= 0, got {}",
                self.gamma_low
            )));
        }
        for (m, &g) in self.gamma_max.iter().enumerate() {
            if !(g >= 0.0) {
                return Err(Error::InvalidValue(format!(
                    "gamma_max[{m}] must be >= 0, got {g}"
                )));
            }
            if self.gamma_low >= g {
                return Err(Error::InvalidValue(format!(
                    "gamma_low {} must be < gamma_max[{m}] = {g}",
                    self.gamma_low
                )));
            }
        }
        Ok(())
    }
}

/// Mean-field expectation of the Pn-Potts cost, conditioned on pixel `i`
/// taking label `l`, summed over layers:
///
/// ```text
/// contribution(i,l) = sum_m  gamma_low * P + gamma_max(m) * (1 - P),
/// P = prod_{j in c(i,m), j != i} Q_j(l)
/// ```
///
/// Leave-one-out products are evaluated in log space by subtracting the
/// pixel's own clamped log from the clique sum; singleton cliques contribute
/// `gamma_low` (empty product = 1).
pub fn pn_potts_expectation(
    q: &QField,
    cliques: &CliqueLayerSet,
    params: &PnPottsParams,
    q_floor: f64,
) -> Result<Vec<f64>> {
    if cliques.dims() != q.dims() {
        return Err(Error::DimensionMismatch(format!(
            "clique layers built over {:?}, marginals over {:?}",
            cliques.dims(),
            q.dims()
        )));
    }
    params.validate(cliques.layers().len())?;
    let n = q.dims().pixels();
    let labels = q.labels();
    let mut out = vec![0.0f64; n * labels];

    // Clamped per-entry logs are shared by every layer.
    let log_q: Vec<f64> = q.values().iter().map(|&v| v.max(q_floor).ln()).collect();

    for (layer, &gamma_max) in cliques.layers().iter().zip(&params.gamma_max) {
        let mut sums = vec![0.0f64; layer.clique_count() * labels];
        for pixel in 0..n {
            let c = layer.clique_id(pixel) as usize;
            let row = &log_q[pixel * labels..(pixel + 1) * labels];
            let acc = &mut sums[c * labels..(c + 1) * labels];
            for (a, &lv) in acc.iter_mut().zip(row) {
                *a += lv;
            }
        }
        for pixel in 0..n {
            let c = layer.clique_id(pixel) as usize;
            let sum_row = &sums[c * labels..(c + 1) * labels];
            let log_row = &log_q[pixel * labels..(pixel + 1) * labels];
            let out_row = &mut out[pixel * labels..(pixel + 1) * labels];
            for l in 0..labels {
                let leave_one_out = (sum_row[l] - log_row[l]).exp().min(1.0);
                out_row[l] += params.gamma_low * leave_one_out + gamma_max * (1.0 - leave_one_out);
            }
        }
    }
    Ok(out)
}

/// Symmetric non-negative label-pair cost matrix with zero diagonal, plus a
/// global weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceModel {
    labels: usize,
    costs: Vec<f64>,
    pub weight: f64,
}

impl CooccurrenceModel {
    pub fn new(labels: usize, costs: Vec<f64>, weight: f64) -> Result<Self> {
        if costs.len() != labels * labels {
            return Err(Error::DimensionMismatch(format!(
                "co-occurrence matrix has {} entries, expected {labels}x{labels}",
                costs.len()
            )));
        }
        if weight < 0.0 {
            return Err(Error::InvalidValue(format!(
                "co-occurrence weight must be >= 0, got {weight}"
            )));
        }
        for a in 0..labels {
            if costs[a * labels + a] != 0.0 {
                return Err(Error::InvalidValue(format!(
                    "co-occurrence diagonal must be zero, C({a},{a}) = {}",
                    costs[a * labels + a]
                )));
            }
            for b in 0..labels {
                let v = costs[a * labels + b];
                if !(v >= 0.0) {
                    return Err(Error::InvalidValue(format!(
                        "co-occurrence cost C({a},{b}) = {v} is negative or NaN"
                    )));
                }
                if (v - costs[b * labels + a]).abs() > 1e-12 {
                    return Err(Error::InvalidValue(format!(
                        "co-occurrence matrix asymmetric at ({a},{b}): {v} vs {}",
                        costs[b * labels + a]
                    )));
                }
            }
        }
        Ok(Self {
            labels,
            costs,
            weight,
        })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        self.costs[a * self.labels + b]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.costs
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        if weight < 0.0 {
            return Err(Error::InvalidValue(format!(
                "co-occurrence weight must be >= 0, got {weight}"
            )));
        }
        self.weight = weight;
        Ok(self)
    }
}

/// Mean-field expectation of the co-occurrence cost for pixel `i`, label `l`:
///
/// ```text
/// contribution(i,l) = w * sum_{l' != l} C(l,l') * P_-i(l' present)
/// P_-i(l' present)  = 1 - prod_{j != i} (1 - Q_j(l'))
/// ```
///
/// The product runs over the whole co-labeled batch (factorized "absence"
/// probabilities), evaluated in log space with the same clamp as the
/// Pn-Potts terms.
pub fn cooccurrence_expectation(
    q: &QField,
    model: &CooccurrenceModel,
    q_floor: f64,
) -> Result<Vec<f64>> {
    if model.labels != q.labels() {
        return Err(Error::DimensionMismatch(format!(
            "co-occurrence matrix over {} labels, marginals over {}",
            model.labels,
            q.labels()
        )));
    }
    let n = q.dims().pixels();
    let labels = q.labels();
    let mut out = vec![0.0f64; n * labels];
    if model.weight == 0.0 {
        return Ok(out);
    }

    // log(1 - Q) per entry, clamped; batch totals per label.
    let log_absent: Vec<f64> = q
        .values()
        .iter()
        .map(|&v| (1.0 - v).max(q_floor).ln())
        .collect();
    let mut totals = vec![0.0f64; labels];
    for row in log_absent.chunks(labels) {
        for (t, &v) in totals.iter_mut().zip(row) {
            *t += v;
        }
    }

    for pixel in 0..n {
        let la_row = &log_absent[pixel * labels..(pixel + 1) * labels];
        let present: Vec<f64> = (0..labels)
            .map(|l| 1.0 - (totals[l] - la_row[l]).exp().min(1.0))
            .collect();
        let out_row = &mut out[pixel * labels..(pixel + 1) * labels];
        for l in 0..labels {
            let mut cost = 0.0;
            for (lp, &p) in present.iter().enumerate() {
                if lp != l {
                    cost += model.cost(l, lp) * p;
                }
            }
            out_row[l] = model.weight * cost;
        }
    }
    Ok(out)
}

/// Estimates a co-occurrence matrix from ground-truth label maps: with
/// `n(l,l')` the number of maps where both labels occur and `n` the map
/// count, `C(l,l') = max(0, -log((n(l,l')+1)/(n+1)))`, rescaled so the
/// largest entry is 1 (an all-zero matrix stays zero). Returns the model
/// with weight 1.
pub fn estimate_cooccurrence<'a, I>(maps: I, labels: usize) -> Result<CooccurrenceModel>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let mut joint = vec![0u64; labels * labels];
    let mut count = 0u64;
    for map in maps {
        count += 1;
        let mut present = vec![false; labels];
        for &v in map {
            let v = v as usize;
            if v >= labels {
                return Err(Error::InvalidValue(format!(
                    "label {v} in ground-truth map exceeds label count {labels}"
                )));
            }
            present[v] = true;
        }
        for a in 0..labels {
            if !present[a] {
                continue;
            }
            for b in 0..labels {
                if present[b] {
                    joint[a * labels + b] += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidValue(
            "co-occurrence estimation needs at least one map".into(),
        ));
    }

    let mut costs = vec![0.0f64; labels * labels];
    let mut max = 0.0f64;
    for a in 0..labels {
        for b in 0..labels {
            if a == b {
                continue;
            }
            let c = (-(((joint[a * labels + b] + 1) as f64) / ((count + 1) as f64)).ln()).max(0.0);
            costs[a * labels + b] = c;
            max = max.max(c);
        }
    }
    if max > 0.0 {
        for c in costs.iter_mut() {
            *c /= max;
        }
    }
    CooccurrenceModel::new(labels, costs, 1.0)
}
