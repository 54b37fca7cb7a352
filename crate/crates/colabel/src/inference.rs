//! The mean-field engine: initializes marginals from unaries and iterates
//! parallel updates combining unary, filtered pairwise, Pn-Potts, and
//! co-occurrence terms over co-labeled frame windows.
//!
//! One update sweep computes, for every pixel `i` and label `l`,
//!
//! ```text
//! A(i,l) = unary(i,l)
//!        + potts(pairwise_message(Q))(i,l)
//!        + pn_potts_expectation(Q)(i,l)
//!        + cooccurrence_expectation(Q)(i,l)
//! Q'_i(l) = softmax_l(-A(i,l))
//! ```
//!
//! with every expectation taken under the *input* Q (a Jacobi-style parallel
//! schedule; no in-place sequential dependence). [`run_inference`] splits
//! the video into consecutive windows of `batch_size` frames, builds each
//! kernel's lattice once per window, and reuses it across iterations and
//! labels.

use std::time::Instant;

use crate::core::{
    argmax_labels, LabelMap, MeanFieldConfig, QField, SegmentationResult, UnaryField, VideoVolume,
};
use crate::error::{Error, Result};
use crate::lattice::{
    gaussian_filter_exact, ExactGaussian, GaussianFilter, PermutohedralLattice,
};
use crate::potentials::{
    build_feature_points, cooccurrence_expectation, pairwise_message, pn_potts_expectation,
    potts_transform, CooccurrenceModel, KernelSpec, PnPottsParams,
};
use crate::superpixels::CliqueLayerSet;
use crate::util::softmax_neg_into;

/// Marginal initialization `Q_i(l) = exp(-cost_i(l)) / sum_l' exp(-cost_i(l'))`.
pub fn init_q(unary: &UnaryField) -> QField {
    let n = unary.dims().pixels();
    let labels = unary.labels();
    let mut q = vec![0.0f64; n * labels];
    for pixel in 0..n {
        softmax_neg_into(
            unary.row(pixel),
            &mut q[pixel * labels..(pixel + 1) * labels],
        );
    }
    QField::from_parts_unchecked(unary.dims(), labels, q)
}

/// Largest absolute marginal change between two fields.
pub fn max_q_delta(a: &QField, b: &QField) -> Result<f64> {
    if a.dims() != b.dims() || a.labels() != b.labels() {
        return Err(Error::DimensionMismatch(format!(
            "marginal fields differ in shape: {:?}x{} vs {:?}x{}",
            a.dims(),
            a.labels(),
            b.dims(),
            b.labels()
        )));
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Everything a window's update steps need, with filter backends built once.
///
/// Build with [`WindowTerms::with_lattices`] for the production path or
/// [`WindowTerms::with_exact_filters`] to run the same step arithmetic over
/// the O(N^2) reference filter.
pub struct WindowTerms {
    kernels: Vec<(f64, Box<dyn GaussianFilter>)>,
    cliques: Option<(CliqueLayerSet, PnPottsParams)>,
    cooccurrence: Option<CooccurrenceModel>,
}

impl WindowTerms {
    pub fn with_lattices(
        video: &VideoVolume,
        specs: &[KernelSpec],
        cliques: Option<(CliqueLayerSet, PnPottsParams)>,
        cooccurrence: Option<CooccurrenceModel>,
    ) -> Result<Self> {
        let mut kernels: Vec<(f64, Box<dyn GaussianFilter>)> = Vec::with_capacity(specs.len());
        for spec in specs {
            let features = build_feature_points(video, spec)?;
            kernels.push((
                spec.weight(),
                Box::new(PermutohedralLattice::build(&features)),
            ));
        }
        Self::assemble(video, kernels, cliques, cooccurrence)
    }

    /// Same terms, but every kernel filters through [`ExactGaussian`]
    /// (subject to its point cap).
    pub fn with_exact_filters(
        video: &VideoVolume,
        specs: &[KernelSpec],
        cliques: Option<(CliqueLayerSet, PnPottsParams)>,
        cooccurrence: Option<CooccurrenceModel>,
        cap: usize,
    ) -> Result<Self> {
        let mut kernels: Vec<(f64, Box<dyn GaussianFilter>)> = Vec::with_capacity(specs.len());
        for spec in specs {
            let features = build_feature_points(video, spec)?;
            kernels.push((spec.weight(), Box::new(ExactGaussian::new(features, cap))));
        }
        Self::assemble(video, kernels, cliques, cooccurrence)
    }

    fn assemble(
        video: &VideoVolume,
        kernels: Vec<(f64, Box<dyn GaussianFilter>)>,
        cliques: Option<(CliqueLayerSet, PnPottsParams)>,
        cooccurrence: Option<CooccurrenceModel>,
    ) -> Result<Self> {
        if let Some((set, params)) = &cliques {
            if set.dims() != video.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "clique layers cover {:?}, window is {:?}",
                    set.dims(),
                    video.dims()
                )));
            }
            params.validate(set.layers().len())?;
        }
        Ok(Self {
            kernels,
            cliques,
            cooccurrence,
        })
    }
}

/// One parallel mean-field sweep; every term is evaluated under the input
/// marginals.
pub fn mean_field_step(
    q: &QField,
    unary: &UnaryField,
    terms: &WindowTerms,
    config: &MeanFieldConfig,
) -> Result<QField> {
    if q.dims() != unary.dims() || q.labels() != unary.labels() {
        return Err(Error::DimensionMismatch(format!(
            "marginals {:?}x{} vs unary {:?}x{}",
            q.dims(),
            q.labels(),
            unary.dims(),
            unary.labels()
        )));
    }
    let n = q.dims().pixels();
    let labels = q.labels();

    let kernel_refs: Vec<(f64, &dyn GaussianFilter)> = terms
        .kernels
        .iter()
        .map(|(w, f)| (*w, f.as_ref()))
        .collect();
    let mut exponent = if kernel_refs.is_empty() {
        vec![0.0f64; n * labels]
    } else {
        potts_transform(&pairwise_message(q, &kernel_refs)?, labels)
    };

    if let Some((cliques, params)) = &terms.cliques {
        let ho = pn_potts_expectation(q, cliques, params, config.q_floor)?;
        for (e, h) in exponent.iter_mut().zip(&ho) {
            *e += h;
        }
    }
    if let Some(model) = &terms.cooccurrence {
        let co = cooccurrence_expectation(q, model, config.q_floor)?;
        for (e, c) in exponent.iter_mut().zip(&co) {
            *e += c;
        }
    }
    for (e, u) in exponent.iter_mut().zip(unary.values()) {
        *e += u;
    }

    let mut next = vec![0.0f64; n * labels];
    for pixel in 0..n {
        softmax_neg_into(
            &exponent[pixel * labels..(pixel + 1) * labels],
            &mut next[pixel * labels..(pixel + 1) * labels],
        );
    }
    Ok(QField::from_parts_unchecked(q.dims(), labels, next))
}

/// Brute-force reference sweep with the same contract as
/// [`mean_field_step`]: exact Gaussian sums and direct (quadratic)
/// leave-one-out clique products, sharing no arithmetic with the fast path
/// beyond [`gaussian_filter_exact`]. O(N^2); refuses windows above `cap`.
#[allow(clippy::too_many_arguments)]
pub fn mean_field_step_exact(
    q: &QField,
    unary: &UnaryField,
    video: &VideoVolume,
    specs: &[KernelSpec],
    cliques: Option<(&CliqueLayerSet, &PnPottsParams)>,
    cooccurrence: Option<&CooccurrenceModel>,
    config: &MeanFieldConfig,
    cap: usize,
) -> Result<QField> {
    let n = q.dims().pixels();
    if n > cap {
        return Err(Error::CapExceeded(format!(
            "exact mean-field step over {n} pixels exceeds cap {cap}"
        )));
    }
    if q.dims() != unary.dims() || q.labels() != unary.labels() || q.dims() != video.dims() {
        return Err(Error::DimensionMismatch(
            "marginals, unary, and video must share one window".into(),
        ));
    }
    let labels = q.labels();
    let mut exponent = vec![0.0f64; n * labels];

    // Pairwise: filter each kernel exactly, subtract the self term, apply
    // the Potts total-minus-self per pixel.
    for spec in specs {
        let features = build_feature_points(video, spec)?;
        let filtered = gaussian_filter_exact(&features, q.values(), labels, cap)?;
        let w = spec.weight();
        for pixel in 0..n {
            let mut total = 0.0;
            for l in 0..labels {
                total += filtered[pixel * labels + l] - q.value(pixel, l);
            }
            for l in 0..labels {
                let msg = filtered[pixel * labels + l] - q.value(pixel, l);
                exponent[pixel * labels + l] += w * (total - msg);
            }
        }
    }

    // Pn-Potts: direct leave-one-out products per pixel (no shared clique
    // log-sums; quadratic in clique size by construction).
    if let Some((sets, params)) = cliques {
        if sets.dims() != q.dims() {
            return Err(Error::DimensionMismatch(
                "clique layers must cover the window".into(),
            ));
        }
        params.validate(sets.layers().len())?;
        for (layer, &gamma_max) in sets.layers().iter().zip(&params.gamma_max) {
            // clique membership lists
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); layer.clique_count()];
            for pixel in 0..n {
                members[layer.clique_id(pixel) as usize].push(pixel);
            }
            for clique in &members {
                for &i in clique {
                    for l in 0..labels {
                        let mut product = 1.0;
                        for &j in clique {
                            if j != i {
                                product *= q.value(j, l).max(config.q_floor);
                            }
                        }
                        exponent[i * labels + l] +=
                            params.gamma_low * product + gamma_max * (1.0 - product);
                    }
                }
            }
        }
    }

    // Co-occurrence: direct product over all other pixels per (pixel, label).
    if let Some(model) = cooccurrence {
        if model.labels() != labels {
            return Err(Error::DimensionMismatch(
                "co-occurrence matrix must match the label count".into(),
            ));
        }
        if model.weight > 0.0 {
            for i in 0..n {
                for l in 0..labels {
                    let mut cost = 0.0;
                    for lp in 0..labels {
                        if lp == l {
                            continue;
                        }
                        let mut absent = 1.0;
                        for j in 0..n {
                            if j != i {
                                absent *= (1.0 - q.value(j, lp)).max(config.q_floor);
                            }
                        }
                        cost += model.cost(l, lp) * (1.0 - absent);
                    }
                    exponent[i * labels + l] += model.weight * cost;
                }
            }
        }
    }

    for (e, u) in exponent.iter_mut().zip(unary.values()) {
        *e += u;
    }
    let mut next = vec![0.0f64; n * labels];
    for pixel in 0..n {
        softmax_neg_into(
            &exponent[pixel * labels..(pixel + 1) * labels],
            &mut next[pixel * labels..(pixel + 1) * labels],
        );
    }
    Ok(QField::from_parts_unchecked(q.dims(), labels, next))
}

/// Full inference: windows the video into `batch_size`-frame batches, runs
/// `iterations` sweeps per window (early-stopping on `convergence_tol` when
/// set), and concatenates the argmax labels.
pub fn run_inference(
    video: &VideoVolume,
    unary: &UnaryField,
    specs: &[KernelSpec],
    cliques: Option<(&CliqueLayerSet, &PnPottsParams)>,
    cooccurrence: Option<&CooccurrenceModel>,
    config: &MeanFieldConfig,
) -> Result<SegmentationResult> {
    config.validate()?;
    if unary.dims() != video.dims() {
        return Err(Error::DimensionMismatch(format!(
            "unary field covers {:?}, video is {:?}",
            unary.dims(),
            video.dims()
        )));
    }
    if let Some((sets, _)) = cliques {
        if sets.dims() != video.dims() {
            return Err(Error::DimensionMismatch(format!(
                "clique layers cover {:?}, video is {:?}",
                sets.dims(),
                video.dims()
            )));
        }
    }
    for spec in specs {
        spec.validate()?;
    }

    let start = Instant::now();
    let dims = video.dims();
    let labels = unary.labels();
    let mut all_q = Vec::with_capacity(dims.pixels() * labels);
    let mut iterations_run = 0usize;

    let mut t0 = 0;
    while t0 < dims.t {
        let t1 = (t0 + config.batch_size).min(dims.t);
        let window_video = video.window(t0, t1);
        let window_unary = unary.window(t0, t1);
        let window_cliques = cliques
            .map(|(sets, params)| (sets.window(t0, t1), params.clone()));
        let terms = WindowTerms::with_lattices(
            &window_video,
            specs,
            window_cliques,
            cooccurrence.cloned(),
        )?;

        let mut q = init_q(&window_unary);
        for _ in 0..config.iterations {
            let next = mean_field_step(&q, &window_unary, &terms, config)?;
            iterations_run += 1;
            let delta = match config.convergence_tol {
                Some(_) => max_q_delta(&q, &next)?,
                None => f64::INFINITY,
            };
            q = next;
            if let Some(tol) = config.convergence_tol {
                if delta < tol {
                    break;
                }
            }
        }
        all_q.extend_from_slice(q.values());
        t0 = t1;
    }

    let final_q = QField::from_parts_unchecked(dims, labels, all_q);
    let labels_map: LabelMap = argmax_labels(&final_q);
    Ok(SegmentationResult {
        labels: labels_map,
        final_q: Some(final_q),
        iterations_run,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{unary_from_probabilities, VolumeDims};
    use crate::superpixels::SegmentationMap;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(t: usize, h: usize, w: usize) -> VolumeDims {
        VolumeDims::new(t, h, w).unwrap()
    }

    fn random_unary(seed: u64, d: VolumeDims, labels: usize) -> UnaryField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs: Vec<f64> = (0..d.pixels() * labels)
            .map(|_| rng.gen::<f64>() * 4.0)
            .collect();
        UnaryField::new(d, labels, costs).unwrap()
    }

    fn random_q(seed: u64, d: VolumeDims, labels: usize) -> QField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = Vec::with_capacity(d.pixels() * labels);
        for _ in 0..d.pixels() {
            let raw: Vec<f64> = (0..labels).map(|_| rng.gen::<f64>() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            q.extend(raw.iter().map(|v| v / sum));
        }
        QField::new(d, labels, q).unwrap()
    }

    #[test]
    fn init_q_matches_analytic_softmax() {
        let d = dims(1, 1, 1);
        let unary = UnaryField::new(d, 2, vec![0.0, std::f64::consts::LN_2]).unwrap();
        let q = init_q(&unary);
        assert_abs_diff_eq!(q.value(0, 0), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.value(0, 1), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn init_q_equal_costs_is_uniform() {
        let d = dims(1, 2, 1);
        let unary = UnaryField::new(d, 4, vec![7.25; 8]).unwrap();
        let q = init_q(&unary);
        for pixel in 0..2 {
            for l in 0..4 {
                assert_abs_diff_eq!(q.value(pixel, l), 0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn init_q_is_stable_under_large_gaps() {
        let d = dims(1, 1, 1);
        let unary = UnaryField::new(d, 2, vec![0.0, 50.0]).unwrap();
        let q = init_q(&unary);
        assert_abs_diff_eq!(q.value(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.value(0, 1), 1.928749847963918e-22, epsilon = 1e-30);
        assert_abs_diff_eq!(q.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(q.validate_simplex().is_ok());
    }

    #[test]
    fn step_with_no_terms_collapses_to_init() {
        let d = dims(1, 3, 3);
        let unary = random_unary(5, d, 3);
        let video = VideoVolume::new(d, vec![[0, 0, 0]; d.pixels()]).unwrap();
        let terms = WindowTerms::with_lattices(&video, &[], None, None).unwrap();
        let q_in = random_q(7, d, 3);
        let q_out = mean_field_step(&q_in, &unary, &terms, &MeanFieldConfig::default()).unwrap();
        let expect = init_q(&unary);
        assert_eq!(q_out.values(), expect.values(), "must collapse bit-exactly");
    }

    #[test]
    fn single_pixel_step_reduces_to_init() {
        // pairwise and leave-one-out terms vanish on N=1; gamma_low shifts
        // cancel inside the softmax
        let d = dims(1, 1, 1);
        let unary = random_unary(11, d, 3);
        let video = VideoVolume::new(d, vec![[9, 9, 9]]).unwrap();
        let map = SegmentationMap::from_raw(1, 1, &[0]).unwrap();
        let cliques = CliqueLayerSet::from_layer_maps(d, vec![vec![map]]).unwrap();
        let params = PnPottsParams {
            gamma_low: 0.7,
            gamma_max: vec![1.5],
        };
        let cooc =
            CooccurrenceModel::new(3, vec![0.0, 1.0, 0.5, 1.0, 0.0, 0.2, 0.5, 0.2, 0.0], 2.0)
                .unwrap();
        let terms = WindowTerms::with_lattices(
            &video,
            &KernelSpec::default_kernels(),
            Some((cliques, params)),
            Some(cooc),
        )
        .unwrap();
        let q_out = mean_field_step(
            &random_q(13, d, 3),
            &unary,
            &terms,
            &MeanFieldConfig::default(),
        )
        .unwrap();
        let expect = init_q(&unary);
        for l in 0..3 {
            assert_abs_diff_eq!(q_out.value(0, l), expect.value(0, l), epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_step_agrees_at_zero_weights() {
        let d = dims(1, 2, 2);
        let unary = random_unary(17, d, 2);
        let video = VideoVolume::new(d, vec![[3, 3, 3]; 4]).unwrap();
        let specs = vec![KernelSpec::Smoothness {
            weight: 0.0,
            theta_gamma: 1.0,
            theta_tau: 1.0,
        }];
        let config = MeanFieldConfig::default();
        let q = random_q(19, d, 2);
        let fast = {
            let terms = WindowTerms::with_lattices(&video, &specs, None, None).unwrap();
            mean_field_step(&q, &unary, &terms, &config).unwrap()
        };
        let exact =
            mean_field_step_exact(&q, &unary, &video, &specs, None, None, &config, 100).unwrap();
        assert_eq!(fast.values(), exact.values());
    }

    #[test]
    fn exact_step_matches_hand_evaluated_closed_form() {
        // 2 pixels, 2 labels, one smoothness kernel; evaluate the update
        // equation by hand in independent arithmetic.
        let d = dims(1, 1, 2);
        let unary = UnaryField::new(d, 2, vec![0.3, 1.1, 0.9, 0.2]).unwrap();
        let video = VideoVolume::new(d, vec![[0, 0, 0], [0, 0, 0]]).unwrap();
        let theta = 1.7;
        let w = 2.3;
        let specs = vec![KernelSpec::Smoothness {
            weight: w,
            theta_gamma: theta,
            theta_tau: 1.0,
        }];
        let q = QField::new(d, 2, vec![0.6, 0.4, 0.25, 0.75]).unwrap();
        let config = MeanFieldConfig::default();
        let out = mean_field_step_exact(
            &q, &unary, &video, &specs, None, None, &config, 100,
        )
        .unwrap();

        // hand evaluation: k = exp(-(1/theta)^2 / 2); message to pixel 0 at
        // label l is k*Q_1(l); potts swaps labels; softmax of -(u + w*potts)
        let k = (-(1.0 / theta) * (1.0 / theta) / 2.0).exp();
        let mut expect = Vec::new();
        for (i, other) in [(0usize, 1usize), (1, 0)] {
            let m0 = k * q.value(other, 0);
            let m1 = k * q.value(other, 1);
            let a0 = unary.cost(i, 0) + w * m1;
            let a1 = unary.cost(i, 1) + w * m0;
            let z = (-a0).exp() + (-a1).exp();
            expect.push((-a0).exp() / z);
            expect.push((-a1).exp() / z);
        }
        for (got, want) in out.values().iter().zip(&expect) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_step_is_linear_in_the_message_path() {
        // doubling the kernel weight must equal doubling the potts term:
        // cross-check through the pairwise_message oracle path
        let d = dims(1, 2, 3);
        let n = d.pixels();
        let labels = 2;
        let unary = random_unary(23, d, labels);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let rgb: Vec<[u8; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let video = VideoVolume::new(d, rgb).unwrap();
        let q = random_q(31, d, labels);
        let config = MeanFieldConfig::default();

        let spec_w = |weight: f64| {
            vec![KernelSpec::Appearance {
                weight,
                theta_alpha: 3.0,
                theta_beta: 40.0,
                theta_tau: 1.0,
            }]
        };
        let out2 = mean_field_step_exact(
            &q, &unary, &video, &spec_w(2.0), None, None, &config, 100,
        )
        .unwrap();

        // reconstruct via the potentials oracle path: message with weight 1,
        // potts, then scale by 2 inside the exponent
        let feats = build_feature_points(&video, &spec_w(1.0)[0]).unwrap();
        let exact = ExactGaussian::new(feats, 100);
        let message = pairwise_message(&q, &[(1.0, &exact)]).unwrap();
        let potts = potts_transform(&message, labels);
        let mut expect = vec![0.0; n * labels];
        for pixel in 0..n {
            let mut row = vec![0.0; labels];
            for l in 0..labels {
                row[l] = unary.cost(pixel, l) + 2.0 * potts[pixel * labels + l];
            }
            crate::util::softmax_neg_into(&row, &mut expect[pixel * labels..(pixel + 1) * labels]);
        }
        for (got, want) in out2.values().iter().zip(&expect) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn lattice_step_tracks_exact_step() {
        // seeded 12x12, L=3, all term types enabled
        let d = dims(1, 12, 12);
        let labels = 3;
        let n = d.pixels();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let rgb: Vec<[u8; 3]> = (0..n)
            .map(|_| {
                let v = rng.gen_range(0..3) * 90 + 20;
                [v as u8, (v / 2) as u8, rng.gen()]
            })
            .collect();
        let video = VideoVolume::new(d, rgb).unwrap();
        let unary = random_unary(41, d, labels);
        let q = init_q(&unary);
        let specs = vec![
            KernelSpec::Smoothness {
                weight: 2.0,
                theta_gamma: 2.0,
                theta_tau: 1.0,
            },
            KernelSpec::Appearance {
                weight: 4.0,
                theta_alpha: 6.0,
                theta_beta: 25.0,
                theta_tau: 2.0,
            },
            KernelSpec::GlobalAppearance {
                weight: 1.0,
                theta_beta_global: 25.0,
            },
        ];
        let raw: Vec<u32> = (0..n).map(|i| (i / 24) as u32).collect();
        let map = SegmentationMap::from_raw(12, 12, &raw).unwrap();
        let cliques = CliqueLayerSet::from_layer_maps(d, vec![vec![map]]).unwrap();
        let params = PnPottsParams {
            gamma_low: 0.0,
            gamma_max: vec![0.5],
        };
        let cooc = CooccurrenceModel::new(
            labels,
            vec![0.0, 0.6, 0.3, 0.6, 0.0, 0.9, 0.3, 0.9, 0.0],
            0.5,
        )
        .unwrap();
        let config = MeanFieldConfig::default();

        let fast = {
            let terms = WindowTerms::with_lattices(
                &video,
                &specs,
                Some((cliques.clone(), params.clone())),
                Some(cooc.clone()),
            )
            .unwrap();
            mean_field_step(&q, &unary, &terms, &config).unwrap()
        };
        let exact = mean_field_step_exact(
            &q,
            &unary,
            &video,
            &specs,
            Some((&cliques, &params)),
            Some(&cooc),
            &config,
            n,
        )
        .unwrap();

        let delta = max_q_delta(&fast, &exact).unwrap();
        assert!(delta <= 0.05, "max |dQ| = {delta}");
        let a = argmax_labels(&fast);
        let b = argmax_labels(&exact);
        let agree = a
            .values()
            .iter()
            .zip(b.values())
            .filter(|(x, y)| x == y)
            .count();
        assert!(
            agree as f64 >= 0.99 * n as f64,
            "argmax agreement {agree}/{n}"
        );
    }

    #[test]
    fn update_is_invariant_to_per_pixel_cost_shifts() {
        let d = dims(1, 4, 4);
        let labels = 3;
        let unary = random_unary(43, d, labels);
        let mut shifted_costs = unary.values().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for pixel in 0..d.pixels() {
            let shift = rng.gen::<f64>() * 10.0 - 5.0;
            for l in 0..labels {
                shifted_costs[pixel * labels + l] += shift;
            }
        }
        let shifted = UnaryField::new(d, labels, shifted_costs).unwrap();

        let video = VideoVolume::new(d, vec![[50, 100, 150]; d.pixels()]).unwrap();
        let specs = vec![KernelSpec::Smoothness {
            weight: 1.5,
            theta_gamma: 2.0,
            theta_tau: 1.0,
        }];
        let config = MeanFieldConfig::default();
        let q = random_q(53, d, labels);
        let terms = WindowTerms::with_lattices(&video, &specs, None, None).unwrap();
        let a = mean_field_step(&q, &unary, &terms, &config).unwrap();
        let b = mean_field_step(&q, &shifted, &terms, &config).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        assert_eq!(argmax_labels(&a).values(), argmax_labels(&b).values());
    }

    #[test]
    fn run_inference_rejects_zero_iterations() {
        let d = dims(1, 2, 2);
        let unary = random_unary(59, d, 2);
        let video = VideoVolume::new(d, vec![[0, 0, 0]; 4]).unwrap();
        let config = MeanFieldConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(run_inference(&video, &unary, &[], None, None, &config).is_err());
    }

    #[test]
    fn zero_weight_inference_reproduces_unary_argmax() {
        let d = dims(3, 4, 4);
        let unary = random_unary(61, d, 3);
        let video = VideoVolume::new(d, vec![[10, 20, 30]; d.pixels()]).unwrap();
        let config = MeanFieldConfig {
            iterations: 1,
            batch_size: 2,
            ..Default::default()
        };
        let result = run_inference(&video, &unary, &[], None, None, &config).unwrap();
        assert_eq!(
            result.labels.values(),
            argmax_labels(&init_q(&unary)).values()
        );
        assert_eq!(result.iterations_run, 2); // two windows, one sweep each
        result.final_q.unwrap().validate_simplex().unwrap();
    }

    #[test]
    fn convergence_tol_stops_early() {
        let d = dims(1, 3, 3);
        let unary = random_unary(67, d, 2);
        let video = VideoVolume::new(d, vec![[0, 0, 0]; d.pixels()]).unwrap();
        // no coupling terms: the first sweep already lands on the fixed point
        let config = MeanFieldConfig {
            iterations: 50,
            convergence_tol: Some(1e-12),
            ..Default::default()
        };
        let result = run_inference(&video, &unary, &[], None, None, &config).unwrap();
        assert!(
            result.iterations_run <= 2,
            "ran {} sweeps",
            result.iterations_run
        );
    }

    #[test]
    fn max_q_delta_basics() {
        let d = dims(1, 1, 2);
        let a = QField::new(d, 2, vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        assert_eq!(max_q_delta(&a, &a).unwrap(), 0.0);
        let b = QField::new(d, 2, vec![0.2, 0.8, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(max_q_delta(&a, &b).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(
            max_q_delta(&a, &b).unwrap(),
            max_q_delta(&b, &a).unwrap(),
            epsilon = 0.0
        );
        let c = QField::new(dims(1, 1, 1), 2, vec![0.5, 0.5]).unwrap();
        assert!(max_q_delta(&a, &c).is_err());
    }
}
