//! Evaluation metrics (accuracy, mIoU, temporal stability) and the seeded
//! synthetic scene generator used for desk-scale end-to-end tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{
    hue_color, unary_from_probabilities, LabelMap, LabelSet, UnaryField, VideoVolume, VolumeDims,
};
use crate::error::{Error, Result};

fn check_shapes(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch(format!(
            "prediction covers {:?}, ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Fraction of non-ignored pixels labeled correctly.
pub fn global_accuracy(pred: &LabelMap, gt: &LabelMap, ignore: Option<u32>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut total = 0usize;
    let mut correct = 0usize;
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if Some(g) == ignore {
            continue;
        }
        total += 1;
        correct += usize::from(p == g);
    }
    if total == 0 {
        return Err(Error::EmptyEvaluation(
            "every pixel carries the ignore label".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Mean per-class recall over the classes present in the ground truth.
pub fn class_average_accuracy(
    pred: &LabelMap,
    gt: &LabelMap,
    labels: usize,
    ignore: Option<u32>,
) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut total = vec![0u64; labels];
    let mut correct = vec![0u64; labels];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if Some(g) == ignore {
            continue;
        }
        let g = g as usize;
        if g >= labels {
            return Err(Error::InvalidValue(format!(
                "ground-truth label {g} exceeds label count {labels}"
            )));
        }
        total[g] += 1;
        correct[g] += u64::from(p as usize == g);
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for l in 0..labels {
        if total[l] > 0 {
            sum += correct[l] as f64 / total[l] as f64;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::EmptyEvaluation(
            "no class present in the ground truth".into(),
        ));
    }
    Ok(sum / present as f64)
}

/// Mean intersection-over-union over classes with nonzero union. Pixels
/// whose ground truth carries the ignore label are excluded entirely.
pub fn mean_iou(pred: &LabelMap, gt: &LabelMap, labels: usize, ignore: Option<u32>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut inter = vec![0u64; labels];
    let mut union = vec![0u64; labels];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if Some(g) == ignore {
            continue;
        }
        let (p, g) = (p as usize, g as usize);
        if g >= labels || p >= labels {
            return Err(Error::InvalidValue(format!(
                "label ({p}, {g}) exceeds label count {labels}"
            )));
        }
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for l in 0..labels {
        if union[l] > 0 {
            sum += inter[l] as f64 / union[l] as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyEvaluation("no class has nonzero union".into()));
    }
    Ok(sum / counted as f64)
}

/// Fraction of color-static pixels whose predicted label persists across
/// consecutive frames.
///
/// A pixel qualifies at frame pair (t, t+1) when its RGB change (max channel
/// absolute difference) is at most `color_eps`. This needs no optical flow
/// and quantifies flicker on static content; moving content is excluded.
pub fn temporal_stability(pred: &LabelMap, video: &VideoVolume, color_eps: u8) -> Result<f64> {
    if pred.dims() != video.dims() {
        return Err(Error::DimensionMismatch(format!(
            "prediction covers {:?}, video {:?}",
            pred.dims(),
            video.dims()
        )));
    }
    let dims = video.dims();
    if dims.t < 2 {
        return Err(Error::InvalidValue(
            "temporal stability needs at least 2 frames".into(),
        ));
    }
    let fp = dims.h * dims.w;
    let mut qualifying = 0u64;
    let mut stable = 0u64;
    for t in 0..dims.t - 1 {
        for p in 0..fp {
            let a = video.rgb(t * fp + p);
            let b = video.rgb((t + 1) * fp + p);
            let change = (0..3)
                .map(|c| (a[c] as i16 - b[c] as i16).unsigned_abs())
                .max()
                .unwrap();
            if change <= color_eps as u16 {
                qualifying += 1;
                stable += u64::from(pred.values()[t * fp + p] == pred.values()[(t + 1) * fp + p]);
            }
        }
    }
    if qualifying == 0 {
        return Err(Error::EmptyEvaluation(
            "no color-static pixel between any consecutive frames".into(),
        ));
    }
    Ok(stable as f64 / qualifying as f64)
}

/// A generated scene: video, ground truth, unaries, and the label set.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub video: VideoVolume,
    pub gt: LabelMap,
    pub unary: UnaryField,
    pub labels: LabelSet,
}

/// Deterministic synthetic stand-in for real footage with classifier
/// unaries: `l` translating colored rectangles (label `1 + k mod (l-1)`,
/// painter's order) over a label-0 background, Gaussian pixel noise of
/// sigma 8 on the palette colors, and unaries that blend the true label with
/// seeded Dirichlet noise.
///
/// Unary corruption: with probability `unary_noise` a pixel's probability
/// row is a pure Dirichlet(1) sample (uninformative); otherwise it is
/// `(1-unary_noise) * onehot(gt) + unary_noise * dirichlet`. Argmax accuracy
/// therefore decreases monotonically in `unary_noise`, reaching chance at 1.
pub fn synthesize_scene(
    seed: u64,
    t: usize,
    h: usize,
    w: usize,
    l: usize,
    unary_noise: f64,
) -> Result<SyntheticScene> {
    let dims = VolumeDims::new(t, h, w)?;
    if l < 2 {
        return Err(Error::InvalidValue(format!(
            "scene needs at least 2 labels, got {l}"
        )));
    }
    if !(0.0..=1.0).contains(&unary_noise) {
        return Err(Error::InvalidValue(format!(
            "unary_noise must lie in [0, 1], got {unary_noise}"
        )));
    }
    let labels = LabelSet::generated(l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Rectangles: position, size, velocity, label (painter's order).
    struct Rect {
        x0: i64,
        y0: i64,
        rw: i64,
        rh: i64,
        vx: i64,
        vy: i64,
        label: u32,
    }
    let rects: Vec<Rect> = (0..l)
        .map(|k| {
            let rw = rng.gen_range((w as i64 / 4).max(1)..=(w as i64 / 2).max(1));
            let rh = rng.gen_range((h as i64 / 4).max(1)..=(h as i64 / 2).max(1));
            let x0 = rng.gen_range(0..(w as i64 - rw / 2).max(1));
            let y0 = rng.gen_range(0..(h as i64 - rh / 2).max(1));
            // unit-speed velocity, never (0, 0)
            let (vx, vy) = loop {
                let v = (rng.gen_range(-1i64..=1), rng.gen_range(-1i64..=1));
                if v != (0, 0) {
                    break v;
                }
            };
            Rect {
                x0,
                y0,
                rw,
                rh,
                vx,
                vy,
                label: 1 + (k as u32 % (l as u32 - 1)),
            }
        })
        .collect();

    let mut gt = vec![0u32; dims.pixels()];
    for frame in 0..t {
        let base = frame * h * w;
        for rect in &rects {
            let x0 = rect.x0 + rect.vx * frame as i64;
            let y0 = rect.y0 + rect.vy * frame as i64;
            let (cx0, cx1) = (x0.max(0), (x0 + rect.rw).min(w as i64));
            let (cy0, cy1) = (y0.max(0), (y0 + rect.rh).min(h as i64));
            for y in cy0..cy1 {
                for x in cx0..cx1 {
                    gt[base + (y as usize) * w + x as usize] = rect.label;
                }
            }
        }
    }

    // Colors: palette + Gaussian noise (sigma 8), clamped to [0, 255].
    let sigma = 8.0;
    let mut rgb = Vec::with_capacity(dims.pixels());
    for &g in &gt {
        let base = hue_color(g as usize, l);
        let px = [
            base[0] as f64 + sigma * gaussian(&mut rng),
            base[1] as f64 + sigma * gaussian(&mut rng),
            base[2] as f64 + sigma * gaussian(&mut rng),
        ];
        rgb.push([
            px[0].round().clamp(0.0, 255.0) as u8,
            px[1].round().clamp(0.0, 255.0) as u8,
            px[2].round().clamp(0.0, 255.0) as u8,
        ]);
    }
    let video = VideoVolume::new(dims, rgb)?;

    // Unary probabilities.
    let mut probs = Vec::with_capacity(dims.pixels() * l);
    for &g in &gt {
        let dirichlet = dirichlet_flat(&mut rng, l);
        let flip = rng.gen::<f64>() < unary_noise;
        for (lab, &d) in dirichlet.iter().enumerate() {
            let p = if flip {
                d
            } else {
                let onehot = f64::from(lab as u32 == g);
                (1.0 - unary_noise) * onehot + unary_noise * d
            };
            probs.push(p);
        }
    }
    let unary = unary_from_probabilities(dims, l, &probs, 1e-10)?;

    Ok(SyntheticScene {
        video,
        gt: LabelMap::new(dims, gt)?,
        unary,
        labels,
    })
}

/// Standard normal via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Dirichlet(1, ..., 1) sample: normalized unit exponentials.
fn dirichlet_flat(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..l)
        .map(|_| -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln())
        .collect();
    let sum: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / sum).collect()
}
