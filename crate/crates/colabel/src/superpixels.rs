//! Mean-shift segmentation of individual frames and assembly of the
//! multi-layer clique structures the Pn-Potts terms run over.
//!
//! Segmentation per frame, in order:
//!
//! 1. every pixel's 5-d feature `(x/h_s, y/h_s, r/h_r, g/h_r, b/h_r)` is
//!    iterated to its mode by repeated weighted-mean shifts under a flat
//!    window of radius 1 in scaled space;
//! 2. 4-adjacent pixels whose modes lie within 1 scaled unit are grouped;
//! 3. regions smaller than `min_region_size` are merged into the 4-adjacent
//!    region with the closest mean color (smallest region first, ties toward
//!    the lower provisional id);
//! 4. ids are relabeled contiguously in raster-scan order of first
//!    occurrence.
//!
//! Cliques never span frames: temporal coupling comes from the pairwise
//! kernels, not from spatio-temporal superpixels. Layers stack several
//! segmentations of varying granularity over the same frames.

use rayon::prelude::*;

use crate::core::{FrameView, VideoVolume, VolumeDims};
use crate::error::{Error, Result};
use crate::util;

/// Mean-shift parameters for one clique layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanShiftParams {
    /// Spatial bandwidth `h_s` in pixels.
    pub spatial_bandwidth: f64,
    /// Color bandwidth `h_r` in 0-255 intensity units.
    pub range_bandwidth: f64,
    /// Regions smaller than this are merged away.
    pub min_region_size: usize,
    pub max_iterations: usize,
    /// Stop once the feature-space displacement falls below this.
    pub convergence_eps: f64,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        Self {
            spatial_bandwidth: 7.0,
            range_bandwidth: 6.5,
            min_region_size: 20,
            max_iterations: 50,
            convergence_eps: 0.1,
        }
    }
}

impl MeanShiftParams {
    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, ok: bool, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidValue(format!(
                    "mean-shift {what} must be positive, got {v}"
                )))
            }
        };
        check(
            "spatial_bandwidth",
            self.spatial_bandwidth > 0.0,
            self.spatial_bandwidth,
        )?;
        check(
            "range_bandwidth",
            self.range_bandwidth > 0.0,
            self.range_bandwidth,
        )?;
        check(
            "min_region_size",
            self.min_region_size >= 1,
            self.min_region_size as f64,
        )?;
        check(
            "max_iterations",
            self.max_iterations >= 1,
            self.max_iterations as f64,
        )?;
        check(
            "convergence_eps",
            self.convergence_eps > 0.0,
            self.convergence_eps,
        )?;
        Ok(())
    }

    /// The default three coarse-to-fine layers.
    pub fn default_layers() -> Vec<MeanShiftParams> {
        vec![
            MeanShiftParams {
                spatial_bandwidth: 7.0,
                range_bandwidth: 6.5,
                min_region_size: 20,
                ..Default::default()
            },
            MeanShiftParams {
                spatial_bandwidth: 7.0,
                range_bandwidth: 9.5,
                min_region_size: 50,
                ..Default::default()
            },
            MeanShiftParams {
                spatial_bandwidth: 7.0,
                range_bandwidth: 13.0,
                min_region_size: 100,
                ..Default::default()
            },
        ]
    }
}

/// One frame's partition into regions with contiguous ids `0..R-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    h: usize,
    w: usize,
    labels: Vec<u32>,
    regions: usize,
}

impl SegmentationMap {
    /// Wraps raw region ids, relabeling them contiguously in raster-scan
    /// order of first occurrence.
    pub fn from_raw(h: usize, w: usize, raw: &[u32]) -> Result<Self> {
        if h == 0 || w == 0 || raw.len() != h * w {
            return Err(Error::DimensionMismatch(format!(
                "region map has {} entries for {h}x{w}",
                raw.len()
            )));
        }
        let mut remap = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len() as u32;
            let id = *remap.entry(r).or_insert(next);
            labels.push(id);
        }
        let regions = remap.len();
        Ok(Self {
            h,
            w,
            labels,
            regions,
        })
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn region_count(&self) -> usize {
        self.regions
    }

    #[inline]
    pub fn region(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.w + x]
    }

    pub fn values(&self) -> &[u32] {
        &self.labels
    }
}

/// Runs the full mean-shift segmentation of one frame.
pub fn meanshift_segment(frame: FrameView<'_>, params: &MeanShiftParams) -> SegmentationMap {
    debug_assert!(params.validate().is_ok());
    let (h, w) = (frame.h, frame.w);
    let n = h * w;
    let hs = params.spatial_bandwidth;
    let hr = params.range_bandwidth;

    // Scaled 5-d features per pixel.
    let mut feats = vec![0.0f64; n * 5];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = frame.rgb[y * w + x];
            let f = &mut feats[(y * w + x) * 5..(y * w + x) * 5 + 5];
            f[0] = x as f64 / hs;
            f[1] = y as f64 / hs;
            f[2] = r as f64 / hr;
            f[3] = g as f64 / hr;
            f[4] = b as f64 / hr;
        }
    }

    // Mode seeking. The flat window of radius 1 in scaled space only reaches
    // pixels within +-h_s spatially, so each shift scans that box.
    util::ensure_thread_pool();
    let box_r = hs.ceil() as i64;
    let mut modes = vec![0.0f64; n * 5];
    modes
        .par_chunks_mut(5)
        .enumerate()
        .for_each(|(pixel, mode)| {
            let mut cur = [0.0f64; 5];
            cur.copy_from_slice(&feats[pixel * 5..pixel * 5 + 5]);
            for _ in 0..params.max_iterations {
                let cx = (cur[0] * hs).round() as i64;
                let cy = (cur[1] * hs).round() as i64;
                let mut acc = [0.0f64; 5];
                let mut count = 0usize;
                for yy in (cy - box_r).max(0)..=(cy + box_r).min(h as i64 - 1) {
                    for xx in (cx - box_r).max(0)..=(cx + box_r).min(w as i64 - 1) {
                        let j = (yy as usize) * w + xx as usize;
                        let fj = &feats[j * 5..j * 5 + 5];
                        let mut d2 = 0.0;
                        for k in 0..5 {
                            let diff = fj[k] - cur[k];
                            d2 += diff * diff;
                        }
                        if d2 <= 1.0 {
                            for k in 0..5 {
                                acc[k] += fj[k];
                            }
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    break;
                }
                let mut shift2 = 0.0;
                for k in 0..5 {
                    let next = acc[k] / count as f64;
                    let diff = next - cur[k];
                    shift2 += diff * diff;
                    cur[k] = next;
                }
                if shift2.sqrt() < params.convergence_eps {
                    break;
                }
            }
            mode.copy_from_slice(&cur);
        });

    // Group 4-adjacent pixels with modes within 1 scaled unit.
    let mut uf = UnionFind::new(n);
    let close = |a: usize, b: usize| {
        let fa = &modes[a * 5..a * 5 + 5];
        let fb = &modes[b * 5..b * 5 + 5];
        let mut d2 = 0.0;
        for k in 0..5 {
            let diff = fa[k] - fb[k];
            d2 += diff * diff;
        }
        d2 <= 1.0
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w && close(i, i + 1) {
                uf.union(i, i + 1);
            }
            if y + 1 < h && close(i, i + w) {
                uf.union(i, i + w);
            }
        }
    }

    // Provisional contiguous ids in raster order of first occurrence.
    let mut provisional = vec![u32::MAX; n];
    let mut region_of_root = std::collections::HashMap::new();
    let mut regions = 0u32;
    for i in 0..n {
        let root = uf.find(i);
        let id = *region_of_root.entry(root).or_insert_with(|| {
            let id = regions;
            regions += 1;
            id
        });
        provisional[i] = id;
    }

    let merged = merge_small_regions(h, w, provisional, regions as usize, frame, params);
    SegmentationMap::from_raw(h, w, &merged).expect("merge preserves the frame partition")
}

/// Merges undersized regions into their closest-mean-color 4-neighbor,
/// smallest region first, until every region reaches `min_region_size` or
/// has no neighbor left to merge with.
fn merge_small_regions(
    h: usize,
    w: usize,
    mut labels: Vec<u32>,
    regions: usize,
    frame: FrameView<'_>,
    params: &MeanShiftParams,
) -> Vec<u32> {
    if regions <= 1 {
        return labels;
    }
    let n = h * w;
    let mut uf = UnionFind::new(regions);
    let mut size = vec![0u64; regions];
    let mut color = vec![[0.0f64; 3]; regions];
    for i in 0..n {
        let r = labels[i] as usize;
        size[r] += 1;
        let [cr, cg, cb] = frame.rgb[i];
        color[r][0] += cr as f64;
        color[r][1] += cg as f64;
        color[r][2] += cb as f64;
    }

    loop {
        // Smallest undersized root, ties toward the lower id.
        let mut candidate: Option<(u64, usize)> = None;
        for r in 0..regions {
            if uf.find(r) != r {
                continue;
            }
            if (size[r] as usize) < params.min_region_size {
                match candidate {
                    Some((s, _)) if s <= size[r] => {}
                    _ => candidate = Some((size[r], r)),
                }
            }
        }
        let Some((_, victim)) = candidate else { break };

        // Closest-mean-color 4-adjacent neighbor root.
        let mut best: Option<(f64, usize)> = None;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if uf.find(labels[i] as usize) != victim {
                    continue;
                }
                for (dy, dx) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let other = uf.find(labels[ny as usize * w + nx as usize] as usize);
                    if other == victim {
                        continue;
                    }
                    let dist =
                        color_distance(&color[victim], size[victim], &color[other], size[other]);
                    match best {
                        Some((d, o)) if d < dist || (d == dist && o <= other) => {}
                        _ => best = Some((dist, other)),
                    }
                }
            }
        }
        let Some((_, target)) = best else { break }; // no neighbor at all

        let root = uf.union_into(victim, target);
        let other = victim ^ target ^ root;
        size[root] += size[other];
        for k in 0..3 {
            color[root][k] += color[other][k];
        }
    }

    for l in labels.iter_mut() {
        *l = uf.find(*l as usize) as u32;
    }
    labels
}

fn color_distance(a: &[f64; 3], na: u64, b: &[f64; 3], nb: u64) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let diff = a[k] / na as f64 - b[k] / nb as f64;
        d2 += diff * diff;
    }
    d2
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Union keeping the lower root id as the representative.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Union returning the surviving root (the lower id).
    fn union_into(&mut self, a: usize, b: usize) -> usize {
        self.union(a, b);
        self.find(a)
    }
}

/// One clique layer: a segmentation per frame plus the layer-wide clique id
/// of every pixel (frame-contiguous, starting at 0).
#[derive(Debug, Clone)]
pub struct CliqueLayer {
    maps: Vec<SegmentationMap>,
    clique_ids: Vec<u32>,
    frame_offsets: Vec<u32>,
    clique_count: usize,
}

impl CliqueLayer {
    fn from_maps(dims: VolumeDims, maps: Vec<SegmentationMap>) -> Result<Self> {
        if maps.len() != dims.t {
            return Err(Error::DimensionMismatch(format!(
                "{} segmentation maps for {} frames",
                maps.len(),
                dims.t
            )));
        }
        let mut frame_offsets = Vec::with_capacity(dims.t + 1);
        let mut clique_ids = Vec::with_capacity(dims.pixels());
        let mut offset = 0u32;
        for (t, map) in maps.iter().enumerate() {
            if map.height() != dims.h || map.width() != dims.w {
                return Err(Error::DimensionMismatch(format!(
                    "segmentation map for frame {t} is {}x{}, video is {}x{}",
                    map.height(),
                    map.width(),
                    dims.h,
                    dims.w
                )));
            }
            frame_offsets.push(offset);
            clique_ids.extend(map.values().iter().map(|&r| offset + r));
            offset += map.region_count() as u32;
        }
        frame_offsets.push(offset);
        Ok(Self {
            maps,
            clique_ids,
            frame_offsets,
            clique_count: offset as usize,
        })
    }

    pub fn maps(&self) -> &[SegmentationMap] {
        &self.maps
    }

    /// Layer-wide clique id of a pixel (flat `[t][y][x]` index).
    #[inline]
    pub fn clique_id(&self, pixel: usize) -> u32 {
        self.clique_ids[pixel]
    }

    /// First clique id of each frame (plus the total as a final sentinel).
    pub fn frame_offsets(&self) -> &[u32] {
        &self.frame_offsets
    }

    pub fn clique_count(&self) -> usize {
        self.clique_count
    }
}

/// All clique layers over one video batch.
///
/// Layer-local ids become globally unique via per-layer bases: the global
/// clique id of pixel `i` in layer `m` is `layer_base(m) + clique_id(i)`.
#[derive(Debug, Clone)]
pub struct CliqueLayerSet {
    dims: VolumeDims,
    layers: Vec<CliqueLayer>,
    layer_bases: Vec<u64>,
}

impl CliqueLayerSet {
    /// Segments every frame with every parameter set (one layer per set).
    pub fn build(video: &VideoVolume, params_list: &[MeanShiftParams]) -> Result<Self> {
        if params_list.is_empty() {
            return Err(Error::InvalidValue(
                "clique construction needs at least one mean-shift parameter set".into(),
            ));
        }
        for p in params_list {
            p.validate()?;
        }
        util::ensure_thread_pool();
        let dims = video.dims();
        let mut layers = Vec::with_capacity(params_list.len());
        for params in params_list {
            let maps: Vec<SegmentationMap> = (0..dims.t)
                .into_par_iter()
                .map(|t| meanshift_segment(video.frame_view(t), params))
                .collect();
            layers.push(CliqueLayer::from_maps(dims, maps)?);
        }
        Ok(Self::assemble(dims, layers))
    }

    /// Assembles layers from precomputed per-frame segmentation maps.
    pub fn from_layer_maps(dims: VolumeDims, layers: Vec<Vec<SegmentationMap>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidValue(
                "clique construction needs at least one layer".into(),
            ));
        }
        let layers = layers
            .into_iter()
            .map(|maps| CliqueLayer::from_maps(dims, maps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(dims, layers))
    }

    fn assemble(dims: VolumeDims, layers: Vec<CliqueLayer>) -> Self {
        let mut layer_bases = Vec::with_capacity(layers.len());
        let mut base = 0u64;
        for layer in &layers {
            layer_bases.push(base);
            base += layer.clique_count() as u64;
        }
        Self {
            dims,
            layers,
            layer_bases,
        }
    }

    pub fn dims(&self) -> VolumeDims {
        self.dims
    }

    pub fn layers(&self) -> &[CliqueLayer] {
        &self.layers
    }

    /// Globally unique clique id across (layer, frame, region).
    pub fn global_clique_id(&self, layer: usize, pixel: usize) -> u64 {
        self.layer_bases[layer] + self.layers[layer].clique_id(pixel) as u64
    }

    pub fn total_cliques(&self) -> usize {
        self.layers.iter().map(|l| l.clique_count()).sum()
    }

    /// The clique structure restricted to the frame range `[t0, t1)`.
    pub fn window(&self, t0: usize, t1: usize) -> CliqueLayerSet {
        assert!(t0 < t1 && t1 <= self.dims.t, "bad window [{t0}, {t1})");
        let dims = VolumeDims {
            t: t1 - t0,
            h: self.dims.h,
            w: self.dims.w,
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                CliqueLayer::from_maps(dims, layer.maps[t0..t1].to_vec())
                    .expect("window of a valid layer stays valid")
            })
            .collect();
        Self::assemble(dims, layers)
    }
}

/// Loads a single-frame region map from a label-map file, relabeling ids
/// contiguously.
pub fn load_segmentation_map(path: impl AsRef<std::path::Path>) -> Result<SegmentationMap> {
    let map = crate::io::read_labelmap(path)?;
    let dims = map.dims();
    if dims.t != 1 {
        return Err(Error::DimensionMismatch(format!(
            "region-map file holds {} frames, expected exactly 1",
            dims.t
        )));
    }
    SegmentationMap::from_raw(dims.h, dims.w, map.values())
}

/// Loads one layer's per-frame region maps from a multi-frame label-map
/// file. Each frame is relabeled independently (cliques never span frames).
pub fn load_segmentation_layer(
    path: impl AsRef<std::path::Path>,
    expected: VolumeDims,
) -> Result<Vec<SegmentationMap>> {
    let map = crate::io::read_labelmap(&path)?;
    let dims = map.dims();
    if dims != expected {
        return Err(Error::DimensionMismatch(format!(
            "region-map file {} holds {}x{}x{}, video needs {}x{}x{}",
            path.as_ref().display(),
            dims.t,
            dims.h,
            dims.w,
            expected.t,
            expected.h,
            expected.w
        )));
    }
    (0..dims.t)
        .map(|t| SegmentationMap::from_raw(dims.h, dims.w, map.frame(t)))
        .collect()
}
