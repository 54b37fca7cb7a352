//! Bit-exact file formats and the run configuration.
//!
//! Three binary formats, all little-endian:
//!
//! - **PPM** (`P6`, maxval 255): frames in and color renderings out.
//! - **UNRY**: unary cost tensors. Magic `UNRY`, five `u32` header words
//!   (version=1, T, H, W, L), then `T*H*W*L` IEEE-754 `f32` values in
//!   `[t][y][x][l]` row-major order.
//! - **LMAP**: label maps (ground truth, predictions, region maps). Magic
//!   `LMAP`, four `u32` header words (version=1, T, H, W), then `T*H*W`
//!   `u32` label ids.
//!
//! Frame directories are read in **lexicographic filename order**; that
//! order *is* the temporal order. Misnamed frames silently break
//! co-labeling, so name frames with zero-padded indices.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::core::{LabelMap, LabelSet, MeanFieldConfig, UnaryField, VideoVolume, VolumeDims};
use crate::error::{Error, Result};
use crate::potentials::{CooccurrenceModel, KernelSpec, PnPottsParams};
use crate::superpixels::MeanShiftParams;

const UNARY_MAGIC: &[u8; 4] = b"UNRY";
const LABELMAP_MAGIC: &[u8; 4] = b"LMAP";
const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// PPM

/// Reads a binary P6 PPM with maxval 255.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;

    let magic = next_token(&bytes, &mut cursor)
        .ok_or_else(|| Error::format(path, "missing PPM magic"))?;
    if magic != b"P6" {
        return Err(Error::format(
            path,
            format!("bad PPM magic {:?}, expected \"P6\"", String::from_utf8_lossy(magic)),
        ));
    }
    let w = parse_ppm_int(&bytes, &mut cursor, path, "width")?;
    let h = parse_ppm_int(&bytes, &mut cursor, path, "height")?;
    let maxval = parse_ppm_int(&bytes, &mut cursor, path, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported, expected 255")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(path, format!("degenerate dimensions {w}x{h}")));
    }
    // exactly one whitespace byte separates the header from the payload
    cursor += 1;
    let need = w * h * 3;
    let have = bytes.len().saturating_sub(cursor);
    if have < need {
        return Err(Error::format(
            path,
            format!("truncated pixel data: need {need} bytes, found {have} ({} missing)", need - have),
        ));
    }
    let rgb = bytes[cursor..cursor + need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((h, w, rgb))
}

/// Writes a binary P6 PPM (`P6\n{w} {h}\n255\n` + raw RGB bytes).
pub fn write_ppm(path: impl AsRef<Path>, h: usize, w: usize, rgb: &[[u8; 3]]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != h * w {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for a {h}x{w} frame",
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(20 + rgb.len() * 3);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for px in rgb {
        out.extend_from_slice(px);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    // skip whitespace and '#' comments
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    if *cursor >= bytes.len() {
        return None;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    Some(&bytes[start..*cursor])
}

fn parse_ppm_int(bytes: &[u8], cursor: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = next_token(bytes, cursor)
        .ok_or_else(|| Error::format(path, format!("missing PPM {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            Error::format(
                path,
                format!("bad PPM {what}: {:?}", String::from_utf8_lossy(tok)),
            )
        })
}

// ---------------------------------------------------------------------------
// UNRY / LMAP

fn read_u32_le(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_header(path: &Path, bytes: &[u8], magic: &[u8; 4], words: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 + 4 * words {
        return Err(Error::format(
            path,
            format!("file too short for header: {} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let header: Vec<u32> = (0..words).map(|i| read_u32_le(bytes, 4 + 4 * i)).collect();
    if header[0] != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {}, expected {FORMAT_VERSION}", header[0]),
        ));
    }
    Ok(header)
}

/// Reads a UNRY unary-cost tensor.
pub fn read_unary(path: impl AsRef<Path>) -> Result<UnaryField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = check_header(path, &bytes, UNARY_MAGIC, 5)?;
    let (t, h, w, l) = (
        header[1] as usize,
        header[2] as usize,
        header[3] as usize,
        header[4] as usize,
    );
    let dims = VolumeDims::new(t, h, w)
        .map_err(|e| Error::format(path, format!("bad dimensions in header: {e}")))?;
    let count = dims
        .pixels()
        .checked_mul(l)
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    let payload = &bytes[24..];
    if payload.len() != count * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes, header {t}x{h}x{w}x{l} requires {}",
                payload.len(),
                count * 4
            ),
        ));
    }
    let mut costs = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!("non-finite cost {v} at flat index {i}"),
            ));
        }
        costs.push(v as f64);
    }
    UnaryField::new(dims, l, costs)
}

/// Writes a UNRY unary-cost tensor (values stored at f32 precision).
pub fn write_unary(path: impl AsRef<Path>, unary: &UnaryField) -> Result<()> {
    let path = path.as_ref();
    let dims = unary.dims();
    let mut out = Vec::with_capacity(24 + unary.values().len() * 4);
    out.extend_from_slice(UNARY_MAGIC);
    for v in [
        FORMAT_VERSION,
        dims.t as u32,
        dims.h as u32,
        dims.w as u32,
        unary.labels() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &c in unary.values() {
        out.extend_from_slice(&(c as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads an LMAP label map.
pub fn read_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = check_header(path, &bytes, LABELMAP_MAGIC, 4)?;
    let (t, h, w) = (header[1] as usize, header[2] as usize, header[3] as usize);
    let dims = VolumeDims::new(t, h, w)
        .map_err(|e| Error::format(path, format!("bad dimensions in header: {e}")))?;
    let payload = &bytes[20..];
    if payload.len() != dims.pixels() * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes, header {t}x{h}x{w} requires {}",
                payload.len(),
                dims.pixels() * 4
            ),
        ));
    }
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LabelMap::new(dims, labels)
}

/// Writes an LMAP label map.
pub fn write_labelmap(path: impl AsRef<Path>, map: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    let dims = map.dims();
    let mut out = Vec::with_capacity(20 + map.values().len() * 4);
    out.extend_from_slice(LABELMAP_MAGIC);
    for v in [FORMAT_VERSION, dims.t as u32, dims.h as u32, dims.w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in map.values() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Renders a label map through the palette to one PPM per frame named
/// `{stem}_{t:06}.ppm`; returns the written paths.
pub fn write_color_maps(
    dir: impl AsRef<Path>,
    stem: &str,
    map: &LabelMap,
    labels: &LabelSet,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let dims = map.dims();
    let mut paths = Vec::with_capacity(dims.t);
    for t in 0..dims.t {
        let rgb: Vec<[u8; 3]> = map
            .frame(t)
            .iter()
            .map(|&l| {
                if (l as usize) < labels.len() {
                    labels.color(l as usize)
                } else {
                    [0, 0, 0]
                }
            })
            .collect();
        let path = dir.join(format!("{stem}_{t:06}.ppm"));
        write_ppm(&path, dims.h, dims.w, &rgb)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Loads every `.ppm` in a directory as a video, frames ordered by
/// lexicographic filename comparison.
pub fn read_frames_dir(dir: impl AsRef<Path>) -> Result<VideoVolume> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "ppm").unwrap_or(false))
        .collect();
    if files.is_empty() {
        return Err(Error::InvalidValue(format!(
            "no .ppm frames in {}",
            dir.display()
        )));
    }
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        let (h, w, rgb) = read_ppm(f)?;
        frames.push((h, w, rgb));
    }
    VideoVolume::from_frames(&frames)
}

/// Reads a whitespace-separated square matrix of non-negative costs.
pub fn read_cooccurrence_matrix(path: impl AsRef<Path>) -> Result<CooccurrenceModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::format(path, format!("bad matrix entry {tok:?}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let l = rows.len();
    if l == 0 {
        return Err(Error::format(path, "empty co-occurrence matrix"));
    }
    let mut costs = Vec::with_capacity(l * l);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != l {
            return Err(Error::format(
                path,
                format!("row {i} has {} entries, expected {l}", row.len()),
            ));
        }
        costs.extend_from_slice(row);
    }
    CooccurrenceModel::new(l, costs, 1.0)
}

// ---------------------------------------------------------------------------
// Run configuration

/// Source of one Pn-Potts clique layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSource {
    /// Segment frames with these parameters at run time.
    MeanShift(MeanShiftParams),
    /// Load precomputed per-frame region maps from an LMAP file.
    Maps(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub gamma_max: f64,
    pub source: LayerSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnPottsConfig {
    pub gamma_low: f64,
    pub layers: Vec<LayerConfig>,
}

impl PnPottsConfig {
    pub fn params(&self) -> PnPottsParams {
        PnPottsParams {
            gamma_low: self.gamma_low,
            gamma_max: self.layers.iter().map(|l| l.gamma_max).collect(),
        }
    }
}

/// Where the co-occurrence matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CooccurrenceSource {
    Matrix(PathBuf),
    /// Estimate from the label maps in an LMAP file.
    EstimateFrom(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceConfig {
    pub weight: f64,
    pub source: Option<CooccurrenceSource>,
}

/// Full run configuration (the JSON config file, validated).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernels: Vec<KernelSpec>,
    pub pn_potts: PnPottsConfig,
    pub cooccurrence: CooccurrenceConfig,
    pub inference: MeanFieldConfig,
    pub labels: Option<LabelSet>,
}

impl Default for RunConfig {
    /// The documented defaults: three kernels, three mean-shift layers with
    /// gamma 0.5/0.4/0.3, co-occurrence off, five iterations over 50-frame
    /// windows.
    fn default() -> Self {
        let gammas = [0.5, 0.4, 0.3];
        RunConfig {
            kernels: KernelSpec::default_kernels(),
            pn_potts: PnPottsConfig {
                gamma_low: 0.0,
                layers: MeanShiftParams::default_layers()
                    .into_iter()
                    .zip(gammas)
                    .map(|(p, gamma_max)| LayerConfig {
                        gamma_max,
                        source: LayerSource::MeanShift(p),
                    })
                    .collect(),
            },
            cooccurrence: CooccurrenceConfig {
                weight: 0.0,
                source: None,
            },
            inference: MeanFieldConfig::default(),
            labels: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, k) in self.kernels.iter().enumerate() {
            k.validate()
                .map_err(|e| Error::Config(format!("kernels[{i}]: {e}")))?;
        }
        if self.pn_potts.gamma_low < 0.0 {
            return Err(Error::Config(format!(
                "pn_potts.gamma_low: must be >= 0, got {}",
                self.pn_potts.gamma_low
            )));
        }
        for (i, layer) in self.pn_potts.layers.iter().enumerate() {
            if !(layer.gamma_max > self.pn_potts.gamma_low) {
                return Err(Error::Config(format!(
                    "pn_potts.layers[{i}].gamma_max: must exceed gamma_low {}, got {}",
                    self.pn_potts.gamma_low, layer.gamma_max
                )));
            }
            if let LayerSource::MeanShift(p) = &layer.source {
                p.validate().map_err(|e| {
                    Error::Config(format!("pn_potts.layers[{i}].meanshift: {e}"))
                })?;
            }
        }
        if self.cooccurrence.weight < 0.0 {
            return Err(Error::Config(format!(
                "cooccurrence.weight: must be >= 0, got {}",
                self.cooccurrence.weight
            )));
        }
        if self.cooccurrence.weight > 0.0 && self.cooccurrence.source.is_none() {
            return Err(Error::Config(
                "cooccurrence.weight: positive weight needs a matrix or estimate_from source"
                    .into(),
            ));
        }
        self.inference
            .validate()
            .map_err(|e| Error::Config(format!("inference: {e}")))?;
        Ok(())
    }
}

mod raw {
    //! Serde mirror of the JSON config; field-level validation happens in
    //! the conversion so that error messages can carry exact field paths.
    use serde::Deserialize;

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Root {
        #[serde(default)]
        pub kernels: Option<Vec<Kernel>>,
        #[serde(default)]
        pub pn_potts: Option<PnPotts>,
        #[serde(default)]
        pub cooccurrence: Option<Cooccurrence>,
        #[serde(default)]
        pub inference: Option<crate::core::MeanFieldConfig>,
        #[serde(default)]
        pub labels: Option<Labels>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Kernel {
        pub kind: String,
        pub weight: f64,
        #[serde(default)]
        pub theta_gamma: Option<f64>,
        #[serde(default)]
        pub theta_alpha: Option<f64>,
        #[serde(default)]
        pub theta_beta: Option<f64>,
        #[serde(default)]
        pub theta_tau: Option<f64>,
        #[serde(default)]
        pub theta_beta_global: Option<f64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PnPotts {
        #[serde(default)]
        pub gamma_low: f64,
        pub layers: Vec<Layer>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Layer {
        pub gamma_max: f64,
        #[serde(default)]
        pub meanshift: Option<crate::superpixels::MeanShiftParams>,
        #[serde(default)]
        pub maps: Option<String>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Cooccurrence {
        #[serde(default)]
        pub weight: f64,
        #[serde(default)]
        pub matrix: Option<String>,
        #[serde(default)]
        pub estimate_from: Option<String>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Labels {
        pub names: Vec<String>,
        pub palette: Vec<[u8; 3]>,
        #[serde(default)]
        pub ignore_label: Option<usize>,
    }
}

fn kernel_from_raw(i: usize, raw: &raw::Kernel) -> Result<KernelSpec> {
    let path = |field: &str| format!("kernels[{i}].{field}");
    if raw.weight < 0.0 {
        return Err(Error::Config(format!(
            "{}: must be >= 0, got {}",
            path("weight"),
            raw.weight
        )));
    }
    let require = |field: &str, v: Option<f64>| {
        v.ok_or_else(|| {
            Error::Config(format!("{}: required for kind {:?}", path(field), raw.kind))
        })
    };
    let forbid = |field: &str, v: Option<f64>| {
        if v.is_some() {
            Err(Error::Config(format!(
                "{}: not a parameter of kind {:?}",
                path(field),
                raw.kind
            )))
        } else {
            Ok(())
        }
    };
    let spec = match raw.kind.as_str() {
        "smoothness" => {
            forbid("theta_alpha", raw.theta_alpha)?;
            forbid("theta_beta", raw.theta_beta)?;
            forbid("theta_beta_global", raw.theta_beta_global)?;
            KernelSpec::Smoothness {
                weight: raw.weight,
                theta_gamma: require("theta_gamma", raw.theta_gamma)?,
                theta_tau: require("theta_tau", raw.theta_tau)?,
            }
        }
        "appearance" => {
            forbid("theta_gamma", raw.theta_gamma)?;
            forbid("theta_beta_global", raw.theta_beta_global)?;
            KernelSpec::Appearance {
                weight: raw.weight,
                theta_alpha: require("theta_alpha", raw.theta_alpha)?,
                theta_beta: require("theta_beta", raw.theta_beta)?,
                theta_tau: require("theta_tau", raw.theta_tau)?,
            }
        }
        "global_appearance" => {
            forbid("theta_gamma", raw.theta_gamma)?;
            forbid("theta_alpha", raw.theta_alpha)?;
            forbid("theta_beta", raw.theta_beta)?;
            forbid("theta_tau", raw.theta_tau)?;
            KernelSpec::GlobalAppearance {
                weight: raw.weight,
                theta_beta_global: require("theta_beta_global", raw.theta_beta_global)?,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "kernels[{i}].kind: unknown kind {other:?} (expected smoothness, appearance, or global_appearance)"
            )))
        }
    };
    spec.validate()
        .map_err(|e| Error::Config(format!("kernels[{i}]: {e}")))?;
    Ok(spec)
}

/// Parses and validates a JSON run configuration. Unknown keys are
/// rejected; missing sections fall back to the documented defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// [`load_config`] over an in-memory JSON document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: raw::Root =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let defaults = RunConfig::default();

    let kernels = match &raw.kernels {
        None => defaults.kernels,
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(i, k)| kernel_from_raw(i, k))
            .collect::<Result<_>>()?,
    };

    let pn_potts = match &raw.pn_potts {
        None => defaults.pn_potts,
        Some(pn) => PnPottsConfig {
            gamma_low: pn.gamma_low,
            layers: pn
                .layers
                .iter()
                .enumerate()
                .map(|(i, layer)| {
                    let source = match (&layer.meanshift, &layer.maps) {
                        (Some(p), None) => LayerSource::MeanShift(p.clone()),
                        (None, Some(path)) => LayerSource::Maps(PathBuf::from(path)),
                        (None, None) => Err(Error::Config(format!(
                            "pn_potts.layers[{i}]: needs either meanshift or maps"
                        )))?,
                        (Some(_), Some(_)) => Err(Error::Config(format!(
                            "pn_potts.layers[{i}]: meanshift and maps are mutually exclusive"
                        )))?,
                    };
                    Ok(LayerConfig {
                        gamma_max: layer.gamma_max,
                        source,
                    })
                })
                .collect::<Result<_>>()?,
        },
    };

    let cooccurrence = match &raw.cooccurrence {
        None => defaults.cooccurrence,
        Some(c) => CooccurrenceConfig {
            weight: c.weight,
            source: match (&c.matrix, &c.estimate_from) {
                (Some(m), None) => Some(CooccurrenceSource::Matrix(PathBuf::from(m))),
                (None, Some(e)) => Some(CooccurrenceSource::EstimateFrom(PathBuf::from(e))),
                (None, None) => None,
                (Some(_), Some(_)) => Err(Error::Config(
                    "cooccurrence: matrix and estimate_from are mutually exclusive".into(),
                ))?,
            },
        },
    };

    let labels = match &raw.labels {
        None => None,
        Some(l) => Some(
            LabelSet::new(l.names.clone(), l.palette.clone(), l.ignore_label)
                .map_err(|e| Error::Config(format!("labels: {e}")))?,
        ),
    };

    let config = RunConfig {
        kernels,
        pn_potts,
        cooccurrence,
        inference: raw.inference.unwrap_or(defaults.inference),
        labels,
    };
    config.validate()?;
    Ok(config)
}

/// Serializes a configuration back to JSON (the shipped default config file
/// is generated with this).
pub fn config_to_json(config: &RunConfig) -> String {
    let kernels: Vec<serde_json::Value> = config
        .kernels
        .iter()
        .map(|k| match *k {
            KernelSpec::Smoothness {
                weight,
                theta_gamma,
                theta_tau,
            } => serde_json::json!({
                "kind": "smoothness",
                "weight": weight,
                "theta_gamma": theta_gamma,
                "theta_tau": theta_tau,
            }),
            KernelSpec::Appearance {
                weight,
                theta_alpha,
                theta_beta,
                theta_tau,
            } => serde_json::json!({
                "kind": "appearance",
                "weight": weight,
                "theta_alpha": theta_alpha,
                "theta_beta": theta_beta,
                "theta_tau": theta_tau,
            }),
            KernelSpec::GlobalAppearance {
                weight,
                theta_beta_global,
            } => serde_json::json!({
                "kind": "global_appearance",
                "weight": weight,
                "theta_beta_global": theta_beta_global,
            }),
        })
        .collect();
    let layers: Vec<serde_json::Value> = config
        .pn_potts
        .layers
        .iter()
        .map(|l| match &l.source {
            LayerSource::MeanShift(p) => serde_json::json!({
                "gamma_max": l.gamma_max,
                "meanshift": p,
            }),
            LayerSource::Maps(path) => serde_json::json!({
                "gamma_max": l.gamma_max,
                "maps": path.display().to_string(),
            }),
        })
        .collect();
    let mut cooc = serde_json::json!({ "weight": config.cooccurrence.weight });
    match &config.cooccurrence.source {
        Some(CooccurrenceSource::Matrix(p)) => {
            cooc["matrix"] = serde_json::json!(p.display().to_string());
        }
        Some(CooccurrenceSource::EstimateFrom(p)) => {
            cooc["estimate_from"] = serde_json::json!(p.display().to_string());
        }
        None => {}
    }
    let mut root = serde_json::json!({
        "kernels": kernels,
        "pn_potts": {
            "gamma_low": config.pn_potts.gamma_low,
            "layers": layers,
        },
        "cooccurrence": cooc,
        "inference": config.inference,
    });
    if let Some(labels) = &config.labels {
        root["labels"] = serde_json::json!({
            "names": labels.names(),
            "palette": labels.palette(),
            "ignore_label": labels.ignore_label(),
        });
    }
    let mut text = serde_json::to_string_pretty(&root).expect("config serializes");
    text.push('\n');
    text
}

/// Writes `bytes` then reads them back; used by tests and the CLI to fail
/// fast on unwritable outputs.
pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[allow(dead_code)]
fn unused_io_traits(_r: &mut dyn Read, _w: &mut dyn Write) {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn ppm_single_black_pixel_has_exact_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("px.ppm");
        write_ppm(&path, 1, 1, &[[0, 0, 0]]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\0\0\0");
    }

    #[test]
    fn ppm_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        let rgb = vec![[1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12], [13, 14, 15], [16, 17, 18]];
        write_ppm(&path, 2, 3, &rgb).unwrap();
        let (h, w, back) = read_ppm(&path).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, rgb);
    }

    #[test]
    fn ppm_truncation_reports_byte_deficit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.ppm");
        fs::write(&path, b"P6\n2 2\n255\n\0\0\0").unwrap();
        let err = read_ppm(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains("12"), "total should appear: {err}");
        assert!(err.contains("9 missing"), "deficit should appear: {err}");
    }

    #[test]
    fn ppm_rejects_wrong_maxval_and_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        fs::write(&path, b"P6\n1 1\n254\n\0\0\0").unwrap();
        assert!(read_ppm(&path).is_err());
        fs::write(&path, b"P5\n1 1\n255\n\0").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn unary_header_is_24_bytes_before_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("u.unry");
        let dims = VolumeDims::new(1, 1, 1).unwrap();
        let unary = UnaryField::new(dims, 2, vec![0.5, 1.5]).unwrap();
        write_unary(&path, &unary).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 24 + 2 * 4);
        assert_eq!(&bytes[..4], b"UNRY");
    }

    #[test]
    fn unary_rejects_nan_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.unry");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"UNRY");
        for v in [1u32, 1, 1, 1, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = read_unary(&path).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }

    #[test]
    fn unary_rejects_bad_magic_version_and_size() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.unry");
        fs::write(&path, b"XXXX\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_unary(&path).unwrap_err().to_string().contains("magic"));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"UNRY");
        for v in [9u32, 1, 1, 1, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        assert!(read_unary(&path)
            .unwrap_err()
            .to_string()
            .contains("version"));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"UNRY");
        for v in [1u32, 1, 1, 1, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // one value short
        fs::write(&path, &bytes).unwrap();
        assert!(read_unary(&path)
            .unwrap_err()
            .to_string()
            .contains("requires"));
    }

    #[test]
    fn labelmap_round_trips_and_renders_solid_color() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.lmap");
        let dims = VolumeDims::new(2, 2, 2).unwrap();
        let map = LabelMap::new(dims, vec![1; 8]).unwrap();
        write_labelmap(&path, &map).unwrap();
        assert_eq!(read_labelmap(&path).unwrap(), map);

        let labels = LabelSet::new(
            vec!["a".into(), "b".into()],
            vec![[0, 0, 0], [10, 20, 30]],
            None,
        )
        .unwrap();
        let paths = write_color_maps(dir.path(), "render", &map, &labels).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("render_000000.ppm"));
        let (_, _, rgb) = read_ppm(&paths[0]).unwrap();
        assert!(rgb.iter().all(|&px| px == [10, 20, 30]));
    }

    #[test]
    fn frames_dir_orders_lexicographically() {
        let dir = tempdir().unwrap();
        write_ppm(dir.path().join("b.ppm"), 1, 1, &[[2, 2, 2]]).unwrap();
        write_ppm(dir.path().join("a.ppm"), 1, 1, &[[1, 1, 1]]).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let video = read_frames_dir(dir.path()).unwrap();
        assert_eq!(video.dims().t, 2);
        assert_eq!(video.rgb(0), [1, 1, 1]);
        assert_eq!(video.rgb(1), [2, 2, 2]);
    }

    #[test]
    fn default_config_round_trips_through_json() {
        let text = config_to_json(&RunConfig::default());
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn empty_kernel_list_is_valid() {
        let config = parse_config(r#"{ "kernels": [] }"#).unwrap();
        assert!(config.kernels.is_empty());
        assert!(config.validate().is_ok());
    }

    #[test]
    fn negative_weight_is_rejected_with_field_path() {
        let err = parse_config(
            r#"{ "kernels": [ { "kind": "smoothness", "weight": -1.0,
                 "theta_gamma": 3.0, "theta_tau": 1.0 } ] }"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("kernels[0].weight"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config(r#"{ "kernelz": [] }"#).is_err());
        assert!(parse_config(
            r#"{ "inference": { "iterations": 5, "batch_size": 50,
                 "q_floor": 1e-10, "convergence_tol": null, "extra": 1 } }"#
        )
        .is_err());
    }

    #[test]
    fn key_order_is_irrelevant() {
        let a = parse_config(r#"{ "inference": { "iterations": 3, "batch_size": 2, "q_floor": 1e-9, "convergence_tol": null } }"#).unwrap();
        let b = parse_config(r#"{ "inference": { "convergence_tol": null, "q_floor": 1e-9, "batch_size": 2, "iterations": 3 } }"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layer_needs_exactly_one_source() {
        let err = parse_config(
            r#"{ "pn_potts": { "gamma_low": 0.0, "layers": [ { "gamma_max": 0.5 } ] } }"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("pn_potts.layers[0]"), "{err}");
    }

    #[test]
    fn cooccurrence_weight_needs_source() {
        let err = parse_config(r#"{ "cooccurrence": { "weight": 1.0 } }"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("cooccurrence.weight"), "{err}");
    }

    #[test]
    fn cooccurrence_matrix_file_parses() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "0 0.5\n0.5 0\n").unwrap();
        let model = read_cooccurrence_matrix(&path).unwrap();
        assert_eq!(model.labels(), 2);
        assert_eq!(model.cost(0, 1), 0.5);
        fs::write(&path, "0 0.5\n0.4 0\n").unwrap();
        assert!(read_cooccurrence_matrix(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn unary_round_trips_at_f32_precision(
            t in 1usize..3, h in 1usize..4, w in 1usize..4, l in 2usize..4,
            seed in 0u64..1000
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = VolumeDims::new(t, h, w).unwrap();
            let costs: Vec<f64> = (0..dims.pixels() * l)
                .map(|_| (rng.gen::<f32>() * 20.0 - 5.0) as f64)
                .collect();
            let unary = UnaryField::new(dims, l, costs).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("rt.unry");
            write_unary(&path, &unary).unwrap();
            let back = read_unary(&path).unwrap();
            prop_assert_eq!(back.values(), unary.values());
        }

        #[test]
        fn labelmap_round_trips(
            t in 1usize..3, h in 1usize..5, w in 1usize..5, seed in 0u64..1000
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = VolumeDims::new(t, h, w).unwrap();
            let labels: Vec<u32> = (0..dims.pixels()).map(|_| rng.gen_range(0..9)).collect();
            let map = LabelMap::new(dims, labels).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("rt.lmap");
            write_labelmap(&path, &map).unwrap();
            prop_assert_eq!(read_labelmap(&path).unwrap(), map);
        }
    }
}
