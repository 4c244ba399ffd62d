//! On-disk stream layout: `stream.json` manifest, `frame_%06d.clvf` feature
//! rasters and `mask_%06d.pgm` binary masks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_partition, ChunkBounds, Frame, RegimeSpec, StreamSpec, SubChunk};
use crate::error::{Error, Result};
use crate::numerics::{Grid2D, MaskGrid};

pub const MANIFEST_FILE: &str = "stream.json";
const CLVF_MAGIC: &[u8; 4] = b"CLVF";

pub fn feature_file_name(frame: usize) -> String {
    format!("frame_{frame:06}.clvf")
}

pub fn mask_file_name(frame: usize) -> String {
    format!("mask_{frame:06}.pgm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubChunk {
    pub start: usize,
    pub end: usize,
    /// Absent for sub-chunks found by drift detection rather than generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
    pub frame_count: usize,
    pub sub_chunks: Vec<ManifestSubChunk>,
    pub annotated_frames: Vec<usize>,
    pub ground_truth_frame: usize,
    #[serde(default)]
    pub separable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

impl Manifest {
    pub fn from_spec(spec: &StreamSpec, annotated_frames: Vec<usize>) -> Self {
        Self {
            height: spec.height,
            width: spec.width,
            channels: spec.channels,
            seed: spec.seed,
            frame_count: spec.frame_count(),
            sub_chunks: spec
                .sub_chunks
                .iter()
                .map(|c| ManifestSubChunk {
                    start: c.start_frame,
                    end: c.end_frame,
                    regime: Some(c.regime.clone()),
                })
                .collect(),
            annotated_frames,
            ground_truth_frame: spec.ground_truth_frame,
            separable: spec.separable,
            fps: spec.fps,
        }
    }

    pub fn bounds(&self) -> Vec<ChunkBounds> {
        self.sub_chunks
            .iter()
            .map(|c| ChunkBounds::new(c.start, c.end))
            .collect()
    }

    /// Annotated frames other than the given ground-truth frame.
    pub fn evaluation_frames(&self) -> Vec<usize> {
        self.annotated_frames
            .iter()
            .copied()
            .filter(|&f| f != self.ground_truth_frame)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Validation(format!(
                "manifest dimensions must be positive, got {}×{}×{}",
                self.height, self.width, self.channels
            )));
        }
        validate_partition(&self.bounds(), Some(self.frame_count))?;
        if self.ground_truth_frame > self.sub_chunks[0].end {
            return Err(Error::Validation(format!(
                "ground-truth frame {} is outside the first sub-chunk",
                self.ground_truth_frame
            )));
        }
        for pair in self.annotated_frames.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Validation(format!(
                    "annotated frames must be sorted and unique ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = self.annotated_frames.last() {
            if last >= self.frame_count {
                return Err(Error::Validation(format!(
                    "annotated frame {last} is beyond the last frame {}",
                    self.frame_count - 1
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds the generator spec; needs every sub-chunk regime.
    pub fn to_spec(&self) -> Result<StreamSpec> {
        let sub_chunks = self
            .sub_chunks
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let regime = c.regime.clone().ok_or_else(|| {
                    Error::Validation(format!("sub-chunk {i} has no regime description"))
                })?;
                Ok(SubChunk {
                    start_frame: c.start,
                    end_frame: c.end,
                    regime,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = StreamSpec {
            height: self.height,
            width: self.width,
            channels: self.channels,
            sub_chunks,
            seed: self.seed,
            ground_truth_frame: self.ground_truth_frame,
            separable: self.separable,
            fps: self.fps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        manifest
            .validate()
            .map_err(|e| Error::load(path, e.to_string()))?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn write_features(path: &Path, grid: &Grid2D) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + grid.data().len() * 8);
    bytes.extend_from_slice(CLVF_MAGIC);
    for dim in [grid.height(), grid.width(), grid.channels()] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Config(format!("dimension {dim} does not fit in u32")))?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for v in grid.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Grid2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != CLVF_MAGIC {
        return Err(Error::load(path, "missing CLVF header"));
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::load(path, "header dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != count * 8 {
        return Err(Error::load(
            path,
            format!(
                "header declares {h}×{w}×{c} values but payload holds {} bytes",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Grid2D::from_vec(h, w, c, data).map_err(|e| Error::load(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &MaskGrid) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    bytes.extend(mask.data().iter().map(|&v| if v == 1 { 255u8 } else { 0 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM; values ≥ 128 (relative to maxval 255) are foreground.
pub fn read_mask(path: &Path) -> Result<MaskGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token();
    if magic.as_deref() != Some("P5") {
        return Err(Error::load(path, "not a binary PGM (P5)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::load(path, format!("malformed PGM {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::load(
            path,
            format!("PGM maxval {maxval}, expected 255"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    if raster.len() != width * height {
        return Err(Error::load(
            path,
            format!(
                "PGM declares {width}×{height} pixels but holds {} bytes",
                raster.len()
            ),
        ));
    }
    let data = raster.iter().map(|&v| u8::from(v >= 128)).collect();
    MaskGrid::from_vec(height, width, data).map_err(|e| Error::load(path, e.to_string()))
}

/// Writes manifest, features and masks for every frame into `dir`.
pub fn save_stream(dir: &Path, manifest: &Manifest, frames: &[Frame]) -> Result<()> {
    manifest.validate()?;
    if frames.len() != manifest.frame_count {
        return Err(Error::Validation(format!(
            "manifest declares {} frames but {} were given",
            manifest.frame_count,
            frames.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    for frame in frames {
        write_features(&dir.join(feature_file_name(frame.index)), &frame.features)?;
        if let Some(mask) = &frame.truth_mask {
            write_mask(&dir.join(mask_file_name(frame.index)), mask)?;
        }
    }
    Ok(())
}

pub fn load_stream(dir: &Path) -> Result<(Manifest, Vec<Frame>)> {
    load_stream_with_manifest(dir, &dir.join(MANIFEST_FILE))
}

/// Loads frames from `dir` described by the manifest at `manifest_path`.
///
/// Every frame needs a feature file. Mask files are optional except for the
/// ground-truth frame and the annotated frames.
pub fn load_stream_with_manifest(
    dir: &Path,
    manifest_path: &Path,
) -> Result<(Manifest, Vec<Frame>)> {
    let manifest = Manifest::read(manifest_path)?;
    let mut frames = Vec::with_capacity(manifest.frame_count);
    for t in 0..manifest.frame_count {
        let fpath = dir.join(feature_file_name(t));
        if !fpath.exists() {
            return Err(Error::load(fpath, "feature file is missing"));
        }
        let features = read_features(&fpath)?;
        if (features.height(), features.width(), features.channels())
            != (manifest.height, manifest.width, manifest.channels)
        {
            return Err(Error::load(
                fpath,
                format!(
                    "features are {}×{}×{}, manifest says {}×{}×{}",
                    features.height(),
                    features.width(),
                    features.channels(),
                    manifest.height,
                    manifest.width,
                    manifest.channels
                ),
            ));
        }
        let mpath = dir.join(mask_file_name(t));
        let required =
            t == manifest.ground_truth_frame || manifest.annotated_frames.binary_search(&t).is_ok();
        let truth_mask = if mpath.exists() {
            let mask = read_mask(&mpath)?;
            if (mask.height(), mask.width()) != (manifest.height, manifest.width) {
                return Err(Error::load(
                    mpath,
                    format!(
                        "mask is {}×{}, manifest says {}×{}",
                        mask.height(),
                        mask.width(),
                        manifest.height,
                        manifest.width
                    ),
                ));
            }
            Some(mask)
        } else if required {
            return Err(Error::load(mpath, "mask of an annotated frame is missing"));
        } else {
            None
        };
        frames.push(Frame {
            index: t,
            features,
            truth_mask,
        });
    }
    Ok((manifest, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{generate_stream, ObjectShape};

    fn small_spec(frames_per_chunk: &[usize]) -> StreamSpec {
        let mut start = 0;
        let sub_chunks = frames_per_chunk
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let c = SubChunk {
                    start_frame: start,
                    end_frame: start + n - 1,
                    regime: RegimeSpec {
                        object_shape: ObjectShape::Disc,
                        object_scale: 3.0,
                        foreground_mean: vec![1.0 + i as f64, -1.0],
                        background_mean: vec![0.0, 0.5],
                        feature_noise_std: 0.3,
                        motion: [0.0, 0.1],
                    },
                };
                start += n;
                c
            })
            .collect();
        StreamSpec {
            height: 12,
            width: 10,
            channels: 2,
            sub_chunks,
            seed: 5,
            ground_truth_frame: 0,
            separable: false,
            fps: Some(15.0),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(&[4, 6]);
        let frames = generate_stream(&spec).unwrap();
        let manifest = Manifest::from_spec(&spec, vec![0, 2, 4, 7, 9]);
        save_stream(dir.path(), &manifest, &frames).unwrap();
        let (loaded_manifest, loaded) = load_stream(dir.path()).unwrap();
        assert_eq!(loaded_manifest, manifest);
        assert_eq!(loaded, frames);
        assert_eq!(loaded_manifest.to_spec().unwrap(), spec);
    }

    #[test]
    fn sub_chunk_lengths_must_match_frame_count() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(&[3, 3, 4]);
        let mut manifest = Manifest::from_spec(&spec, vec![0]);
        manifest.frame_count = 11;
        let path = dir.path().join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(Manifest::read(&path), Err(Error::Load { .. })));
    }

    #[test]
    fn sparse_annotations_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(&[10, 10]);
        let mut frames = generate_stream(&spec).unwrap();
        let annotated = vec![0, 4, 10, 14, 19];
        for f in frames.iter_mut() {
            if !annotated.contains(&f.index) {
                f.truth_mask = None;
            }
        }
        let manifest = Manifest::from_spec(&spec, annotated.clone());
        save_stream(dir.path(), &manifest, &frames).unwrap();
        let (m, loaded) = load_stream(dir.path()).unwrap();
        assert_eq!(m.annotated_frames.len(), 5);
        assert_eq!(m.evaluation_frames(), vec![4, 10, 14, 19]);
        let with_masks: Vec<usize> = loaded
            .iter()
            .filter(|f| f.truth_mask.is_some())
            .map(|f| f.index)
            .collect();
        assert_eq!(with_masks, annotated);
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(&[5]);
        let frames = generate_stream(&spec).unwrap();
        save_stream(
            dir.path(),
            &Manifest::from_spec(&spec, vec![0, 2, 4]),
            &frames,
        )
        .unwrap();

        fs::remove_file(dir.path().join(mask_file_name(2))).unwrap();
        match load_stream(dir.path()) {
            Err(Error::Load { path, .. }) => assert!(path.ends_with("mask_000002.pgm")),
            other => panic!("{other:?}"),
        }
        save_stream(
            dir.path(),
            &Manifest::from_spec(&spec, vec![0, 2, 4]),
            &frames,
        )
        .unwrap();
        fs::remove_file(dir.path().join(feature_file_name(3))).unwrap();
        match load_stream(dir.path()) {
            Err(Error::Load { path, .. }) => assert!(path.ends_with("frame_000003.clvf")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_feature_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.clvf");
        fs::write(&path, b"CLVX\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_features(&path), Err(Error::Load { .. })));
        let mut bytes = b"CLVF".to_vec();
        for d in [2u32, 2, 1] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_features(&path), Err(Error::Load { .. })));
    }

    #[test]
    fn clvf_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.clvf");
        let grid = Grid2D::from_vec(1, 2, 1, vec![1.5, -0.0]).unwrap();
        write_features(&path, &grid).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut expected = b"CLVF".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-0.0f64).to_le_bytes());
        assert_eq!(bytes, expected);
        let back = read_features(&path).unwrap();
        assert_eq!(back.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn pgm_threshold_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut bytes = b"P5\n# a comment\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 127, 128]);
        fs::write(&path, bytes).unwrap();
        let mask = read_mask(&path).unwrap();
        assert_eq!(mask.data(), &[0, 0, 1]);

        let m = MaskGrid::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        write_mask(&path, &m).unwrap();
        let raw = fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&raw[raw.len() - 4..], &[255, 0, 0, 255]);
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn pgm_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        fs::write(&path, b"P5 4 4 255\n\0\0").unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Load { .. })));
        fs::write(&path, b"P2 1 1 255\n0").unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Load { .. })));
    }

    #[test]
    fn dressage_shaped_spec_round_trips() {
        // 23 sub-chunks, 3589 frames in total
        let mut lengths = vec![156usize; 22];
        lengths.push(3589 - 156 * 22);
        let spec = small_spec(&lengths);
        assert_eq!(spec.frame_count(), 3589);
        assert_eq!(spec.sub_chunks.len(), 23);
        let manifest = Manifest::from_spec(&spec, vec![0, 3588]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        manifest.write(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.to_spec().unwrap(), spec);
    }
}
