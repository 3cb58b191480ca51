//! Corpus files: PoseCap JSONL records, train/val/test directories and
//! conversion of OpenPose keypoint JSON.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{
    denormalize_coords, normalize_coords, validate_sample, Pose, PoseSample, Visibility, NUM_JOINTS,
};

/// One line of a PoseCap JSONL file. Keypoints are pixel coordinates in a
/// `width × height` image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseCapRecord {
    pub id: String,
    pub caption: String,
    pub keypoints: Vec<[f64; 2]>,
    pub visibility: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl PoseCapRecord {
    pub fn from_sample(s: &PoseSample) -> Self {
        let (w, h) = (s.source_width as f64, s.source_height as f64);
        Self {
            id: s.id.clone(),
            caption: s.caption.clone(),
            keypoints: s
                .pose
                .joints()
                .iter()
                .map(|&kp| {
                    let (x, y) = denormalize_coords(kp, w, h);
                    [x, y]
                })
                .collect(),
            visibility: s.visibility.values().iter().map(|&v| (v > 0.5) as u8).collect(),
            width: s.source_width,
            height: s.source_height,
        }
    }

    /// Normalizes coordinates and checks every sample invariant.
    pub fn to_sample(&self) -> Result<PoseSample> {
        let (w, h) = (self.width as f64, self.height as f64);
        let joints = self
            .keypoints
            .iter()
            .map(|&[x, y]| normalize_coords((x, y), w, h))
            .collect::<Result<Vec<_>>>()?;
        let visibility = Visibility(
            self.visibility
                .iter()
                .map(|&v| match v {
                    0 => Ok(0.0),
                    1 => Ok(1.0),
                    other => Err(Error::Validation(format!(
                        "{}: visibility value {other} not in {{0, 1}}",
                        self.id
                    ))),
                })
                .collect::<Result<Vec<_>>>()?,
        );
        let sample = PoseSample {
            id: self.id.clone(),
            caption: self.caption.clone(),
            pose: Pose(joints),
            visibility,
            source_width: self.width,
            source_height: self.height,
        };
        validate_sample(&sample)
            .into_result()
            .map_err(|e| Error::Validation(format!("{}: {e}", self.id)))?;
        Ok(sample)
    }
}

pub fn write_jsonl<W: Write>(records: &[PoseCapRecord], mut w: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r)?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io("<jsonl stream>", e))?;
    }
    Ok(())
}

pub fn store_samples(samples: &[PoseSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<_> = samples.iter().map(PoseCapRecord::from_sample).collect();
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a PoseCap JSONL file, validating every record. Blank lines are
/// skipped; duplicate ids are rejected.
pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<PoseSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseCapRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.push(
            rec.to_sample()
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// Train, validation and test samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<PoseSample>,
    pub val: Vec<PoseSample>,
    pub test: Vec<PoseSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[PoseSample] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `dir`.
    pub fn store(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in Split::ALL {
            store_samples(self.split(s), dir.join(s.file_name()))?;
        }
        Ok(())
    }

    /// Reads the three split files; a missing file is an empty split.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
            ));
        }
        let read = |s: Split| -> Result<Vec<PoseSample>> {
            let p = dir.join(s.file_name());
            if p.exists() {
                load_samples(p)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Self {
            train: read(Split::Train)?,
            val: read(Split::Val)?,
            test: read(Split::Test)?,
        })
    }
}

/// Reads a caption map given either as one JSON object `{id: caption}` or as
/// JSONL lines `{"id": …, "caption": …}`.
pub fn load_captions(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, String>>(&text) {
        return Ok(map);
    }
    #[derive(Deserialize)]
    struct Line {
        id: String,
        caption: String,
    }
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: Line =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if map.insert(l.id.clone(), l.caption).is_some() {
            return Err(Error::DuplicateId(l.id));
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportOptions {
    /// A joint is visible when its confidence is strictly greater.
    pub conf_threshold: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            conf_threshold: 0.1,
            width: 256,
            height: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportStats {
    pub converted: usize,
    pub skipped_no_caption: usize,
    pub skipped_no_people: usize,
    /// `(file name, error)` for files that could not be converted.
    pub failed: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct OpenPoseFile {
    people: Vec<OpenPosePerson>,
}

#[derive(Deserialize)]
struct OpenPosePerson {
    pose_keypoints_2d: Vec<f64>,
}

/// Sample id of an OpenPose output file: the file stem without the
/// `_keypoints` suffix.
pub fn openpose_id(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_suffix("_keypoints").map(str::to_owned).unwrap_or(stem)
}

/// Converts the first person's 54 `(x, y, confidence)` values. Invisible
/// joints are parked at the image center.
pub fn convert_openpose(id: &str, caption: &str, keypoints: &[f64], opts: &ImportOptions) -> Result<PoseCapRecord> {
    if keypoints.len() != 3 * NUM_JOINTS {
        return Err(Error::Format(format!(
            "pose_keypoints_2d has {} values, expected {}",
            keypoints.len(),
            3 * NUM_JOINTS
        )));
    }
    let center = [opts.width as f64 / 2.0, opts.height as f64 / 2.0];
    let mut points = Vec::with_capacity(NUM_JOINTS);
    let mut vis = Vec::with_capacity(NUM_JOINTS);
    for t in keypoints.chunks_exact(3) {
        if t[2] > opts.conf_threshold {
            points.push([t[0], t[1]]);
            vis.push(1);
        } else {
            points.push(center);
            vis.push(0);
        }
    }
    let rec = PoseCapRecord {
        id: id.to_owned(),
        caption: caption.to_owned(),
        keypoints: points,
        visibility: vis,
        width: opts.width,
        height: opts.height,
    };
    rec.to_sample()?;
    Ok(rec)
}

/// Converts every `*.json` file of `dir` in file-name order. Malformed files
/// are recorded in the stats and skipped.
pub fn import_openpose_dir(
    dir: impl AsRef<Path>,
    captions: &BTreeMap<String, String>,
    opts: &ImportOptions,
) -> Result<(Vec<PoseCapRecord>, ImportStats)> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut stats = ImportStats::default();
    let mut out = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let id = openpose_id(&path);
        let parsed = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<OpenPoseFile>(&t).map_err(|e| e.to_string()));
        let file = match parsed {
            Ok(f) => f,
            Err(e) => {
                stats.failed.push((name, e));
                continue;
            }
        };
        let Some(person) = file.people.first() else {
            stats.skipped_no_people += 1;
            continue;
        };
        let Some(caption) = captions.get(&id) else {
            stats.skipped_no_caption += 1;
            continue;
        };
        match convert_openpose(&id, caption, &person.pose_keypoints_2d, opts) {
            Ok(r) => {
                stats.converted += 1;
                out.push(r);
            }
            Err(e) => stats.failed.push((name, e.to_string())),
        }
    }
    Ok((out, stats))
}
