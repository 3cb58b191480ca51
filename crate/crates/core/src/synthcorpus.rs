//! Synthetic caption → pose corpus with an exact oracle.
//!
//! A pose template fixes stance, each arm, torso and head. Every template has
//! one canonical pose and a small family of paraphrased captions. Each
//! attribute value is named by a key word used nowhere else, so a caption's
//! bag of words identifies its template.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::skeleton::{joint, Keypoint2D, Pose, PoseSample, Visibility, NUM_JOINTS};
use crate::textenc::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stance {
    Standing,
    Sitting,
    Walking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Down,
    Raised,
    Extended,
    OnHip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Torso {
    Upright,
    TiltLeft,
    TiltRight,
    LeanForward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Forward,
    TurnedLeft,
    TurnedRight,
}

const STANCES: [Stance; 3] = [Stance::Standing, Stance::Sitting, Stance::Walking];
const ARMS: [Arm; 4] = [Arm::Down, Arm::Raised, Arm::Extended, Arm::OnHip];
const TORSOS: [Torso; 4] = [Torso::Upright, Torso::TiltLeft, Torso::TiltRight, Torso::LeanForward];
const HEADS: [Head; 3] = [Head::Forward, Head::TurnedLeft, Head::TurnedRight];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoseTemplate {
    pub stance: Stance,
    pub left_arm: Arm,
    pub right_arm: Arm,
    pub torso: Torso,
    pub head: Head,
}

impl Default for PoseTemplate {
    fn default() -> Self {
        Self {
            stance: Stance::Standing,
            left_arm: Arm::Down,
            right_arm: Arm::Down,
            torso: Torso::Upright,
            head: Head::Forward,
        }
    }
}

impl PoseTemplate {
    /// All 576 templates in a fixed order.
    pub fn all() -> Vec<PoseTemplate> {
        let mut out = Vec::with_capacity(576);
        for stance in STANCES {
            for left_arm in ARMS {
                for right_arm in ARMS {
                    for torso in TORSOS {
                        for head in HEADS {
                            out.push(PoseTemplate {
                                stance,
                                left_arm,
                                right_arm,
                                torso,
                                head,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Maximum number of caption paraphrases per template.
pub const MAX_PARAPHRASES: usize = 3;

const PREFIXES: [&str; MAX_PARAPHRASES] = ["a person", "someone", "a figure"];
const CONNECTORS: [&str; MAX_PARAPHRASES] = ["with", "and", "while showing"];
const NEUTRAL_TAILS: [&str; MAX_PARAPHRASES] = [
    "still facing forward",
    "in a neutral pose",
    "quietly with a neutral posture",
];

fn stance_word(s: Stance) -> &'static str {
    match s {
        Stance::Standing => "standing",
        Stance::Sitting => "sitting",
        Stance::Walking => "walking",
    }
}

fn left_arm_phrase(a: Arm) -> Option<&'static str> {
    match a {
        Arm::Down => None,
        Arm::Raised => Some("the left arm raised"),
        Arm::Extended => Some("the left arm extended sideways"),
        Arm::OnHip => Some("the left hand on the hip"),
    }
}

fn right_arm_phrase(a: Arm) -> Option<&'static str> {
    match a {
        Arm::Down => None,
        Arm::Raised => Some("the right arm lifted"),
        Arm::Extended => Some("the right arm outstretched"),
        Arm::OnHip => Some("the right hand on the waist"),
    }
}

fn torso_phrase(t: Torso) -> Option<&'static str> {
    match t {
        Torso::Upright => None,
        Torso::TiltLeft => Some("the torso tilted leftward"),
        Torso::TiltRight => Some("the torso tilted rightward"),
        Torso::LeanForward => Some("the torso leaning forward"),
    }
}

fn head_phrase(h: Head) -> Option<&'static str> {
    match h {
        Head::Forward => None,
        Head::TurnedLeft => Some("glancing to the left"),
        Head::TurnedRight => Some("gazing to the right"),
    }
}

/// Words that identify attribute values; each occurs in captions only for
/// its own value.
pub const KEY_WORDS: [&str; 14] = [
    "standing",
    "sitting",
    "walking",
    "raised",
    "extended",
    "hip",
    "lifted",
    "outstretched",
    "waist",
    "leftward",
    "rightward",
    "leaning",
    "glancing",
    "gazing",
];

/// Caption of `template` in paraphrase `variant`.
pub fn caption_of(template: &PoseTemplate, variant: usize) -> Result<String> {
    if variant >= MAX_PARAPHRASES {
        return Err(Error::Config(format!(
            "caption variant {variant} out of range; at most {MAX_PARAPHRASES} paraphrases exist"
        )));
    }
    let phrases: Vec<&str> = [
        left_arm_phrase(template.left_arm),
        right_arm_phrase(template.right_arm),
        torso_phrase(template.torso),
        head_phrase(template.head),
    ]
    .into_iter()
    .flatten()
    .collect();
    let head = format!("{} {}", PREFIXES[variant], stance_word(template.stance));
    Ok(if phrases.is_empty() {
        format!("{head} {}", NEUTRAL_TAILS[variant])
    } else {
        format!("{head} {} {}", CONNECTORS[variant], phrases.join(", "))
    })
}

/// Recovers the template named by a generated caption.
pub fn parse_caption(caption: &str) -> Result<PoseTemplate> {
    let mut stance = None;
    let mut t = PoseTemplate::default();
    let (mut la, mut ra, mut to, mut he) = (false, false, false, false);
    let set = |flag: &mut bool, word: &str| -> Result<()> {
        if std::mem::replace(flag, true) {
            return Err(Error::Validation(format!(
                "caption names an attribute twice (at {word:?})"
            )));
        }
        Ok(())
    };
    for tok in tokenize(caption) {
        match tok.as_str() {
            "standing" | "sitting" | "walking" => {
                if stance.is_some() {
                    return Err(Error::Validation("caption names two stances".into()));
                }
                stance = Some(match tok.as_str() {
                    "standing" => Stance::Standing,
                    "sitting" => Stance::Sitting,
                    _ => Stance::Walking,
                });
            }
            "raised" | "extended" | "hip" => {
                set(&mut la, &tok)?;
                t.left_arm = match tok.as_str() {
                    "raised" => Arm::Raised,
                    "extended" => Arm::Extended,
                    _ => Arm::OnHip,
                };
            }
            "lifted" | "outstretched" | "waist" => {
                set(&mut ra, &tok)?;
                t.right_arm = match tok.as_str() {
                    "lifted" => Arm::Raised,
                    "outstretched" => Arm::Extended,
                    _ => Arm::OnHip,
                };
            }
            "leftward" | "rightward" | "leaning" => {
                set(&mut to, &tok)?;
                t.torso = match tok.as_str() {
                    "leftward" => Torso::TiltLeft,
                    "rightward" => Torso::TiltRight,
                    _ => Torso::LeanForward,
                };
            }
            "glancing" | "gazing" => {
                set(&mut he, &tok)?;
                t.head = if tok == "glancing" {
                    Head::TurnedLeft
                } else {
                    Head::TurnedRight
                };
            }
            _ => {}
        }
    }
    t.stance = stance.ok_or_else(|| Error::Validation(format!("caption names no stance: {caption:?}")))?;
    Ok(t)
}

type Xy = (f64, f64);

fn add(a: Xy, b: Xy) -> Xy {
    (a.0 + b.0, a.1 + b.1)
}

fn arm(shoulder: Xy, side: f64, a: Arm) -> (Xy, Xy) {
    let (upper, fore) = match a {
        Arm::Down => ((0.03, 0.25), (0.01, 0.22)),
        Arm::Raised => ((0.06, -0.24), (0.02, -0.21)),
        Arm::Extended => ((0.25, 0.0), (0.22, 0.0)),
        Arm::OnHip => ((0.16, 0.18), (-0.10, 0.14)),
    };
    let elbow = add(shoulder, (side * upper.0, upper.1));
    (elbow, add(elbow, (side * fore.0, fore.1)))
}

/// Canonical, noise-free pose of a template. Normalized coordinates with the
/// person facing the camera, so the person's right side is at negative x.
pub fn oracle_pose(t: &PoseTemplate) -> (Pose, Visibility) {
    use joint::*;
    let mut p = [(0.0, 0.0); NUM_JOINTS];
    let mut vis = Visibility::all_visible();

    p[NECK] = (0.0, -0.45);
    p[NOSE] = (0.0, -0.65);
    p[R_EYE] = (-0.04, -0.69);
    p[L_EYE] = (0.04, -0.69);
    p[R_EAR] = (-0.09, -0.66);
    p[L_EAR] = (0.09, -0.66);
    let turn = match t.head {
        Head::Forward => 0.0,
        Head::TurnedLeft => -0.05,
        Head::TurnedRight => 0.05,
    };
    p[NOSE].0 += turn;
    p[R_EYE].0 += 0.8 * turn;
    p[L_EYE].0 += 0.8 * turn;
    p[R_EAR].0 += 0.5 * turn;
    p[L_EAR].0 += 0.5 * turn;
    match t.head {
        Head::TurnedLeft => vis.0[R_EAR] = 0.0,
        Head::TurnedRight => vis.0[L_EAR] = 0.0,
        Head::Forward => {}
    }

    p[R_SHOULDER] = (-0.18, -0.45);
    p[L_SHOULDER] = (0.18, -0.45);
    (p[R_ELBOW], p[R_WRIST]) = arm(p[R_SHOULDER], -1.0, t.right_arm);
    (p[L_ELBOW], p[L_WRIST]) = arm(p[L_SHOULDER], 1.0, t.left_arm);

    let pivot = (0.0, 0.05);
    let upper = [
        NOSE, NECK, R_SHOULDER, R_ELBOW, R_WRIST, L_SHOULDER, L_ELBOW, L_WRIST, R_EYE, L_EYE, R_EAR, L_EAR,
    ];
    let angle: f64 = match t.torso {
        Torso::TiltLeft => 0.2,
        Torso::TiltRight => -0.2,
        _ => 0.0,
    };
    let squash = if t.torso == Torso::LeanForward { 0.8 } else { 1.0 };
    let (s, c) = angle.sin_cos();
    for &j in &upper {
        let (dx, dy) = (p[j].0 - pivot.0, p[j].1 - pivot.1);
        let (dx, dy) = (dx * c + dy * s, -dx * s + dy * c);
        p[j] = (pivot.0 + dx, pivot.1 + squash * dy);
    }

    p[R_HIP] = (-0.10, 0.05);
    p[L_HIP] = (0.10, 0.05);
    for (side, hip, knee, ankle) in [(-1.0, R_HIP, R_KNEE, R_ANKLE), (1.0, L_HIP, L_KNEE, L_ANKLE)] {
        let (thigh, shin) = match (t.stance, side < 0.0) {
            (Stance::Standing, _) => ((0.0, 0.3), (0.0, 0.3)),
            (Stance::Sitting, _) => ((side * 0.07, 0.12), (side * 0.02, 0.29)),
            (Stance::Walking, true) => ((-0.05, 0.29), (-0.09, 0.28)),
            (Stance::Walking, false) => ((0.03, 0.3), (0.0, 0.3)),
        };
        p[knee] = add(p[hip], thigh);
        p[ankle] = add(p[knee], shin);
    }
    if t.stance == Stance::Sitting {
        for q in p.iter_mut() {
            q.1 += 0.1;
        }
    }

    let mut pose = Pose(p.iter().map(|&(x, y)| Keypoint2D::new(x, y)).collect());
    for j in 0..NUM_JOINTS {
        if !vis.is_visible(j) {
            pose[j] = Keypoint2D::ORIGIN;
        }
    }
    (pose, vis)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_samples: usize,
    /// Per-coordinate standard deviation, normalized units.
    pub jitter_sigma: f64,
    /// Probability that a visible joint is additionally marked invisible.
    pub occlusion_rate: f64,
    pub caption_paraphrase_count: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_samples: 5000,
            jitter_sigma: 0.01,
            occlusion_rate: 0.05,
            caption_paraphrase_count: 3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100 {
            return Err(Error::Config(format!(
                "n_samples must be ≥ 100, got {}",
                self.n_samples
            )));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_sigma must be ≥ 0, got {}",
                self.jitter_sigma
            )));
        }
        if !(0.0..0.5).contains(&self.occlusion_rate) {
            return Err(Error::Config(format!(
                "occlusion_rate must be in [0, 0.5), got {}",
                self.occlusion_rate
            )));
        }
        if !(1..=MAX_PARAPHRASES).contains(&self.caption_paraphrase_count) {
            return Err(Error::Config(format!(
                "caption_paraphrase_count must be in 1..={MAX_PARAPHRASES}, got {}",
                self.caption_paraphrase_count
            )));
        }
        Ok(())
    }
}

fn split_sizes(total: usize) -> [usize; 3] {
    let train = (0.8 * total as f64).round() as usize;
    let val = (0.1 * total as f64).round() as usize;
    [train, val, total - train - val]
}

/// Templates of the train, validation and test splits, disjoint and
/// covering all 576 templates.
pub fn split_templates(seed: u64) -> [Vec<PoseTemplate>; 3] {
    let mut all = PoseTemplate::all();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = split_sizes(all.len());
    let test = all.split_off(a + b);
    let val = all.split_off(a);
    [all, val, test]
}

/// Generates the three splits; fully determined by `spec`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let templates = split_templates(spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c0de);
    let noise = Normal::new(0.0, spec.jitter_sigma).map_err(|e| Error::Config(format!("jitter_sigma: {e}")))?;
    let names = ["train", "val", "test"];
    let mut splits: Vec<Vec<PoseSample>> = Vec::with_capacity(3);
    for (k, count) in split_sizes(spec.n_samples).into_iter().enumerate() {
        let pool = &templates[k];
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let t = pool[rng.gen_range(0..pool.len())];
            let variant = rng.gen_range(0..spec.caption_paraphrase_count);
            let (mut pose, mut vis) = oracle_pose(&t);
            for j in 0..NUM_JOINTS {
                let (dx, dy) = (noise.sample(&mut rng), noise.sample(&mut rng));
                let occlude = rng.gen::<f64>() < spec.occlusion_rate;
                if !vis.is_visible(j) {
                    continue;
                }
                if occlude {
                    vis.0[j] = 0.0;
                    pose[j] = Keypoint2D::ORIGIN;
                } else {
                    pose[j] = Keypoint2D::new((pose[j].x + dx).clamp(-1.0, 1.0), (pose[j].y + dy).clamp(-1.0, 1.0));
                }
            }
            out.push(PoseSample {
                id: format!("{}-{i:05}", names[k]),
                caption: caption_of(&t, variant)?,
                pose,
                visibility: vis,
                source_width: 256,
                source_height: 256,
            });
        }
        splits.push(out);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Corpus { train, val, test })
}
