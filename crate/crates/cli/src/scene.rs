//! The JSON scene container.
//!
//! ```text
//! {
//!   "version": "mvkit-scene-1",
//!   "config": { frames, joints, views, main_index, height, width, blob_sigma, sigmas, seed },
//!   "rig": { azimuths, main_index, novel_order, omega_mv },
//!   "frames": [t][m][c][y][x],
//!   "keypoints": [t][m][j] = [x, y, confidence]   (optional)
//! }
//! ```

use crate::json;
use mvkit::synth::{Scene, SceneConfig};
use mvkit::{Frame, FrameSequence, Keypoint, KeypointSet, ViewRig};
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use std::fmt;
use std::path::Path;

pub const SCENE_VERSION: &str = "mvkit-scene-1";

/// A schema violation, located by a JSON path such as `frames[0][0][3][7]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for SchemaError {}

fn schema(path: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneContainer {
    pub config: SceneConfig,
    pub sequence: FrameSequence,
    /// Clean keypoints `[t][m]`, when known.
    pub keypoints: Option<Vec<Vec<KeypointSet>>>,
}

impl SceneContainer {
    /// Container holding a generated scene's corrupted frames and its clean keypoints.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            config: scene.config.clone(),
            sequence: scene.corrupted.clone(),
            keypoints: Some(scene.keypoints.clone()),
        }
    }

    pub fn with_sequence(&self, sequence: FrameSequence) -> Self {
        Self {
            sequence,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        json::to_string_compact(self).expect("scene serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let value: Value = serde_json::from_str(text).map_err(|e| schema("$", format!("malformed JSON: {e}")))?;
        parse_container(&value)
    }
}

pub fn write_scene(scene: &SceneContainer, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, scene.to_json())
}

#[derive(Debug)]
pub enum ReadSceneError {
    Io(std::io::Error),
    Schema(SchemaError),
}

impl fmt::Display for ReadSceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "{e}"),
            Self::Schema(e) => write!(f, "schema error at {e}"),
        }
    }
}

impl std::error::Error for ReadSceneError {}

pub fn read_scene(path: &Path) -> Result<SceneContainer, ReadSceneError> {
    let text = std::fs::read_to_string(path).map_err(ReadSceneError::Io)?;
    SceneContainer::from_json(&text).map_err(ReadSceneError::Schema)
}

// Serialization.

struct ConfigJson<'a>(&'a SceneConfig);

impl Serialize for ConfigJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let c = self.0;
        let mut map = s.serialize_map(Some(9))?;
        map.serialize_entry("frames", &c.frames)?;
        map.serialize_entry("joints", &c.joints)?;
        map.serialize_entry("views", &c.views)?;
        map.serialize_entry("main_index", &c.main_index)?;
        map.serialize_entry("height", &c.height)?;
        map.serialize_entry("width", &c.width)?;
        map.serialize_entry("blob_sigma", &c.blob_sigma)?;
        map.serialize_entry("sigmas", &c.sigmas)?;
        map.serialize_entry("seed", &c.seed)?;
        map.end()
    }
}

struct RigJson<'a>(&'a ViewRig);

impl Serialize for RigJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = self.0;
        let mut map = s.serialize_map(Some(4))?;
        map.serialize_entry("azimuths", r.azimuths())?;
        map.serialize_entry("main_index", &r.main_index())?;
        map.serialize_entry("novel_order", r.novel_order())?;
        map.serialize_entry("omega_mv", r.omega_mv())?;
        map.end()
    }
}

struct FrameJson<'a>(&'a Frame);

impl Serialize for FrameJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let f = self.0;
        let mut channels = s.serialize_seq(Some(f.channels()))?;
        for c in 0..f.channels() {
            let rows: Vec<&[f64]> = f.channel(c).chunks(f.width()).collect();
            channels.serialize_element(&rows)?;
        }
        channels.end()
    }
}

struct FramesJson<'a>(&'a FrameSequence);

impl Serialize for FramesJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut ts = s.serialize_seq(Some(self.0.frame_count()))?;
        for row in self.0.frames() {
            let views: Vec<FrameJson> = row.iter().map(FrameJson).collect();
            ts.serialize_element(&views)?;
        }
        ts.end()
    }
}

struct KeypointsJson<'a>(&'a [Vec<KeypointSet>]);

impl Serialize for KeypointsJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let nested: Vec<Vec<Vec<[f64; 3]>>> = self
            .0
            .iter()
            .map(|row| {
                row.iter()
                    .map(|set| set.points.iter().map(|p| [p.x, p.y, p.confidence]).collect())
                    .collect()
            })
            .collect();
        nested.serialize(s)
    }
}

impl Serialize for SceneContainer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("version", SCENE_VERSION)?;
        map.serialize_entry("config", &ConfigJson(&self.config))?;
        map.serialize_entry("rig", &RigJson(self.sequence.rig()))?;
        map.serialize_entry("frames", &FramesJson(&self.sequence))?;
        if let Some(k) = &self.keypoints {
            map.serialize_entry("keypoints", &KeypointsJson(k))?;
        }
        map.end()
    }
}

// Parsing.

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, SchemaError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn field<'a>(obj: &'a Map<String, Value>, parent: &str, name: &str) -> Result<&'a Value, SchemaError> {
    obj.get(name).ok_or_else(|| schema(join(parent, name), "missing field"))
}

fn join(parent: &str, name: &str) -> String {
    if parent.is_empty() {
        name.to_string()
    } else {
        format!("{parent}.{name}")
    }
}

fn array<'a>(v: &'a Value, path: &str, len: Option<usize>, what: &str) -> Result<&'a [Value], SchemaError> {
    let items = v.as_array().ok_or_else(|| schema(path, "expected an array"))?;
    match len {
        Some(n) if items.len() != n => Err(schema(
            path,
            format!("expected {n} values ({what}), found {}", items.len()),
        )),
        _ => Ok(items),
    }
}

fn uint(v: &Value, path: &str) -> Result<usize, SchemaError> {
    v.as_u64()
        .and_then(|x| usize::try_from(x).ok())
        .ok_or_else(|| schema(path, "expected a nonnegative integer"))
}

fn real(v: &Value, path: &str) -> Result<f64, SchemaError> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(schema(path, "expected a finite number")),
    }
}

fn reals(v: &Value, path: &str, len: Option<usize>, what: &str) -> Result<Vec<f64>, SchemaError> {
    array(v, path, len, what)?
        .iter()
        .enumerate()
        .map(|(i, x)| real(x, &format!("{path}[{i}]")))
        .collect()
}

fn parse_config(v: &Value) -> Result<SceneConfig, SchemaError> {
    let obj = object(v, "config")?;
    let get = |name: &str| field(obj, "config", name);
    let u = |name: &str| get(name).and_then(|x| uint(x, &join("config", name)));
    let views = u("views")?;
    let seed = get("seed")?
        .as_u64()
        .ok_or_else(|| schema("config.seed", "expected a nonnegative integer"))?;
    let config = SceneConfig {
        frames: u("frames")?,
        joints: u("joints")?,
        views,
        main_index: u("main_index")?,
        height: u("height")?,
        width: u("width")?,
        blob_sigma: real(get("blob_sigma")?, "config.blob_sigma")?,
        sigmas: reals(get("sigmas")?, "config.sigmas", Some(views), "one per view")?,
        seed,
    };
    config.validate().map_err(|e| schema("config", e.to_string()))?;
    Ok(config)
}

fn parse_rig(v: &Value, config: &SceneConfig) -> Result<ViewRig, SchemaError> {
    let obj = object(v, "rig")?;
    let m = config.views;
    let azimuths = reals(field(obj, "rig", "azimuths")?, "rig.azimuths", Some(m), "one per view")?;
    let main_index = uint(field(obj, "rig", "main_index")?, "rig.main_index")?;
    if main_index != config.main_index {
        return Err(schema(
            "rig.main_index",
            format!("expected {} to match config.main_index", config.main_index),
        ));
    }
    let novel_order = array(
        field(obj, "rig", "novel_order")?,
        "rig.novel_order",
        Some(m - 1),
        "one per novel view",
    )?
    .iter()
    .enumerate()
    .map(|(i, x)| uint(x, &format!("rig.novel_order[{i}]")))
    .collect::<Result<Vec<_>, _>>()?;
    let omega = reals(
        field(obj, "rig", "omega_mv")?,
        "rig.omega_mv",
        Some(m - 1),
        "one per novel view",
    )?;
    ViewRig::from_parts(azimuths, main_index, novel_order, omega).map_err(|e| schema("rig", e.to_string()))
}

fn parse_frame(v: &Value, path: &str, config: &SceneConfig) -> Result<Frame, SchemaError> {
    let (c, h, w) = (config.joints, config.height, config.width);
    let mut data = Vec::new();
    for (ci, channel) in array(v, path, Some(c), "channels")?.iter().enumerate() {
        let cpath = format!("{path}[{ci}]");
        for (yi, row) in array(channel, &cpath, Some(h), "rows")?.iter().enumerate() {
            let rpath = format!("{cpath}[{yi}]");
            for (xi, x) in array(row, &rpath, Some(w), "width")?.iter().enumerate() {
                data.push(real(x, &format!("{rpath}[{xi}]"))?);
            }
        }
    }
    Frame::from_data(h, w, c, data).map_err(|e| schema(path, e.to_string()))
}

fn parse_keypoints(v: &Value, config: &SceneConfig) -> Result<Vec<Vec<KeypointSet>>, SchemaError> {
    array(v, "keypoints", Some(config.frames), "timestamps")?
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let tpath = format!("keypoints[{t}]");
            array(row, &tpath, Some(config.views), "views")?
                .iter()
                .enumerate()
                .map(|(m, set)| {
                    let mpath = format!("{tpath}[{m}]");
                    let points = array(set, &mpath, Some(config.joints), "joints")?
                        .iter()
                        .enumerate()
                        .map(|(j, p)| {
                            let xs = reals(p, &format!("{mpath}[{j}]"), Some(3), "x, y, confidence")?;
                            Ok(Keypoint {
                                x: xs[0],
                                y: xs[1],
                                confidence: xs[2],
                            })
                        })
                        .collect::<Result<Vec<_>, SchemaError>>()?;
                    Ok(KeypointSet::new(points))
                })
                .collect()
        })
        .collect()
}

fn parse_container(v: &Value) -> Result<SceneContainer, SchemaError> {
    let root = object(v, "$")?;
    let version = field(root, "", "version")?
        .as_str()
        .ok_or_else(|| schema("version", "expected a string"))?;
    if version != SCENE_VERSION {
        return Err(schema(
            "version",
            format!("expected \"{SCENE_VERSION}\", found \"{version}\""),
        ));
    }
    let config = parse_config(field(root, "", "config")?)?;
    let rig = parse_rig(field(root, "", "rig")?, &config)?;
    let frames = array(field(root, "", "frames")?, "frames", Some(config.frames), "timestamps")?
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let tpath = format!("frames[{t}]");
            array(row, &tpath, Some(config.views), "views")?
                .iter()
                .enumerate()
                .map(|(m, f)| parse_frame(f, &format!("{tpath}[{m}]"), &config))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sequence = FrameSequence::new(rig, frames).map_err(|e| schema("frames", e.to_string()))?;
    let keypoints = match root.get("keypoints") {
        None | Some(Value::Null) => None,
        Some(k) => Some(parse_keypoints(k, &config)?),
    };
    Ok(SceneContainer {
        config,
        sequence,
        keypoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvkit::synth::generate_scene;
    use proptest::prelude::*;

    fn small_config(seed: u64) -> SceneConfig {
        SceneConfig {
            frames: 2,
            joints: 5,
            views: 2,
            height: 4,
            width: 3,
            sigmas: vec![0.1, 0.2],
            ..SceneConfig::desk(seed)
        }
    }

    fn small() -> SceneContainer {
        SceneContainer::from_scene(&generate_scene(&small_config(3)).unwrap())
    }

    fn edit(f: impl FnOnce(&mut Value)) -> Result<SceneContainer, SchemaError> {
        let mut v: Value = serde_json::from_str(&small().to_json()).unwrap();
        f(&mut v);
        SceneContainer::from_json(&v.to_string())
    }

    #[test]
    fn round_trip_is_exact() {
        let s = small();
        let back = SceneContainer::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        for (a, b) in back
            .sequence
            .frames()
            .iter()
            .flatten()
            .zip(s.sequence.frames().iter().flatten())
        {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn keypoints_are_optional() {
        let s = SceneContainer {
            keypoints: None,
            ..small()
        };
        let text = s.to_json();
        assert!(!text.contains("keypoints"));
        assert_eq!(SceneContainer::from_json(&text).unwrap(), s);
    }

    #[test]
    fn wrong_width_names_the_frame() {
        let e = edit(|v| {
            v["frames"][0][0][0][0].as_array_mut().unwrap().pop();
        })
        .unwrap_err();
        assert_eq!(e.path, "frames[0][0][0][0]");
        assert!(e.message.contains("expected 3 values"), "{e}");
    }

    #[test]
    fn missing_field_is_named() {
        let e = edit(|v| {
            v["config"].as_object_mut().unwrap().remove("height");
        })
        .unwrap_err();
        assert_eq!(e.to_string(), "config.height: missing field");
        let e = edit(|v| {
            v.as_object_mut().unwrap().remove("frames");
        })
        .unwrap_err();
        assert_eq!(e.path, "frames");
    }

    #[test]
    fn version_tag_is_checked() {
        let e = edit(|v| v["version"] = Value::from("mvkit-scene-0")).unwrap_err();
        assert_eq!(e.path, "version");
    }

    #[test]
    fn malformed_and_truncated_json() {
        let text = small().to_json();
        let e = SceneContainer::from_json(&text[..text.len() / 2]).unwrap_err();
        assert!(e.message.starts_with("malformed JSON"));
        assert!(SceneContainer::from_json("[]").is_err());
    }

    #[test]
    fn value_level_errors() {
        let e = edit(|v| v["frames"][1][1][0][0][0] = Value::from("x")).unwrap_err();
        assert_eq!(e.path, "frames[1][1][0][0][0]");
        let e = edit(|v| v["rig"]["main_index"] = Value::from(1)).unwrap_err();
        assert_eq!(e.path, "rig.main_index");
        let e = edit(|v| v["config"]["views"] = Value::from(0)).unwrap_err();
        assert_eq!(e.path, "config.sigmas");
        let e = edit(|v| v["keypoints"][0][0][2] = serde_json::json!([1.0, 2.0])).unwrap_err();
        assert_eq!(e.path, "keypoints[0][0][2]");
        let e = edit(|v| v["rig"]["omega_mv"][0] = Value::from(-1.0)).unwrap_err();
        assert_eq!(e.path, "rig");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mutated_files_never_panic(pos in 0usize..10_000, byte in any::<u8>(), cut in 0usize..10_000) {
            let mut bytes = small().to_json().into_bytes();
            let n = bytes.len();
            bytes[pos % n] = byte;
            bytes.truncate(n - cut % 64);
            if let Ok(text) = std::str::from_utf8(&bytes) {
                if let Ok(scene) = SceneContainer::from_json(text) {
                    prop_assert_eq!(SceneContainer::from_json(&scene.to_json()).unwrap(), scene);
                }
            }
        }
    }
}
