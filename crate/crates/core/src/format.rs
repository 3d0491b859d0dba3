//! Association file format and run configuration.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::association::{build_mknn, cap_edges, AssociationGraph, Bearing, Edge, GroundTruth};
use crate::error::{Error, Result};
use crate::geometry::RelativePose;
use crate::marginal::AssignmentConfig;
use crate::mechanism::{Mechanism, MechanismConfig};
use crate::search::SearchOptions;

pub const FORMAT_VERSION: u32 = 1;

/// Bearings further than this from unit norm are reported when loading.
pub const NORM_WARNING: f64 = 1e-6;

/// A double written as a decimal string, so that it round-trips bit for bit
/// through any JSON tooling. Plain JSON numbers are accepted on input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decimal(pub f64);

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        // Debug prints the shortest representation that parses back exactly.
        s.serialize_str(&format!("{:?}", self.0))
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Decimal;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a finite number or decimal string")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Decimal, E> {
                match v.trim().parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(Decimal(x)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Decimal, E> {
                Ok(Decimal(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Decimal, E> {
                Ok(Decimal(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Decimal, E> {
                Ok(Decimal(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

fn dec3(v: &Vector3<f64>) -> [Decimal; 3] {
    [Decimal(v.x), Decimal(v.y), Decimal(v.z)]
}

fn vec3(v: &[Decimal; 3]) -> Vector3<f64> {
    Vector3::new(v[0].0, v[1].0, v[2].0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraBlock {
    #[serde(default)]
    pub bearings: Vec<[Decimal; 3]>,
    /// Pixel coordinates `(u, v)`, used when `bearings` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Vec<[Decimal; 2]>>,
    /// Row-major 3x3 calibration matrix for `pixels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<[Decimal; 9]>,
    /// Feature descriptors, used to build candidates when the file has no edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<Vec<Vec<Decimal>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub similarity: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    /// Row-major rotation.
    pub rotation: [Decimal; 9],
    pub translation: [Decimal; 3],
    #[serde(default)]
    pub matches: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationFile {
    pub version: u32,
    pub camera1: CameraBlock,
    pub camera2: CameraBlock,
    #[serde(default)]
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthRecord>,
}

/// Graph and optional truth decoded from a file.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub graph: AssociationGraph,
    pub truth: Option<GroundTruth>,
    /// Non-fatal issues, e.g. renormalized bearings.
    pub warnings: Vec<String>,
}

fn file_error(location: impl Into<String>, message: impl fmt::Display) -> Error {
    Error::InvalidFile { location: location.into(), message: message.to_string() }
}

impl AssociationFile {
    /// Parses a file, reporting the line and field of the first problem.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: AssociationFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            let loc = format!("line {} column {}, field `{}`", inner.line(), inner.column(), e.path());
            file_error(loc, inner)
        })?;
        if file.version != FORMAT_VERSION {
            return Err(file_error(
                "field `version`",
                format!("unsupported version {}, expected {FORMAT_VERSION}", file.version),
            ));
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("association files always serialize")
    }

    /// File holding a graph's bearings and edges, and optionally its truth.
    pub fn from_graph(graph: &AssociationGraph, truth: Option<&GroundTruth>) -> Self {
        let block = |b: &[Bearing]| CameraBlock {
            bearings: b.iter().map(|b| dec3(b.dir())).collect(),
            ..Default::default()
        };
        AssociationFile {
            version: FORMAT_VERSION,
            camera1: block(graph.left()),
            camera2: block(graph.right()),
            edges: graph
                .edges()
                .iter()
                .map(|e| EdgeRecord { i: e.i, j: e.j, similarity: Decimal(e.similarity) })
                .collect(),
            ground_truth: truth.map(|t| GroundTruthRecord {
                rotation: std::array::from_fn(|k| Decimal(t.pose.rotation[(k / 3, k % 3)])),
                translation: dec3(&t.pose.translation),
                matches: t.matches().iter().map(|&(i, j)| [i, j]).collect(),
            }),
        }
    }

    /// Builds the association graph. Without explicit edges, candidates come
    /// from the mutual-K-nearest-neighbor test on the descriptors.
    pub fn load(&self, run: &RunConfig) -> Result<LoadedProblem> {
        let mut warnings = Vec::new();
        let left = camera_bearings(&self.camera1, "camera1", &mut warnings)?;
        let right = camera_bearings(&self.camera2, "camera2", &mut warnings)?;
        let mut edges: Vec<Edge> =
            self.edges.iter().map(|e| Edge::new(e.i, e.j, e.similarity.0)).collect();
        for (k, e) in edges.iter().enumerate() {
            if e.i >= left.len() || e.j >= right.len() {
                return Err(file_error(
                    format!("edges[{k}]"),
                    format!("({}, {}) out of range for {} x {} features", e.i, e.j, left.len(), right.len()),
                ));
            }
        }
        if edges.is_empty() {
            if let (Some(d1), Some(d2)) = (&self.camera1.descriptors, &self.camera2.descriptors) {
                let unwrap = |d: &[Vec<Decimal>]| -> Vec<Vec<f64>> {
                    d.iter().map(|r| r.iter().map(|x| x.0).collect()).collect()
                };
                edges = build_mknn(&unwrap(d1), &unwrap(d2), run.k, run.min_sim)?;
            }
        }
        if let Some(cap) = run.max_associations {
            edges = cap_edges(edges, cap);
        }
        let graph = AssociationGraph::new(left, right, edges).map_err(|e| file_error("edges", e))?;
        let truth = match &self.ground_truth {
            None => None,
            Some(gt) => {
                let rotation = Matrix3::from_fn(|r, c| gt.rotation[3 * r + c].0);
                let t = vec3(&gt.translation);
                let norm = t.norm();
                if !(norm > 0.0) {
                    return Err(file_error("ground_truth.translation", "zero translation"));
                }
                for (k, m) in gt.matches.iter().enumerate() {
                    if m[0] >= graph.left().len() || m[1] >= graph.right().len() {
                        return Err(file_error(format!("ground_truth.matches[{k}]"), "index out of range"));
                    }
                }
                let pose = RelativePose::new(rotation, t / norm);
                let pairs = gt.matches.iter().map(|m| (m[0], m[1])).collect();
                Some(GroundTruth::new(pose, pairs).map_err(|e| file_error("ground_truth.matches", e))?)
            }
        };
        Ok(LoadedProblem { graph, truth, warnings })
    }
}

fn camera_bearings(block: &CameraBlock, name: &str, warnings: &mut Vec<String>) -> Result<Vec<Bearing>> {
    let raw: Vec<Vector3<f64>> = if !block.bearings.is_empty() {
        block.bearings.iter().map(vec3).collect()
    } else if let Some(pixels) = &block.pixels {
        let k = block.intrinsics.ok_or_else(|| {
            file_error(format!("{name}.intrinsics"), "pixel coordinates need intrinsics")
        })?;
        let k = Matrix3::from_fn(|r, c| k[3 * r + c].0);
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| file_error(format!("{name}.intrinsics"), "matrix is singular"))?;
        pixels.iter().map(|p| k_inv * Vector3::new(p[0].0, p[1].0, 1.0)).collect()
    } else {
        Vec::new()
    };
    let from_pixels = block.bearings.is_empty();
    raw.into_iter()
        .enumerate()
        .map(|(k, v)| {
            let n = v.norm();
            if !from_pixels && (n - 1.0).abs() > NORM_WARNING {
                warnings.push(format!("{name}.bearings[{k}] has norm {n}, renormalized"));
            }
            Bearing::normalize(v).map_err(|e| file_error(format!("{name}.bearings[{k}]"), e))
        })
        .collect()
}

/// Fully resolved settings of one run. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epsilon_deg: f64,
    pub outlier_range_deg: f64,
    pub p_x: f64,
    pub p_y: f64,
    /// Neighbors per feature in the mutual nearest neighbor test.
    pub k: usize,
    pub min_sim: f64,
    /// Grid resolution: cells have side `pi / grid_n`.
    pub grid_n: usize,
    pub mechanism: Mechanism,
    pub seed: u64,
    /// Worker threads for the search; `None` uses all cores.
    pub threads: Option<usize>,
    /// Keep only the most similar associations.
    pub max_associations: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon_deg: 0.15,
            outlier_range_deg: 5.0,
            p_x: 0.1,
            p_y: 0.1,
            k: 5,
            min_sim: 0.7,
            grid_n: 32,
            mechanism: Mechanism::Hcm,
            seed: 0,
            threads: None,
            max_associations: None,
        }
    }
}

impl RunConfig {
    pub fn mechanism_config(&self) -> Result<MechanismConfig> {
        MechanismConfig::new(
            self.epsilon_deg.to_radians(),
            self.outlier_range_deg.to_radians(),
            self.p_x,
            self.p_y,
        )
    }

    pub fn assignment_config(&self) -> Result<AssignmentConfig> {
        AssignmentConfig::new(self.p_x, self.p_y)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions { threads: self.threads, ..SearchOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.mechanism_config()?;
        if self.k == 0 || self.grid_n == 0 || self.threads == Some(0) {
            return Err(Error::InvalidConfig("k, grid_n and threads must be positive".into()));
        }
        Ok(())
    }
}
