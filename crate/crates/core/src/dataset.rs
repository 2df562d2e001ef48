//! Scene files: one JSON document per scene with per-scale segmentation
//! grids and the trajectories observed in it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GridSpec, Point, SegMap, TrajectorySample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub observed: Vec<Point>,
    pub futures: Vec<Vec<Point>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub frame: Frame,
    pub classes: Vec<String>,
    pub t_obs: usize,
    pub pred_len: usize,
    /// `(cols, rows)` per scale, finest first.
    pub scales: Vec<(usize, usize)>,
    /// `seg_grid[scale][frame][cell][class]`, cells row-major.
    pub seg_grid: Vec<Vec<Vec<Vec<f64>>>>,
    pub samples: Vec<SampleRecord>,
}

fn bad(location: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Dataset {
        location: location.into(),
        msg: msg.into(),
    }
}

impl SceneFile {
    pub fn specs(&self) -> Result<Vec<GridSpec>> {
        self.scales
            .iter()
            .map(|&(c, r)| GridSpec::new(c, r, self.frame.width, self.frame.height))
            .collect()
    }

    /// Checks shapes, normalisation and bounds, then builds samples that
    /// share the scene's segmentation.
    pub fn to_samples(&self) -> Result<Vec<TrajectorySample>> {
        let here = |f: &str| format!("{}: {f}", self.scene_id);
        if self.scales.is_empty() {
            return Err(bad(here("scales"), "no grid scales"));
        }
        let specs = self.specs()?;
        if self.seg_grid.len() != specs.len() {
            return Err(bad(here("seg_grid"), format!("{} scales of segmentation for {} grid scales", self.seg_grid.len(), specs.len())));
        }
        let classes = self.classes.len();
        let mut seg = Vec::with_capacity(specs.len());
        for (s, (spec, frames)) in specs.iter().zip(&self.seg_grid).enumerate() {
            if frames.len() != self.t_obs {
                return Err(bad(here(&format!("seg_grid[{s}]")), format!("{} frames, expected t_obs = {}", frames.len(), self.t_obs)));
            }
            let mut maps = Vec::with_capacity(frames.len());
            for (t, cells) in frames.iter().enumerate() {
                let loc = here(&format!("seg_grid[{s}][{t}]"));
                if cells.len() != spec.num_nodes() {
                    return Err(bad(loc, format!("{} cells, expected {}", cells.len(), spec.num_nodes())));
                }
                let mut data = Vec::with_capacity(cells.len() * classes);
                for (c, v) in cells.iter().enumerate() {
                    if v.len() != classes {
                        return Err(bad(format!("{loc}[{c}]"), format!("{} class fractions, expected {classes}", v.len())));
                    }
                    data.extend_from_slice(v);
                }
                let m = SegMap::new(spec.rows, spec.cols, classes, data).map_err(|e| bad(loc, e.to_string()))?;
                maps.push(m);
            }
            seg.push(maps);
        }
        let seg = Arc::new(seg);
        let mut out = Vec::with_capacity(self.samples.len());
        for (i, r) in self.samples.iter().enumerate() {
            let loc = here(&format!("samples[{i}] (`{}`)", r.id));
            if r.observed.len() != self.t_obs {
                return Err(bad(loc, format!("{} observed points, expected {}", r.observed.len(), self.t_obs)));
            }
            if let Some((j, f)) = r.futures.iter().enumerate().find(|(_, f)| f.len() != self.pred_len) {
                return Err(bad(loc, format!("future {j} has {} points, expected {}", f.len(), self.pred_len)));
            }
            let sample = TrajectorySample {
                id: r.id.clone(),
                scene_id: self.scene_id.clone(),
                observed: r.observed.clone(),
                futures: r.futures.clone(),
                seg_frames: Arc::clone(&seg),
            };
            sample.validate(&specs[0]).map_err(|e| bad(loc, e.to_string()))?;
            out.push(sample);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| bad(origin, format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Scene files under `path`: the file itself, or every `*.json` in a
/// directory except `run.json` manifests, sorted by name.
pub fn scene_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "run.json"))
            .collect();
        v.sort();
        if v.is_empty() {
            return Err(bad(path.display().to_string(), "no .json scene files"));
        }
        Ok(v)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(bad(path.display().to_string(), "no such file or directory"))
    }
}

/// Loads and validates every sample under `path`.
pub fn load(path: &Path) -> Result<Vec<TrajectorySample>> {
    let mut out = Vec::new();
    for p in scene_paths(path)? {
        out.extend(SceneFile::load(&p)?.to_samples()?);
    }
    Ok(out)
}
