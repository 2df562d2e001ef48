//! Multi-scale grid graphs over a video frame.
//!
//! A frame is split into `cols x rows` cells; each cell is a node connected to
//! its eight neighbours and itself. Coordinates map to a node index, a one-hot
//! segmentation embedding, and an offset from the cell center.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tgmr_autograd::Tensor;

use crate::error::{Error, Result};

/// Pixel coordinate `[x, y]`.
pub type Point = [f64; 2];

/// Neighbourhood slots per node: a 3x3 window, `slot = (dr + 1) * 3 + (dc + 1)`.
pub const SLOTS: usize = 9;
pub const SELF_SLOT: usize = 4;

pub const CLASS_NAMES: [&str; 8] = [
    "background",
    "road",
    "sidewalk",
    "grass",
    "building",
    "vehicle",
    "obstacle",
    "water",
];
pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Classes an agent may not occupy.
pub fn is_blocking_class(class: usize) -> bool {
    matches!(class, 4..=7)
}

pub const FULL_SCALES: [(usize, usize); 2] = [(36, 18), (18, 9)];
pub const DESK_SCALES: [(usize, usize); 2] = [(12, 6), (6, 3)];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub frame_width: f64,
    pub frame_height: f64,
}

impl GridSpec {
    pub fn new(cols: usize, rows: usize, frame_width: f64, frame_height: f64) -> Result<Self> {
        if cols == 0 || rows == 0 || !(frame_width > 0.0) || !(frame_height > 0.0) {
            return Err(Error::Config(format!(
                "grid {cols}x{rows} over frame {frame_width}x{frame_height} must have positive dimensions"
            )));
        }
        Ok(Self {
            cols,
            rows,
            frame_width,
            frame_height,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.cols * self.rows
    }

    pub fn cell_width(&self) -> f64 {
        self.frame_width / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.frame_height / self.rows as f64
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..self.frame_width).contains(&x) && (0.0..self.frame_height).contains(&y)
    }

    fn check(&self, x: f64, y: f64) -> Result<()> {
        if self.contains(x, y) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                x,
                y,
                width: self.frame_width,
                height: self.frame_height,
            })
        }
    }

    /// `(row, col)` of the cell containing `(x, y)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        self.check(x, y)?;
        let col = ((x / self.cell_width()).floor() as usize).min(self.cols - 1);
        let row = ((y / self.cell_height()).floor() as usize).min(self.rows - 1);
        Ok((row, col))
    }

    pub fn node_index(&self, x: f64, y: f64) -> Result<usize> {
        let (row, col) = self.cell_of(x, y)?;
        Ok(row * self.cols + col)
    }

    pub fn row_col(&self, node: usize) -> (usize, usize) {
        (node / self.cols, node % self.cols)
    }

    pub fn cell_center(&self, node: usize) -> Point {
        let (row, col) = self.row_col(node);
        [
            (col as f64 + 0.5) * self.cell_width(),
            (row as f64 + 0.5) * self.cell_height(),
        ]
    }

    /// `(x, y)` minus the center of its cell.
    pub fn cell_offset(&self, x: f64, y: f64) -> Result<Point> {
        let c = self.cell_center(self.node_index(x, y)?);
        Ok([x - c[0], y - c[1]])
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` of a node.
    pub fn cell_rect(&self, node: usize) -> [f64; 4] {
        let (row, col) = self.row_col(node);
        let (w, h) = (self.cell_width(), self.cell_height());
        [col as f64 * w, row as f64 * h, (col + 1) as f64 * w, (row + 1) as f64 * h]
    }

    /// Center + offset, with the offset clamped inside the cell.
    pub fn place(&self, node: usize, offset: Point) -> Point {
        let c = self.cell_center(node);
        let hw = 0.5 * self.cell_width() * (1.0 - 1e-9);
        let hh = 0.5 * self.cell_height() * (1.0 - 1e-9);
        [c[0] + offset[0].clamp(-hw, hw), c[1] + offset[1].clamp(-hh, hh)]
    }
}

/// Grid graph of one scale.
#[derive(Clone, Debug)]
pub struct SceneGraph {
    pub spec: GridSpec,
    neighborhoods: Vec<Vec<usize>>,
    /// `num_nodes * SLOTS` neighbour indices; invalid slots point at the node itself.
    slot_table: Arc<[usize]>,
    /// `num_nodes * SLOTS` validity flags.
    mask: Arc<[bool]>,
    /// Each node's index repeated `SLOTS` times.
    repeat_table: Arc<[usize]>,
}

impl SceneGraph {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.num_nodes();
        let mut neighborhoods = Vec::with_capacity(n);
        let mut slot_table = Vec::with_capacity(n * SLOTS);
        let mut mask = Vec::with_capacity(n * SLOTS);
        for node in 0..n {
            let (r, c) = spec.row_col(node);
            let mut hood = Vec::with_capacity(SLOTS);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    let valid = nr >= 0 && nc >= 0 && nr < spec.rows as i64 && nc < spec.cols as i64;
                    if valid {
                        let j = nr as usize * spec.cols + nc as usize;
                        hood.push(j);
                        slot_table.push(j);
                    } else {
                        slot_table.push(node);
                    }
                    mask.push(valid);
                }
            }
            neighborhoods.push(hood);
        }
        let repeat_table = (0..n).flat_map(|i| std::iter::repeat_n(i, SLOTS)).collect();
        Self {
            spec,
            neighborhoods,
            slot_table: slot_table.into(),
            mask: mask.into(),
            repeat_table,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.spec.num_nodes()
    }

    /// Ordered neighbourhood of `node`, including itself.
    pub fn neighborhood(&self, node: usize) -> &[usize] {
        &self.neighborhoods[node]
    }

    pub fn slot_table(&self) -> &Arc<[usize]> {
        &self.slot_table
    }

    pub fn mask(&self) -> &Arc<[bool]> {
        &self.mask
    }

    pub fn repeat_table(&self) -> &Arc<[usize]> {
        &self.repeat_table
    }

    pub fn slot_neighbor(&self, node: usize, slot: usize) -> Option<usize> {
        let i = node * SLOTS + slot;
        self.mask[i].then(|| self.slot_table[i])
    }
}

/// One scene graph per configured `(cols, rows)` scale, all over the same frame.
pub fn build_scales(dims: &[(usize, usize)], frame_width: f64, frame_height: f64) -> Result<Vec<SceneGraph>> {
    if dims.is_empty() {
        return Err(Error::Empty("scale list"));
    }
    dims.iter()
        .map(|&(c, r)| GridSpec::new(c, r, frame_width, frame_height).map(SceneGraph::new))
        .collect()
}

/// Per-cell class fractions, `rows x cols x classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMap {
    rows: usize,
    cols: usize,
    classes: usize,
    data: Vec<f64>,
}

impl SegMap {
    pub fn new(rows: usize, cols: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * classes {
            return Err(Error::Shape(format!(
                "segmentation {rows}x{cols}x{classes} needs {} values, got {}",
                rows * cols * classes,
                data.len()
            )));
        }
        let m = Self {
            rows,
            cols,
            classes,
            data,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every cell entirely `class`.
    pub fn uniform(rows: usize, cols: usize, classes: usize, class: usize) -> Self {
        let mut data = vec![0.0; rows * cols * classes];
        for cell in 0..rows * cols {
            data[cell * classes + class] = 1.0;
        }
        Self {
            rows,
            cols,
            classes,
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (cell, v) in self.data.chunks(self.classes).enumerate() {
            if v.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
                return Err(Error::Shape(format!("cell {cell} has a negative or non-finite fraction")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Shape(format!("cell {cell} fractions sum to {s}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, node: usize) -> &[f64] {
        &self.data[node * self.classes..(node + 1) * self.classes]
    }

    /// Dominant class of a cell (lowest index on ties).
    pub fn argmax_class(&self, node: usize) -> usize {
        let c = self.cell(node);
        (0..self.classes).fold(0, |best, k| if c[k] > c[best] { k } else { best })
    }

    pub fn matches(&self, spec: &GridSpec) -> bool {
        self.rows == spec.rows && self.cols == spec.cols
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols, self.classes], self.data.clone()).expect("validated on construction")
    }
}

fn check_seg(spec: &GridSpec, seg: &SegMap) -> Result<()> {
    if seg.matches(spec) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "segmentation {}x{} does not match grid {}x{}",
            seg.rows, seg.cols, spec.rows, spec.cols
        )))
    }
}

/// Zero grid except the occupied cell, which carries that cell's class vector.
pub fn one_hot_seg_embed(spec: &GridSpec, x: f64, y: f64, seg: &SegMap) -> Result<Tensor> {
    check_seg(spec, seg)?;
    let node = spec.node_index(x, y)?;
    let c = seg.classes;
    let mut data = vec![0.0; spec.num_nodes() * c];
    data[node * c..(node + 1) * c].copy_from_slice(seg.cell(node));
    Ok(Tensor::new(vec![spec.rows, spec.cols, c], data)?)
}

/// Zero `rows x cols x 2` grid with the cell offset of `(x, y)` at its cell.
pub fn offset_embed(spec: &GridSpec, x: f64, y: f64) -> Result<Tensor> {
    let node = spec.node_index(x, y)?;
    let off = spec.cell_offset(x, y)?;
    Ok(node_value_embed(spec, node, &off))
}

/// Zero `rows x cols x values.len()` grid with `values` at `node`.
pub fn node_value_embed(spec: &GridSpec, node: usize, values: &[f64]) -> Tensor {
    let c = values.len();
    let mut data = vec![0.0; spec.num_nodes() * c];
    data[node * c..(node + 1) * c].copy_from_slice(values);
    Tensor::new(vec![spec.rows, spec.cols, c], data).expect("finite values at a valid node")
}

/// Elementwise mean of equally shaped maps.
pub fn mean_seg(frames: &[SegMap]) -> Result<SegMap> {
    let first = frames.first().ok_or(Error::Empty("segmentation frame list"))?;
    let mut data = vec![0.0; first.data.len()];
    for f in frames {
        if (f.rows, f.cols, f.classes) != (first.rows, first.cols, first.classes) {
            return Err(Error::Shape("segmentation frames differ in shape".into()));
        }
        data.iter_mut().zip(&f.data).for_each(|(a, b)| *a += b);
    }
    let n = frames.len() as f64;
    data.iter_mut().for_each(|v| *v /= n);
    Ok(SegMap {
        rows: first.rows,
        cols: first.cols,
        classes: first.classes,
        data,
    })
}

/// One observed history with one or more ground-truth futures.
#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub id: String,
    pub scene_id: String,
    pub observed: Vec<Point>,
    pub futures: Vec<Vec<Point>>,
    /// `seg_frames[scale][t]` for each observed step.
    pub seg_frames: Arc<Vec<Vec<SegMap>>>,
}

impl TrajectorySample {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        let loc = || format!("sample `{}`", self.id);
        if self.observed.is_empty() {
            return Err(Error::Dataset {
                location: loc(),
                msg: "no observed points".into(),
            });
        }
        if self.futures.is_empty() {
            return Err(Error::Dataset {
                location: loc(),
                msg: "no ground-truth futures".into(),
            });
        }
        let len = self.futures[0].len();
        if len == 0 || self.futures.iter().any(|f| f.len() != len) {
            return Err(Error::Dataset {
                location: loc(),
                msg: "futures must be non-empty and of identical length".into(),
            });
        }
        for p in self.observed.iter().chain(self.futures.iter().flatten()) {
            if !spec.contains(p[0], p[1]) {
                return Err(Error::Dataset {
                    location: loc(),
                    msg: format!("point {p:?} outside frame"),
                });
            }
        }
        for frames in self.seg_frames.iter() {
            if frames.len() != self.observed.len() {
                return Err(Error::Dataset {
                    location: loc(),
                    msg: format!(
                        "{} segmentation frames for {} observed steps",
                        frames.len(),
                        self.observed.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn pred_len(&self) -> usize {
        self.futures[0].len()
    }
}
