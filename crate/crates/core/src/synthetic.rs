//! Grid-world scenes with forking futures.
//!
//! A template paints class rectangles onto a pixel raster, which is pooled
//! into per-cell class fractions at every scale. Agents follow shortest
//! 8-connected paths over the finest grid's free cells (no corner cutting),
//! at a constant per-sample speed with a lateral lane offset and small
//! per-step jitter shared by all of a sample's futures, so futures coincide
//! until their paths fork.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, SampleRecord, SceneFile};
use crate::error::{Error, Result};
use crate::scene::{is_blocking_class, GridSpec, Point, CLASS_NAMES, DESK_SCALES, NUM_CLASSES};

const BACKGROUND: u8 = 0;
const ROAD: u8 = 1;
const SIDEWALK: u8 = 2;
const GRASS: u8 = 3;
const BUILDING: u8 = 4;
const VEHICLE: u8 = 5;
const OBSTACLE: u8 = 6;
const WATER: u8 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Corridor,
    TJunction,
    PlazaWithObstacle,
    Crossroad,
}

impl Layout {
    pub const ALL: [Layout; 4] = [Layout::Corridor, Layout::TJunction, Layout::PlazaWithObstacle, Layout::Crossroad];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Corridor => "corridor",
            Layout::TJunction => "t-junction",
            Layout::PlazaWithObstacle => "plaza-with-obstacle",
            Layout::Crossroad => "crossroad",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown template `{s}` (expected one of corridor, t-junction, plaza-with-obstacle, crossroad)")))
    }

    /// Future counts used for this layout in the evaluation split.
    pub fn eval_futures(self) -> std::ops::RangeInclusive<usize> {
        match self {
            Layout::Crossroad => 3..=6,
            _ => 3..=4,
        }
    }

    /// Layouts whose paths turn.
    pub fn is_curved(self) -> bool {
        matches!(self, Layout::TJunction | Layout::Crossroad)
    }
}

/// Pixel rectangle `[x0, y0, x1)` x `[y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

const fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
    Rect { x0, y0, x1, y1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub layout: Layout,
    pub frame: Frame,
    /// Grid scales `(cols, rows)`; paths are planned on the first.
    pub scales: Vec<(usize, usize)>,
    pub fill: u8,
    /// Painted in order over the fill.
    pub regions: Vec<(u8, Rect)>,
    /// Start cells `(row, col)` on the finest grid.
    pub starts: Vec<(usize, usize)>,
    /// Goal cells grouped by exit; futures prefer distinct groups.
    pub goals: Vec<Vec<(usize, usize)>>,
    /// Ground-truth futures per sample.
    pub futures: usize,
}

impl ScenarioTemplate {
    pub fn new(layout: Layout, futures: usize) -> Self {
        let (fill, regions, starts, goals): (u8, Vec<(u8, Rect)>, Vec<(usize, usize)>, Vec<Vec<(usize, usize)>>) = match layout {
            Layout::Corridor => (
                BUILDING,
                vec![
                    (SIDEWALK, rect(0.0, 16.0, 192.0, 80.0)),
                    (ROAD, rect(0.0, 32.0, 192.0, 64.0)),
                    (WATER, rect(40.0, 2.0, 70.0, 12.0)),
                    (GRASS, rect(120.0, 84.0, 180.0, 96.0)),
                ],
                vec![(1, 0), (2, 0), (3, 0), (4, 0)],
                vec![vec![(1, 11)], vec![(2, 11)], vec![(3, 11)], vec![(4, 11)]],
            ),
            Layout::TJunction => (
                BUILDING,
                vec![
                    (ROAD, rect(0.0, 32.0, 128.0, 64.0)),
                    (SIDEWALK, rect(96.0, 0.0, 128.0, 96.0)),
                    (VEHICLE, rect(140.0, 60.0, 170.0, 75.0)),
                    (GRASS, rect(0.0, 0.0, 40.0, 10.0)),
                ],
                vec![(2, 0), (3, 0), (2, 1), (3, 1)],
                vec![vec![(0, 6), (0, 7)], vec![(5, 6), (5, 7)]],
            ),
            Layout::PlazaWithObstacle => (
                SIDEWALK,
                vec![
                    (GRASS, rect(0.0, 0.0, 48.0, 16.0)),
                    (OBSTACLE, rect(102.0, 36.0, 124.0, 60.0)),
                    (VEHICLE, rect(20.0, 84.0, 40.0, 96.0)),
                    (BACKGROUND, rect(176.0, 80.0, 192.0, 96.0)),
                ],
                vec![(2, 0), (3, 0)],
                vec![vec![(0, 8), (0, 10)], vec![(2, 11), (3, 11)], vec![(5, 8), (5, 10)]],
            ),
            Layout::Crossroad => (
                BUILDING,
                vec![
                    (ROAD, rect(0.0, 32.0, 192.0, 64.0)),
                    (ROAD, rect(80.0, 0.0, 112.0, 96.0)),
                    (GRASS, rect(150.0, 70.0, 185.0, 90.0)),
                ],
                vec![(2, 0), (3, 0), (2, 1), (3, 1)],
                vec![vec![(0, 5), (0, 6)], vec![(5, 5), (5, 6)], vec![(2, 11), (3, 11)]],
            ),
        };
        Self {
            layout,
            frame: Frame { width: 192.0, height: 96.0 },
            scales: DESK_SCALES.to_vec(),
            fill,
            regions,
            starts,
            goals,
            futures,
        }
    }

    pub fn name(&self) -> &'static str {
        self.layout.name()
    }

    pub fn max_futures(&self) -> usize {
        self.goals.iter().map(Vec::len).sum()
    }

    fn fine(&self) -> Result<GridSpec> {
        let &(c, r) = self.scales.first().ok_or(Error::Empty("template scales"))?;
        GridSpec::new(c, r, self.frame.width, self.frame.height)
    }

    /// Class per pixel, row-major.
    pub fn raster(&self) -> (usize, usize, Vec<u8>) {
        let (w, h) = (self.frame.width.ceil() as usize, self.frame.height.ceil() as usize);
        let mut px = vec![self.fill; w * h];
        for &(class, r) in &self.regions {
            for y in 0..h {
                for x in 0..w {
                    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                    if cx >= r.x0 && cx < r.x1 && cy >= r.y0 && cy < r.y1 {
                        px[y * w + x] = class;
                    }
                }
            }
        }
        (w, h, px)
    }

    /// Class fractions per cell of `spec`, `[cell][class]`.
    pub fn pooled(&self, spec: &GridSpec) -> Vec<Vec<f64>> {
        let (w, h, px) = self.raster();
        let mut counts = vec![vec![0usize; NUM_CLASSES]; spec.num_nodes()];
        for y in 0..h {
            for x in 0..w {
                let node = spec.node_index(x as f64 + 0.5, y as f64 + 0.5).expect("pixel centers lie inside the frame");
                counts[node][px[y * w + x] as usize] += 1;
            }
        }
        counts
            .into_iter()
            .map(|c| {
                let total: usize = c.iter().sum();
                c.into_iter().map(|k| k as f64 / total as f64).collect()
            })
            .collect()
    }

    /// Finest-grid cells containing any blocking-class pixel.
    pub fn blocked_cells(&self) -> Result<Vec<bool>> {
        let spec = self.fine()?;
        Ok(self
            .pooled(&spec)
            .iter()
            .map(|f| f.iter().enumerate().any(|(c, &v)| v > 0.0 && is_blocking_class(c)))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.fine()?;
        if self.futures == 0 || self.futures > self.max_futures() {
            return Err(Error::Config(format!(
                "template `{}` supports 1..={} futures, got {}",
                self.name(),
                self.max_futures(),
                self.futures
            )));
        }
        let blocked = self.blocked_cells()?;
        for &(r, c) in self.starts.iter().chain(self.goals.iter().flatten()) {
            if r >= spec.rows || c >= spec.cols {
                return Err(Error::Config(format!("template `{}`: cell ({r}, {c}) outside the grid", self.name())));
            }
            if blocked[r * spec.cols + c] {
                return Err(Error::Config(format!("template `{}`: obstacle covers start/goal cell ({r}, {c})", self.name())));
            }
        }
        Ok(())
    }
}

/// Shortest-path tree from `start` over free cells: orthogonal steps cost 10,
/// diagonal 14, diagonals need both orthogonal neighbours free. Returns each
/// cell's parent (`usize::MAX` if unreachable, the start is its own parent).
pub fn shortest_path_tree(spec: &GridSpec, blocked: &[bool], start: usize) -> Vec<usize> {
    let (rows, cols) = (spec.rows as i64, spec.cols as i64);
    let n = spec.num_nodes();
    let mut dist = vec![u64::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0;
    parent[start] = start;
    heap.push(Reverse((0u64, start)));
    let free = |r: i64, c: i64| r >= 0 && c >= 0 && r < rows && c < cols && !blocked[(r * cols + c) as usize];
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let (r, c) = ((u / spec.cols) as i64, (u % spec.cols) as i64);
        for dr in -1..=1 {
            for dc in -1..=1 {
                if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                    continue;
                }
                let diag = dr != 0 && dc != 0;
                if diag && !(free(r + dr, c) && free(r, c + dc)) {
                    continue;
                }
                let v = ((r + dr) * cols + c + dc) as usize;
                let nd = d + if diag { 14 } else { 10 };
                if nd < dist[v] || (nd == dist[v] && u < parent[v]) {
                    if nd < dist[v] {
                        heap.push(Reverse((nd, v)));
                    }
                    dist[v] = nd;
                    parent[v] = u;
                }
            }
        }
    }
    parent
}

pub fn path_to(parent: &[usize], start: usize, goal: usize) -> Option<Vec<usize>> {
    if parent[goal] == usize::MAX {
        return None;
    }
    let mut path = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Position at arclength `s` along the polyline through `pts`, shifted
/// `lateral` pixels to the left of the local direction. Clamps at the end.
fn along(pts: &[Point], s: f64, lateral: f64) -> Point {
    let mut rem = s.max(0.0);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        if rem <= len {
            let f = rem / len;
            let (nx, ny) = (-dy / len, dx / len);
            return [a[0] + f * dx + lateral * nx, a[1] + f * dy + lateral * ny];
        }
        rem -= len;
    }
    let n = pts.len();
    if n < 2 {
        return pts[0];
    }
    let (a, b) = (pts[n - 2], pts[n - 1]);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = (dx * dx + dy * dy).sqrt();
    [b[0] - lateral * dy / len, b[1] + lateral * dx / len]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenOptions {
    pub t_obs: usize,
    pub pred_len: usize,
    /// Speed range in finest-grid cells per step.
    pub speed: (f64, f64),
    /// Maximum lateral lane offset, pixels.
    pub lane: f64,
    /// Maximum per-step jitter per axis, pixels.
    pub jitter: f64,
    /// Minimum separation of final future points, pixels.
    pub min_final_gap: f64,
    pub max_attempts: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            t_obs: 8,
            pred_len: 12,
            speed: (0.35, 0.5),
            lane: 3.0,
            jitter: 0.6,
            min_final_gap: 4.0,
            max_attempts: 500,
        }
    }
}

fn pick_goals(t: &ScenarioTemplate, start: (usize, usize), rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if t.layout == Layout::Corridor && t.futures == 1 {
        return vec![(start.0, t.goals[0][0].1)];
    }
    let mut groups: Vec<Vec<(usize, usize)>> = t.goals.clone();
    groups.shuffle(rng);
    groups.iter_mut().for_each(|g| g.shuffle(rng));
    // one goal per exit first, then the remaining lanes
    let mut out = Vec::with_capacity(t.futures);
    let depth = groups.iter().map(Vec::len).max().unwrap_or(0);
    for d in 0..depth {
        for g in &groups {
            if let Some(&c) = g.get(d) {
                out.push(c);
            }
        }
    }
    out.truncate(t.futures);
    out
}

/// Samples `n` trajectories in `template`, deterministically from `seed`.
pub fn generate(template: &ScenarioTemplate, seed: u64, n: usize, opts: &GenOptions) -> Result<SceneFile> {
    template.validate()?;
    if opts.t_obs == 0 || opts.pred_len == 0 {
        return Err(Error::Config("t_obs and pred_len must be positive".into()));
    }
    let spec = template.fine()?;
    let blocked = template.blocked_cells()?;
    let cell = spec.cell_width().min(spec.cell_height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = opts.t_obs + opts.pred_len;
    let mut trees = std::collections::HashMap::new();
    let scene_id = format!("{}-{seed}", template.name());
    for &start in &template.starts {
        let from = start.0 * spec.cols + start.1;
        let parent = shortest_path_tree(&spec, &blocked, from);
        for &(gr, gc) in template.goals.iter().flatten() {
            if parent[gr * spec.cols + gc] == usize::MAX {
                return Err(Error::Unreachable {
                    template: template.name().to_string(),
                    start,
                    goal: (gr, gc),
                });
            }
        }
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut attempts = 0;
        let rec = 'attempt: loop {
            attempts += 1;
            if attempts > opts.max_attempts {
                return Err(Error::Config(format!(
                    "template `{}`: no valid sample after {} attempts",
                    template.name(),
                    opts.max_attempts
                )));
            }
            let start = *template.starts.choose(&mut rng).expect("validated template has starts");
            let goals = pick_goals(template, start, &mut rng);
            let v = rng.random_range(opts.speed.0..opts.speed.1) * cell;
            let lateral = rng.random_range(-opts.lane..=opts.lane);
            let s0 = rng.random_range(0.0..0.5) * cell;
            let jitter: Vec<Point> = (0..total)
                .map(|_| [rng.random_range(-opts.jitter..=opts.jitter), rng.random_range(-opts.jitter..=opts.jitter)])
                .collect();
            // shared straight approach along the start row as far as the
            // first future point, then shortest paths from the fork cell
            let reach = s0 + v * opts.t_obs as f64;
            let run = (reach / spec.cell_width()).floor() as usize + 1;
            let approach: Vec<usize> = (0..=run)
                .map(|k| start.0 * spec.cols + start.1 + k)
                .take_while(|_| start.1 + run < spec.cols)
                .collect();
            if approach.len() != run + 1 || approach.iter().any(|&c| blocked[c]) {
                continue;
            }
            let fork = approach[run];
            let parent = trees
                .entry(fork)
                .or_insert_with(|| shortest_path_tree(&spec, &blocked, fork));
            let mut tracks = Vec::with_capacity(goals.len());
            for &(gr, gc) in &goals {
                let Some(path) = path_to(parent, fork, gr * spec.cols + gc) else {
                    continue 'attempt;
                };
                let mut pts: Vec<Point> = approach[..run].iter().chain(&path).map(|&c| spec.cell_center(c)).collect();
                if pts.len() == 1 {
                    pts.push(pts[0]);
                }
                let track: Vec<Point> = (0..total)
                    .map(|t| {
                        let p = along(&pts, s0 + v * t as f64, lateral);
                        [p[0] + jitter[t][0], p[1] + jitter[t][1]]
                    })
                    .collect();
                tracks.push(track);
            }
            let clear = tracks.iter().flatten().all(|p| {
                spec.node_index(p[0], p[1]).is_ok_and(|node| !blocked[node])
            });
            // a single history: everything up to the first future step matches
            let shared = tracks.iter().all(|t| t[..=opts.t_obs] == tracks[0][..=opts.t_obs]);
            let distinct = tracks.iter().enumerate().all(|(a, ta)| {
                tracks[a + 1..].iter().all(|tb| {
                    let (p, q) = (ta[total - 1], tb[total - 1]);
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= opts.min_final_gap
                })
            });
            if clear && shared && distinct {
                break SampleRecord {
                    id: format!("{scene_id}-{i:04}"),
                    observed: tracks[0][..opts.t_obs].to_vec(),
                    futures: tracks.iter().map(|t| t[opts.t_obs..].to_vec()).collect(),
                };
            }
        };
        samples.push(rec);
    }
    let seg_grid = template
        .scales
        .iter()
        .map(|&(c, r)| {
            let s = GridSpec::new(c, r, template.frame.width, template.frame.height)?;
            let frame = template.pooled(&s);
            Ok(vec![frame; opts.t_obs])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneFile {
        scene_id,
        template: Some(template.name().to_string()),
        seed: Some(seed),
        frame: template.frame,
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        t_obs: opts.t_obs,
        pred_len: opts.pred_len,
        scales: template.scales.clone(),
        seg_grid,
        samples,
    })
}

/// One generated file of the default desk dataset.
#[derive(Clone, Debug)]
pub struct PresetFile {
    pub split: &'static str,
    pub scene: SceneFile,
}

/// 200 single-future training samples and 50 multi-future evaluation samples
/// (3 to 6 futures, see [`Layout::eval_futures`]) spread over all layouts.
pub fn desk_preset(seed: u64, opts: &GenOptions) -> Result<Vec<PresetFile>> {
    desk_preset_sized(seed, 200, 50, &Layout::ALL, opts)
}

pub fn desk_preset_sized(seed: u64, n_train: usize, n_eval: usize, layouts: &[Layout], opts: &GenOptions) -> Result<Vec<PresetFile>> {
    if layouts.is_empty() {
        return Err(Error::Empty("layout list"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let share = |total: usize, k: usize| total / layouts.len() + usize::from(k < total % layouts.len());
    let mut out = Vec::new();
    for (k, &layout) in layouts.iter().enumerate() {
        let n = share(n_train, k);
        if n > 0 {
            let t = ScenarioTemplate::new(layout, 1);
            out.push(PresetFile {
                split: "train",
                scene: generate(&t, rng.random(), n, opts)?,
            });
        }
    }
    for (k, &layout) in layouts.iter().enumerate() {
        let n = share(n_eval, k);
        // split each layout's eval samples over its J values
        let mut remaining = n;
        let js: Vec<usize> = layout.eval_futures().collect();
        for (q, &j) in js.iter().enumerate() {
            let m = remaining / (js.len() - q);
            remaining -= m;
            if m == 0 {
                continue;
            }
            let t = ScenarioTemplate::new(layout, j);
            let mut scene = generate(&t, rng.random(), m, opts)?;
            scene.scene_id = format!("{}-j{j}", scene.scene_id);
            for s in &mut scene.samples {
                s.id = format!("{}-j{j}-{}", layout.name(), s.id.rsplit('-').next().unwrap_or("0"));
            }
            out.push(PresetFile { split: "eval", scene });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_valid() {
        for l in Layout::ALL {
            let t = ScenarioTemplate::new(l, 1);
            t.validate().unwrap();
            assert!(t.max_futures() >= *l.eval_futures().end(), "{l:?}");
            assert_eq!(Layout::parse(l.name()).unwrap(), l);
        }
        assert!(Layout::parse("maze").is_err());
        assert!(ScenarioTemplate::new(Layout::TJunction, 9).validate().is_err());
    }

    #[test]
    fn corridor_single_future_is_straight() {
        let t = ScenarioTemplate::new(Layout::Corridor, 1);
        let f = generate(&t, 3, 20, &GenOptions::default()).unwrap();
        for s in &f.samples {
            let ys: Vec<f64> = s.observed.iter().chain(&s.futures[0]).map(|p| p[1]).collect();
            let (lo, hi) = ys.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
            assert!(hi - lo <= 2.0 * 0.6 + 1e-9, "{}: y spread {}", s.id, hi - lo);
            let xs: Vec<f64> = s.futures[0].iter().map(|p| p[0]).collect();
            assert!(xs.windows(2).all(|w| w[1] > w[0] - 1.2));
        }
    }

    #[test]
    fn t_junction_futures_share_a_prefix_then_diverge() {
        let t = ScenarioTemplate::new(Layout::TJunction, 3);
        let f = generate(&t, 11, 10, &GenOptions::default()).unwrap();
        for s in &f.samples {
            assert_eq!(s.futures.len(), 3);
            assert!(s.futures.iter().all(|fu| fu[0] == s.futures[0][0]));
            let last: Vec<Point> = s.futures.iter().map(|fu| fu[11]).collect();
            for a in 0..3 {
                for b in a + 1..3 {
                    assert_ne!(last[a], last[b]);
                }
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let t = ScenarioTemplate::new(Layout::Crossroad, 4);
        let a = generate(&t, 5, 6, &GenOptions::default()).unwrap().to_json().unwrap();
        let b = generate(&t, 5, 6, &GenOptions::default()).unwrap().to_json().unwrap();
        let c = generate(&t, 6, 6, &GenOptions::default()).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unreachable_goal_names_template() {
        let mut t = ScenarioTemplate::new(Layout::Corridor, 2);
        t.regions.push((BUILDING, rect(80.0, 0.0, 96.0, 96.0)));
        let e = generate(&t, 1, 1, &GenOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Unreachable { .. }));
        assert!(e.to_string().contains("corridor"));
    }

    #[test]
    fn obstacles_may_not_cover_endpoints() {
        let mut t = ScenarioTemplate::new(Layout::PlazaWithObstacle, 2);
        t.regions.push((OBSTACLE, rect(0.0, 32.0, 16.0, 48.0)));
        assert!(t.validate().is_err());
    }

    #[test]
    fn futures_avoid_blocked_cells_and_load_round_trips() {
        let opts = GenOptions::default();
        for l in Layout::ALL {
            let t = ScenarioTemplate::new(l, *l.eval_futures().end());
            let f = generate(&t, 21, 8, &opts).unwrap();
            let spec = GridSpec::new(12, 6, 192.0, 96.0).unwrap();
            let blocked = t.blocked_cells().unwrap();
            for s in &f.samples {
                for p in s.observed.iter().chain(s.futures.iter().flatten()) {
                    assert!(!blocked[spec.node_index(p[0], p[1]).unwrap()], "{l:?} {p:?}");
                }
            }
            let back = SceneFile::parse(&f.to_json().unwrap(), "mem").unwrap();
            assert_eq!(back, f);
            let samples = back.to_samples().unwrap();
            assert_eq!(samples.len(), 8);
            assert_eq!(samples[0].observed, f.samples[0].observed);
        }
    }

    #[test]
    fn preset_sizes() {
        let files = desk_preset(1, &GenOptions::default()).unwrap();
        let count = |split: &str| files.iter().filter(|f| f.split == split).map(|f| f.scene.samples.len()).sum::<usize>();
        assert_eq!(count("train"), 200);
        assert_eq!(count("eval"), 50);
        for f in files.iter().filter(|f| f.split == "eval") {
            for s in &f.scene.samples {
                assert!((3..=6).contains(&s.futures.len()));
            }
        }
        let mut ids: Vec<&str> = files.iter().flat_map(|f| f.scene.samples.iter().map(|s| s.id.as_str())).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }
}
