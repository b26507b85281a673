//! Brute-force Palm cell: Poisson background, half-plane clipping and certification.
//!
//! The background process has intensity 1 on the lower half-plane minus the excluded
//! disk `D((0, lambda), lambda + lambda^{-1/3} r)`; the three nuclei sit on that disk's
//! boundary. The cell of `Z_c` is built by clipping a bounding box with the bisector
//! half-planes of all other points, sorted by distance to `Z_c`.

use serde::{Deserialize, Serialize};

use crate::chain::ChainState;
use crate::distributions::{derive_seed, RngStream};
use crate::error::{Error, Result};
use crate::palm::{boundary_cap_area_excess, nuclei_positions, NucleiTriple, Quadruplet};
use crate::{Point, Side};

/// Maximal number of region doublings in [`certify_and_extend`].
pub const MAX_EXTENSIONS: u32 = 12;
/// Relative fence of the orientation test; also the jitter scale on retry.
pub const FENCE: f64 = 1e-12;
const MAX_JITTER_RETRIES: u32 = 8;

/// Axis-aligned box `[-half_width, half_width] x [-depth, top]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub half_width: f64,
    pub depth: f64,
    pub top: f64,
}

impl Region {
    /// Sampled region `[-W, W] x [-W_d, 0]` with `W = 10 + 6 lambda^{1/3}(1 + sqrt(2r))` and
    /// `W_d = 10 + 4(1 + r)`.
    pub fn initial(lambda: f64, r: f64) -> Self {
        Self {
            half_width: 10.0 + 6.0 * lambda.cbrt() * (1.0 + (2.0 * r).sqrt()),
            depth: 10.0 + 4.0 * (1.0 + r),
            top: 0.0,
        }
    }

    pub fn area(&self) -> f64 {
        2.0 * self.half_width * (self.top + self.depth)
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0].abs() <= self.half_width && p[1] >= -self.depth && p[1] <= self.top
    }

    pub fn doubled(&self) -> Self {
        Self {
            half_width: 2.0 * self.half_width,
            depth: 2.0 * self.depth,
            top: self.top,
        }
    }

    /// Disjoint rectangles `[x0, x1] x [y0, y1]` covering `self` minus `inner`.
    fn difference(&self, inner: &Region) -> Vec<[f64; 4]> {
        let (w, d, wi, di) = (self.half_width, self.depth, inner.half_width, inner.depth);
        vec![
            [-w, -wi, -d, self.top],
            [wi, w, -d, self.top],
            [-wi, wi, -d, -di],
        ]
    }
}

/// Palm configuration: three nuclei plus the background process in `region` minus the
/// excluded disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PalmConfiguration {
    pub lambda: f64,
    pub quadruplet: Quadruplet,
    pub nuclei: NucleiTriple,
    pub background: Vec<Point>,
    pub disk_center: Point,
    pub disk_radius: f64,
    pub region: Region,
}

impl PalmConfiguration {
    /// Area of `region` minus the excluded disk: the expected background count.
    pub fn expected_count(&self) -> f64 {
        let excess = self.lambda.powf(-1.0 / 3.0) * self.quadruplet.r;
        self.region.area() - boundary_cap_area_excess(self.lambda, excess)
    }

    pub fn in_excluded_disk(&self, p: Point) -> bool {
        in_disk(
            self.disk_center,
            self.lambda.powf(-1.0 / 3.0) * self.quadruplet.r,
            self.lambda,
            p,
        )
    }

    /// Nuclei first (`Z_l`, `Z_c`, `Z_r`), then background points.
    pub fn points(&self) -> Vec<Point> {
        let mut pts = self.nuclei.as_array().to_vec();
        pts.extend_from_slice(&self.background);
        pts
    }
}

/// `|p - c| < lambda + excess` with `c = (0, lambda)`, evaluated as
/// `x^2 + y (y - 2 lambda) < 2 lambda excess + excess^2` to avoid squaring `lambda`.
fn in_disk(c: Point, excess: f64, lambda: f64, p: Point) -> bool {
    debug_assert!(c[0] == 0.0);
    p[0] * p[0] + p[1] * (p[1] - 2.0 * lambda) < excess * (2.0 * lambda + excess)
}

fn sample_rectangle(
    rect: [f64; 4],
    cfg: &PalmConfiguration,
    rng: &mut RngStream,
    out: &mut Vec<Point>,
) {
    let [x0, x1, y0, y1] = rect;
    let area = (x1 - x0) * (y1 - y0);
    if area <= 0.0 {
        return;
    }
    let n = rng.poisson(area);
    for _ in 0..n {
        let p = [rng.uniform_in(x0, x1), rng.uniform_in(y0, y1)];
        if !cfg.in_excluded_disk(p) {
            out.push(p);
        }
    }
}

/// Realizes the Palm process in `region` for the quadruplet `q`.
pub fn sample_palm_process(
    lambda: f64,
    q: &Quadruplet,
    region: Region,
    rng: &mut RngStream,
) -> Result<PalmConfiguration> {
    if !(region.top <= 0.0 && region.half_width > 0.0 && region.depth > -region.top) {
        return Err(Error::InvalidParameter(format!(
            "region {region:?} must lie in the lower half-plane"
        )));
    }
    let nuclei = nuclei_positions(lambda, q)?;
    let mut cfg = PalmConfiguration {
        lambda,
        quadruplet: *q,
        nuclei,
        background: Vec::new(),
        disk_center: [0.0, lambda],
        disk_radius: lambda + lambda.powf(-1.0 / 3.0) * q.r,
        region,
    };
    let mut bg = Vec::new();
    sample_rectangle(
        [
            -region.half_width,
            region.half_width,
            -region.depth,
            region.top,
        ],
        &cfg,
        rng,
        &mut bg,
    );
    cfg.background = bg;
    Ok(cfg)
}

/// Doubles the sampled region, sampling only the added area.
pub fn extend_region(cfg: &mut PalmConfiguration, rng: &mut RngStream) {
    let bigger = cfg.region.doubled();
    let mut added = Vec::new();
    for rect in bigger.difference(&cfg.region) {
        sample_rectangle(rect, cfg, rng, &mut added);
    }
    cfg.background.extend(added);
    cfg.region = bigger;
}

/// Convex Voronoi cell, counterclockwise. Edge `i` runs from `vertices[i]` to
/// `vertices[i + 1]` and is the bisector between the nucleus and `neighbors[i]`
/// (`None` for the bounding box).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPolygon {
    pub nucleus: Point,
    pub vertices: Vec<Point>,
    pub neighbors: Vec<Option<Point>>,
    pub certified: bool,
    /// Region doublings performed before certification.
    pub extensions: u32,
}

impl CellPolygon {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn touches_box(&self) -> bool {
        self.neighbors.iter().any(Option::is_none)
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let (a, b, c) = (
                self.vertices[i],
                self.vertices[(i + 1) % n],
                self.vertices[(i + 2) % n],
            );
            let d1 = [b[0] - a[0], b[1] - a[1]];
            let d2 = [c[0] - b[0], c[1] - b[1]];
            d1[0] * d2[1] - d1[1] * d2[0] >= -FENCE * d1[0].hypot(d1[1]) * d2[0].hypot(d2[1])
        })
    }

    /// Nucleus strictly on the interior side of every edge.
    pub fn contains_nucleus(&self) -> bool {
        let n = self.vertices.len();
        let z = self.nucleus;
        (0..n).all(|i| {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            (b[0] - a[0]) * (z[1] - a[1]) - (b[1] - a[1]) * (z[0] - a[0]) > 0.0
        })
    }

    /// Index of the highest vertex.
    pub fn top_index(&self) -> usize {
        (0..self.vertices.len())
            .max_by(|&i, &j| self.vertices[i][1].total_cmp(&self.vertices[j][1]))
            .unwrap_or(0)
    }
}

/// `s(x) = |x - z|^2 - |x - p|^2`; the cell of `z` keeps `s <= 0`.
fn bisector_value(z: Point, p: Point, x: Point) -> (f64, f64) {
    let d = [p[0] - z[0], p[1] - z[1]];
    let e = [2.0 * x[0] - z[0] - p[0], 2.0 * x[1] - z[1] - p[1]];
    let s = d[0] * e[0] + d[1] * e[1];
    let scale = d[0].hypot(d[1]) * e[0].hypot(e[1]);
    (s, scale)
}

enum Clip {
    Done,
    Degenerate,
}

fn clip(
    verts: &mut Vec<Point>,
    labels: &mut Vec<Option<usize>>,
    z: Point,
    p: Point,
    label: usize,
) -> Clip {
    let n = verts.len();
    let mut s = Vec::with_capacity(n);
    let mut any_out = false;
    for &v in verts.iter() {
        let (val, scale) = bisector_value(z, p, v);
        if val.abs() <= FENCE * scale && val != 0.0 {
            return Clip::Degenerate;
        }
        any_out |= val > 0.0;
        s.push(val);
    }
    if !any_out {
        return Clip::Done;
    }
    let mut nv = Vec::with_capacity(n + 1);
    let mut nl = Vec::with_capacity(n + 1);
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = (verts[i], verts[j]);
        let (sa, sb) = (s[i], s[j]);
        let cut = |sa: f64, sb: f64| {
            let t = sa / (sa - sb);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        };
        match (sa <= 0.0, sb <= 0.0) {
            (true, true) => {
                nv.push(a);
                nl.push(labels[i]);
            }
            (true, false) => {
                nv.push(a);
                nl.push(labels[i]);
                if sa < 0.0 {
                    nv.push(cut(sa, sb));
                    nl.push(Some(label));
                } else {
                    *nl.last_mut().expect("pushed") = Some(label);
                }
            }
            (false, true) => {
                if sb < 0.0 {
                    nv.push(cut(sa, sb));
                    nl.push(labels[i]);
                }
            }
            (false, false) => {}
        }
    }
    *verts = nv;
    *labels = nl;
    Clip::Done
}

/// Voronoi cell of `points[which]` among `points`, clipped to
/// `[-half_width, half_width] x [-depth, top]`.
///
/// Points within the relative orientation fence of a vertex are displaced by a
/// deterministic jitter of `FENCE` times the local scale and the cell is rebuilt.
pub fn voronoi_cell(points: &[Point], which: usize, bbox: Region) -> Result<CellPolygon> {
    let mut pts = points.to_vec();
    for attempt in 0..=MAX_JITTER_RETRIES {
        match voronoi_cell_once(&pts, which, bbox) {
            Ok(cell) => return Ok(cell),
            Err(bad) => {
                let mut rng = RngStream::new(derive_seed(bad as u64, attempt as u64), 0x717_7E4);
                let scale = FENCE * (1.0 + pts[bad][0].abs().max(pts[bad][1].abs()));
                pts[bad][0] += scale * (2.0 * rng.uniform() - 1.0);
                pts[bad][1] = (pts[bad][1] + scale * (2.0 * rng.uniform() - 1.0)).min(0.0);
            }
        }
    }
    Err(Error::Degenerate(format!(
        "orientation fence still hit after {MAX_JITTER_RETRIES} jitters"
    )))
}

fn voronoi_cell_once(
    points: &[Point],
    which: usize,
    bbox: Region,
) -> std::result::Result<CellPolygon, usize> {
    let z = points[which];
    let (w, d, top) = (bbox.half_width, bbox.depth, bbox.top);
    let mut verts = vec![[-w, -d], [w, -d], [w, top], [-w, top]];
    let mut labels: Vec<Option<usize>> = vec![None; 4];
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != which)
        .map(|(i, p)| ((p[0] - z[0]).hypot(p[1] - z[1]), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (dist, i) in order {
        let reach = verts
            .iter()
            .map(|v| (v[0] - z[0]).hypot(v[1] - z[1]))
            .fold(0.0, f64::max);
        if dist > 2.0 * reach * (1.0 + FENCE) {
            break;
        }
        if let Clip::Degenerate = clip(&mut verts, &mut labels, z, points[i], i) {
            return Err(i);
        }
    }
    Ok(CellPolygon {
        nucleus: z,
        neighbors: labels.iter().map(|l| l.map(|i| points[i])).collect(),
        vertices: verts,
        certified: false,
        extensions: 0,
    })
}

/// Which of the three nuclei a cell is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Nucleus {
    Left,
    Central,
    Right,
}

/// Clipping box `[-W, W] x [-W_d, 2 lambda]` of the configuration's region.
pub fn clipping_box(cfg: &PalmConfiguration) -> Region {
    Region {
        half_width: cfg.region.half_width,
        depth: cfg.region.depth,
        top: 2.0 * cfg.lambda,
    }
}

pub fn cell_of_nucleus(cfg: &PalmConfiguration, which: Nucleus) -> Result<CellPolygon> {
    let idx = match which {
        Nucleus::Left => 0,
        Nucleus::Central => 1,
        Nucleus::Right => 2,
    };
    let mut cell = voronoi_cell(&cfg.points(), idx, clipping_box(cfg))?;
    cell.certified = is_certified(cfg, &cell);
    Ok(cell)
}

/// Every vertex disk `D(v, |v - Z|)`, restricted to the closed lower half-plane, lies in
/// the sampled region, and no edge comes from the bounding box. Disks reaching below
/// the axis only inside the excluded disk are covered by the region test as well,
/// which makes the check conservative.
pub fn is_certified(cfg: &PalmConfiguration, cell: &CellPolygon) -> bool {
    if cell.touches_box() || cell.is_empty() {
        return false;
    }
    let z = cell.nucleus;
    let reg = cfg.region;
    cell.vertices.iter().all(|&v| {
        let dx = v[0] - z[0];
        let r2 = dx * dx + (v[1] - z[1]) * (v[1] - z[1]);
        let r = r2.sqrt();
        let (half_chord, bottom) = if v[1] > 0.0 {
            // r^2 - v_y^2 without squaring v_y.
            let c2 = dx * dx + z[1] * (z[1] - 2.0 * v[1]);
            if c2 <= 0.0 {
                return true;
            }
            (c2.sqrt(), v[1] - r)
        } else {
            (r, v[1] - r)
        };
        v[0] - half_chord >= -reg.half_width
            && v[0] + half_chord <= reg.half_width
            && bottom >= -reg.depth
    })
}

/// Certified Palm cell of `Z_c` and its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    pub config: PalmConfiguration,
    pub cell: CellPolygon,
}

/// Number of finite vertices of `cell` (the Voronoi cell of `points[which]`) whose
/// circumdisk contains another point or does not have exactly three points on its
/// boundary, with slack `rel` relative to the radius.
pub fn duality_defects(points: &[Point], which: usize, cell: &CellPolygon, rel: f64) -> usize {
    let z = points[which];
    let k = cell.len();
    (0..k)
        .filter(|&i| cell.neighbors[(i + k - 1) % k].is_some() && cell.neighbors[i].is_some())
        .filter(|&i| {
            let v = cell.vertices[i];
            let r = (v[0] - z[0]).hypot(v[1] - z[1]);
            let mut on_boundary = 0;
            for p in points {
                let d = (v[0] - p[0]).hypot(v[1] - p[1]);
                if d < r * (1.0 - rel) {
                    return true;
                }
                if (d - r).abs() <= rel * r {
                    on_boundary += 1;
                }
            }
            on_boundary != 3
        })
        .count()
}

/// Samples the Palm process, builds the cell of `Z_c` and doubles the region until the
/// cell is certified.
pub fn certify_and_extend(
    lambda: f64,
    q: &Quadruplet,
    rng: &mut RngStream,
    initial_region: Option<Region>,
) -> Result<OracleCell> {
    let region = initial_region.unwrap_or_else(|| Region::initial(lambda, q.r));
    let mut cfg = sample_palm_process(lambda, q, region, rng)?;
    for ext in 0..=MAX_EXTENSIONS {
        let mut cell = cell_of_nucleus(&cfg, Nucleus::Central)?;
        if cell.certified {
            cell.extensions = ext;
            return Ok(OracleCell { config: cfg, cell });
        }
        if ext < MAX_EXTENSIONS {
            extend_region(&mut cfg, rng);
        }
    }
    Err(Error::CertificationFailure {
        extensions: MAX_EXTENSIONS,
    })
}

fn side_walk(cell: &CellPolygon, lambda: f64, side: Side) -> Result<Vec<(Point, Point)>> {
    let n = cell.vertices.len();
    let top = cell.top_index();
    let apex = cell.vertices[top];
    let dist = apex[0].hypot(apex[1] - lambda);
    if dist > 1e-6 * lambda {
        return Err(Error::TopVertexNotFound { distance: dist });
    }
    let mut out = Vec::new();
    for step in 0..n {
        let (v, edge) = match side {
            Side::Left => ((top + step) % n, (top + step) % n),
            Side::Right => ((top + n - step) % n, (top + 2 * n - step - 1) % n),
        };
        let nb = cell.neighbors[edge]
            .ok_or_else(|| Error::Degenerate("branch reaches the bounding box".into()))?;
        out.push((cell.vertices[v], nb));
        if cell.vertices[v][1] < 0.0 {
            return Ok(out);
        }
    }
    Err(Error::Degenerate("branch never crosses the axis".into()))
}

/// Triangle statistics of the branch edges, one per edge starting above the axis:
/// `B_n = |Z_n - Z_c| lambda^{-1/3} / 2` and `H_n = dist(V_n, line(Z_c, Z_n)) / lambda`.
pub fn extract_branch_observables(
    cell: &CellPolygon,
    lambda: f64,
    side: Side,
) -> Result<Vec<ChainState>> {
    let z = cell.nucleus;
    let walk = side_walk(cell, lambda, side)?;
    Ok(walk[..walk.len() - 1]
        .iter()
        .enumerate()
        .map(|(n, &(v, p))| {
            let d = [p[0] - z[0], p[1] - z[1]];
            let len = d[0].hypot(d[1]);
            let area2 = (d[0] * (v[1] - z[1]) - d[1] * (v[0] - z[0])).abs();
            ChainState::with_n(0.5 * len / lambda.cbrt(), area2 / len / lambda, n as u32)
        })
        .collect())
}

/// Branch vertices `V_0, ..., V_N` with `V_N` the first one below the axis.
pub fn branch_vertices(cell: &CellPolygon, lambda: f64, side: Side) -> Result<Vec<Point>> {
    Ok(side_walk(cell, lambda, side)?
        .into_iter()
        .map(|(v, _)| v)
        .collect())
}

/// Number of polygon vertices.
pub fn count_vertices(cell: &CellPolygon) -> usize {
    cell.vertices.len()
}

/// Number of branch edges `N`, from `V_0` to the first vertex below the axis.
pub fn branch_edge_count(cell: &CellPolygon, lambda: f64, side: Side) -> Result<usize> {
    Ok(side_walk(cell, lambda, side)?.len() - 1)
}
