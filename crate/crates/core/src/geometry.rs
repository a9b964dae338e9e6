//! Spatial deployments and R-disk neighborhoods.
//!
//! Points live in a square window `[0, side]²`. Distances are Euclidean in
//! [`BoundaryMode::Open`] and wrap around in [`BoundaryMode::Torus`].

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    #[default]
    Open,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Square observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    side_length: f64,
    boundary_mode: BoundaryMode,
}

impl Window {
    pub fn new(side_length: f64, boundary_mode: BoundaryMode) -> Result<Self> {
        ensure(
            side_length.is_finite() && side_length > 0.0,
            "side_length",
            side_length,
            "must be finite and > 0",
        )?;
        Ok(Self {
            side_length,
            boundary_mode,
        })
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary_mode
    }

    pub fn area(&self) -> f64 {
        self.side_length * self.side_length
    }

    pub fn center(&self) -> Point {
        let h = 0.5 * self.side_length;
        Point::new(h, h)
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.side_length).contains(&p.x) && (0.0..=self.side_length).contains(&p.y)
    }

    fn axis_delta(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        match self.boundary_mode {
            BoundaryMode::Open => d,
            BoundaryMode::Torus => {
                let d = d.rem_euclid(self.side_length);
                d.min(self.side_length - d)
            }
        }
    }

    /// Squared distance under the active boundary metric.
    pub fn distance_sq(&self, a: Point, b: Point) -> f64 {
        let dx = self.axis_delta(a.x, b.x);
        let dy = self.axis_delta(a.y, b.y);
        dx * dx + dy * dy
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        self.distance_sq(a, b).sqrt()
    }

    fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(
            rng.random::<f64>() * self.side_length,
            rng.random::<f64>() * self.side_length,
        )
    }
}

/// Points of a homogeneous Poisson process of the given intensity in the window.
pub fn sample_ppp<R: Rng + ?Sized>(intensity: f64, window: &Window, rng: &mut R) -> Result<Vec<Point>> {
    ensure(
        intensity.is_finite() && intensity > 0.0,
        "intensity",
        intensity,
        "must be finite and > 0",
    )?;
    let mean = intensity * window.area();
    let count = Poisson::new(mean)
        .map_err(|_| param("intensity", intensity, "intensity x area is not a valid Poisson mean"))?
        .sample(rng) as usize;
    Ok((0..count).map(|_| window.uniform_point(rng)).collect())
}

/// Exactly `n` i.i.d. uniform points in the window.
pub fn sample_binomial<R: Rng + ?Sized>(n: usize, window: &Window, rng: &mut R) -> Result<Vec<Point>> {
    ensure(n >= 2, "n", n as f64, "need at least 2 nodes")?;
    Ok((0..n).map(|_| window.uniform_point(rng)).collect())
}

/// Node positions plus their symmetric R-disk neighbor lists.
///
/// Completed deployments are immutable and are shared read-only across
/// Monte-Carlo workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    positions: Vec<Point>,
    neighbors: Vec<Vec<usize>>,
    range: f64,
    window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryStats {
    pub n: usize,
    pub edges: usize,
    pub mean_degree: f64,
    /// `None` when the deployment has no links.
    pub r_eff: Option<f64>,
}

impl Deployment {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.window.distance(self.positions[i], self.positions[j])
    }

    /// Unordered neighbor pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn stats(&self) -> GeometryStats {
        let n = self.len();
        let edges = self.edge_count();
        GeometryStats {
            n,
            edges,
            mean_degree: if n == 0 { 0.0 } else { 2.0 * edges as f64 / n as f64 },
            r_eff: effective_distance(self).ok(),
        }
    }
}

/// Builds the R-disk graph: `j` neighbors `i` iff `i != j` and `dist(i, j) <= range`.
///
/// Uses a cell grid with cells no smaller than `range`, so only the 3x3 block
/// around each cell is scanned.
pub fn build_disk_graph(points: Vec<Point>, range: f64, window: Window) -> Result<Deployment> {
    ensure(range.is_finite() && range > 0.0, "range", range, "must be finite and > 0")?;
    if let Some(p) = points.iter().find(|p| !window.contains(**p)) {
        return Err(param("point", p.x.max(p.y), "point lies outside the window"));
    }

    let side = window.side_length();
    let cells = ((side / range).floor() as usize).clamp(1, 4096);
    let cell_size = side / cells as f64;
    let cell_of = |v: f64| ((v / cell_size) as usize).min(cells - 1);

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, p) in points.iter().enumerate() {
        buckets[cell_of(p.y) * cells + cell_of(p.x)].push(i);
    }

    let torus = window.boundary_mode() == BoundaryMode::Torus;
    let axis_neighbors = |c: usize| -> Vec<usize> {
        let mut out: Vec<usize> = [-1i64, 0, 1]
            .iter()
            .filter_map(|&d| {
                let k = c as i64 + d;
                if torus {
                    Some(k.rem_euclid(cells as i64) as usize)
                } else if (0..cells as i64).contains(&k) {
                    Some(k as usize)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    };

    let range_sq = range * range;
    let mut neighbors = vec![Vec::new(); points.len()];
    for cy in 0..cells {
        for cx in 0..cells {
            let home = &buckets[cy * cells + cx];
            if home.is_empty() {
                continue;
            }
            for ny in axis_neighbors(cy) {
                for nx in axis_neighbors(cx) {
                    for &i in home {
                        for &j in &buckets[ny * cells + nx] {
                            if j > i && window.distance_sq(points[i], points[j]) <= range_sq {
                                neighbors[i].push(j);
                                neighbors[j].push(i);
                            }
                        }
                    }
                }
            }
        }
    }
    for ns in &mut neighbors {
        ns.sort_unstable();
    }

    Ok(Deployment {
        positions: points,
        neighbors,
        range,
        window,
    })
}

/// Root-mean-square length over unordered neighbor pairs.
pub fn effective_distance(deployment: &Deployment) -> Result<f64> {
    let (sum_sq, count) = deployment
        .edges()
        .fold((0.0, 0usize), |(s, c), (i, j)| {
            (s + deployment.window.distance_sq(deployment.positions[i], deployment.positions[j]), c + 1)
        });
    if count == 0 {
        return Err(Error::NoLinks);
    }
    Ok((sum_sq / count as f64).sqrt())
}

/// Reads whitespace-separated `x y` pairs, one per line. Blank lines and `#` comments are skipped.
pub fn read_points<R: BufRead>(reader: R) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line: idx + 1,
                message: format!("`{s}`: {e}"),
            })
        };
        match fields.as_slice() {
            [x, y] => out.push(Point::new(parse(x)?, parse(y)?)),
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 2 fields, found {}", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_points<W: Write>(mut writer: W, points: &[Point]) -> Result<()> {
    for p in points {
        writeln!(writer, "{} {}", p.x, p.y)?;
    }
    Ok(())
}
