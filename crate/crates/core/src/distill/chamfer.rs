//! Symmetric squared 2D Chamfer distance with a bucket-grid nearest-neighbor index.

use crate::{Error, Result};

pub type Point2 = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct Chamfer {
    pub loss: f64,
    /// `∂loss/∂u` for every point of `U`.
    pub grad: Vec<Point2>,
}

#[inline]
fn dist2(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Uniform grid over a point set; cells hold point indices in ascending order.
struct BucketGrid<'a> {
    pts: &'a [Point2],
    x0: f64,
    y0: f64,
    h: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> BucketGrid<'a> {
    fn new(pts: &'a [Point2]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let area = ((x1 - x0) * (y1 - y0)).max(1e-12);
        // about two points per cell, never finer than a hundredth of a pixel
        let h = (2.0 * area / pts.len() as f64).sqrt().max((x1 - x0).max(y1 - y0) / 4096.0).max(1e-2);
        let nx = ((x1 - x0) / h) as usize + 1;
        let ny = ((y1 - y0) / h) as usize + 1;
        let mut count = vec![0usize; nx * ny + 1];
        let cell_of = |p: &Point2| -> usize {
            let cx = (((p[0] - x0) / h) as usize).min(nx - 1);
            let cy = (((p[1] - y0) / h) as usize).min(ny - 1);
            cy * nx + cx
        };
        for p in pts {
            count[cell_of(p) + 1] += 1;
        }
        for i in 0..nx * ny {
            count[i + 1] += count[i];
        }
        let start = count.clone();
        let mut fill = count;
        let mut items = vec![0; pts.len()];
        for (i, p) in pts.iter().enumerate() {
            let c = cell_of(p);
            items[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            pts,
            x0,
            y0,
            h,
            nx,
            ny,
            start,
            items,
        }
    }

    fn scan_cell(&self, cx: usize, cy: usize, q: Point2, best: &mut (f64, usize)) {
        let c = cy * self.nx + cx;
        for &j in &self.items[self.start[c]..self.start[c + 1]] {
            let d = dist2(q, self.pts[j]);
            if d < best.0 || (d == best.0 && j < best.1) {
                *best = (d, j);
            }
        }
    }

    /// Nearest point to `q`: `(squared distance, index)`, lowest index on ties.
    fn nearest(&self, q: Point2) -> (f64, usize) {
        let fx = ((q[0] - self.x0) / self.h).floor();
        let fy = ((q[1] - self.y0) / self.h).floor();
        let cx = fx.clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = fy.clamp(0.0, (self.ny - 1) as f64) as usize;
        let mut best = (f64::INFINITY, usize::MAX);
        let max_r = self.nx.max(self.ny);
        for r in 0..=max_r {
            let (xlo, xhi) = (cx as isize - r as isize, cx + r);
            let (ylo, yhi) = (cy as isize - r as isize, cy + r);
            for y in ylo.max(0) as usize..=yhi.min(self.ny - 1) {
                let on_edge_row = y as isize == ylo || y == yhi;
                if on_edge_row {
                    for x in xlo.max(0) as usize..=xhi.min(self.nx - 1) {
                        self.scan_cell(x, y, q, &mut best);
                    }
                } else {
                    if xlo >= 0 {
                        self.scan_cell(xlo as usize, y, q, &mut best);
                    }
                    if xhi < self.nx {
                        self.scan_cell(xhi, y, q, &mut best);
                    }
                }
            }
            // distance from q to the nearest cell outside the scanned block
            let mut bound = f64::INFINITY;
            if xlo > 0 {
                bound = bound.min(q[0] - (self.x0 + xlo as f64 * self.h));
            }
            if xhi + 1 < self.nx {
                bound = bound.min(self.x0 + (xhi + 1) as f64 * self.h - q[0]);
            }
            if ylo > 0 {
                bound = bound.min(q[1] - (self.y0 + ylo as f64 * self.h));
            }
            if yhi + 1 < self.ny {
                bound = bound.min(self.y0 + (yhi + 1) as f64 * self.h - q[1]);
            }
            if bound == f64::INFINITY {
                break;
            }
            // shrink slightly so rounding can never hide a tie
            let b = (bound.max(0.0) * (1.0 - 1e-9) - 1e-12).max(0.0);
            if best.0 < b * b {
                break;
            }
        }
        best
    }
}

/// `mean_u min_f ‖u − f‖² + mean_f min_u ‖f − u‖²` and its gradient with
/// respect to `U`. Nearest neighbors break ties by lowest index.
pub fn chamfer_2d(u: &[Point2], f: &[Point2]) -> Result<Chamfer> {
    if u.is_empty() || f.is_empty() {
        return Err(Error::invalid("chamfer distance needs two non-empty point sets"));
    }
    let (nu, nf) = (u.len() as f64, f.len() as f64);
    let f_index = BucketGrid::new(f);
    let u_index = BucketGrid::new(u);
    let mut grad = vec![[0.0; 2]; u.len()];
    let mut forward = 0.0;
    for (i, p) in u.iter().enumerate() {
        let (d, j) = f_index.nearest(*p);
        forward += d;
        grad[i][0] += 2.0 * (p[0] - f[j][0]) / nu;
        grad[i][1] += 2.0 * (p[1] - f[j][1]) / nu;
    }
    let mut backward = 0.0;
    for q in f {
        let (d, i) = u_index.nearest(*q);
        backward += d;
        grad[i][0] += 2.0 * (u[i][0] - q[0]) / nf;
        grad[i][1] += 2.0 * (u[i][1] - q[1]) / nf;
    }
    Ok(Chamfer {
        loss: forward / nu + backward / nf,
        grad,
    })
}
