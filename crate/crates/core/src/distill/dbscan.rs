//! Density-based clustering of 3D points with a uniform hash grid for
//! neighborhood queries.

use std::collections::HashMap;

use crate::geom::Vec3;

/// Cluster id per point; `None` marks noise. Clusters are numbered in the
/// order their first core point appears.
pub fn dbscan(points: &[Vec3<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let key = |p: &Vec3<f64>| -> (i64, i64, i64) { ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64, (p.z / eps).floor() as i64) };
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbors = |i: usize, out: &mut Vec<usize>| {
        out.clear();
        let (cx, cy, cz) = key(&points[i]);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(list) = cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(list.iter().copied().filter(|&j| (points[j] - points[i]).norm_squared() <= eps2));
                    }
                }
            }
        }
        out.sort_unstable();
    };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    let mut nb = Vec::new();
    let mut nb2 = Vec::new();
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        neighbors(i, &mut nb);
        if nb.len() < min_pts {
            continue;
        }
        let c = next;
        next += 1;
        label[i] = Some(c);
        let mut queue: std::collections::VecDeque<usize> = nb.iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            if label[j].is_none() {
                label[j] = Some(c);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            neighbors(j, &mut nb2);
            if nb2.len() >= min_pts {
                queue.extend(nb2.iter().copied().filter(|&m| !visited[m] || label[m].is_none()));
            }
        }
    }
    label
}
