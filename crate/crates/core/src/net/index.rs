//! Static 2-d tree over junction coordinates for nearest-junction queries.

#[derive(Debug, Clone)]
struct IndexedPoint {
    x: f64,
    y: f64,
    id: String,
}

#[derive(Debug, Clone, Default)]
pub struct JunctionIndex {
    points: Vec<IndexedPoint>,
}

fn euclid(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dx = ax - bx;
    let dy = ay - by;
    (dx * dx + dy * dy).sqrt()
}

impl JunctionIndex {
    pub fn build<'a>(points: impl IntoIterator<Item = (&'a str, f64, f64)>) -> Self {
        let mut points: Vec<IndexedPoint> = points
            .into_iter()
            .map(|(id, x, y)| IndexedPoint { x, y, id: id.to_string() })
            .collect();
        partition(&mut points, 0);
        JunctionIndex { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `(x, y)`; equal distances resolve to the smaller id.
    pub fn nearest(&self, x: f64, y: f64) -> Option<(&str, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.search(0, self.points.len(), 0, x, y, &mut best);
        best.map(|(i, d)| (self.points[i].id.as_str(), d))
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, x: f64, y: f64, best: &mut Option<(usize, f64)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = euclid(p.x, p.y, x, y);
        let better = match *best {
            None => true,
            Some((bi, bd)) => d < bd || (d == bd && p.id < self.points[bi].id),
        };
        if better {
            *best = Some((mid, d));
        }
        let diff = if depth.is_multiple_of(2) { x - p.x } else { y - p.y };
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, depth + 1, x, y, best);
        let must_visit_far = match *best {
            None => true,
            Some((_, bd)) => diff.abs() <= bd,
        };
        if must_visit_far {
            self.search(far.0, far.1, depth + 1, x, y, best);
        }
    }
}

fn partition(points: &mut [IndexedPoint], depth: usize) {
    if points.len() <= 1 {
        return;
    }
    let mid = points.len() / 2;
    if depth.is_multiple_of(2) {
        points.select_nth_unstable_by(mid, |a, b| a.x.total_cmp(&b.x));
    } else {
        points.select_nth_unstable_by(mid, |a, b| a.y.total_cmp(&b.y));
    }
    let (left, right) = points.split_at_mut(mid);
    partition(left, depth + 1);
    partition(&mut right[1..], depth + 1);
}
