use serde::{Deserialize, Serialize};

use super::{ContourSet, Polyline, Structure, Vec2};

/// Square pixel grid in plane coordinates; row 0 is the top (+v) edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub size: usize,
    pub mm_per_px: f64,
    pub center: Vec2,
}

impl Grid {
    pub fn pixel_center(&self, row: usize, col: usize) -> Vec2 {
        let half = self.size as f64 / 2.0;
        Vec2::new(
            self.center.x + (col as f64 + 0.5 - half) * self.mm_per_px,
            self.center.y - (row as f64 + 0.5 - half) * self.mm_per_px,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub size: usize,
    /// Row-major labels; 0 is background, otherwise [`Structure::label`].
    pub labels: Vec<u8>,
}

impl LabelImage {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.size + col]
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn distinct_foreground(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn contains_even_odd(poly: &Polyline, q: &Vec2) -> bool {
    let pts = &poly.points;
    let n = pts.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (pts[i], pts[j]);
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Labels every pixel by the smallest closed contour containing its centre.
/// Open polylines do not enclose anything and are ignored.
pub fn rasterize(contours: &ContourSet, grid: &Grid) -> LabelImage {
    struct Loop<'a> {
        poly: &'a Polyline,
        area: f64,
        label: u8,
        min: Vec2,
        max: Vec2,
    }
    let mut loops: Vec<Loop> = Vec::new();
    for (s, polys) in &contours.contours {
        for p in polys.iter().filter(|p| p.closed && p.points.len() >= 3) {
            let (mut min, mut max) = (p.points[0], p.points[0]);
            for q in &p.points {
                min = min.inf(q);
                max = max.sup(q);
            }
            loops.push(Loop { poly: p, area: p.signed_area().abs(), label: Structure::label(*s), min, max });
        }
    }
    // smallest first, so the first hit is the innermost
    loops.sort_by(|a, b| a.area.total_cmp(&b.area).then(a.label.cmp(&b.label)));
    let mut labels = vec![0u8; grid.size * grid.size];
    for row in 0..grid.size {
        for col in 0..grid.size {
            let q = grid.pixel_center(row, col);
            if let Some(l) = loops.iter().find(|l| {
                q.x >= l.min.x && q.x <= l.max.x && q.y >= l.min.y && q.y <= l.max.y && contains_even_odd(l.poly, &q)
            }) {
                labels[row * grid.size + col] = l.label;
            }
        }
    }
    LabelImage { size: grid.size, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Plane, Vec3};

    fn square(side: f64, label: Structure) -> (Structure, Vec<Polyline>) {
        let h = side / 2.0;
        let pts = vec![Vec2::new(-h, -h), Vec2::new(h, -h), Vec2::new(h, h), Vec2::new(-h, h)];
        (label, vec![Polyline { points: pts, closed: true }])
    }

    fn plane() -> Plane {
        Plane::new(Vec3::zeros(), Vec3::z(), None).unwrap()
    }

    #[test]
    fn empty_set_is_background() {
        let img = rasterize(&ContourSet::empty(plane()), &Grid { size: 16, mm_per_px: 1.0, center: Vec2::zeros() });
        assert!(img.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn square_area_matches() {
        let mut cs = ContourSet::empty(plane());
        let (s, p) = square(20.0, Structure::LV);
        cs.contours.insert(s, p);
        // offset centre so pixel centres do not sit on the square's edges
        let img = rasterize(&cs, &Grid { size: 40, mm_per_px: 1.0, center: Vec2::new(0.3, -0.2) });
        let area = img.count(Structure::LV.label()) as f64;
        assert!((area - 400.0).abs() / 400.0 < 0.05, "{area}");
    }

    #[test]
    fn inner_contour_wins() {
        let mut cs = ContourSet::empty(plane());
        let (s, p) = square(30.0, Structure::Myo);
        cs.contours.insert(s, p);
        let (s, p) = square(10.0, Structure::LV);
        cs.contours.insert(s, p);
        let grid = Grid { size: 40, mm_per_px: 1.0, center: Vec2::zeros() };
        let img = rasterize(&cs, &grid);
        assert_eq!(img.get(20, 20), Structure::LV.label());
        assert_eq!(img.get(20, 8), Structure::Myo.label());
        assert_eq!(img.get(0, 0), 0);
        assert_eq!(img, rasterize(&cs, &grid));
    }
}
