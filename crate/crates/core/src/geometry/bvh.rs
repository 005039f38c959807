//! Bounding-volume hierarchy for closest-point queries against points or
//! triangles.

use super::Vec3;

pub trait Primitive {
    fn bounds(&self) -> (Vec3, Vec3);
    fn closest_point(&self, p: &Vec3) -> Vec3;
    fn centroid(&self) -> Vec3 {
        let (a, b) = self.bounds();
        (a + b) * 0.5
    }
}

impl Primitive for Vec3 {
    fn bounds(&self) -> (Vec3, Vec3) {
        (*self, *self)
    }

    fn closest_point(&self, _p: &Vec3) -> Vec3 {
        *self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle(pub [Vec3; 3]);

impl Primitive for Triangle {
    fn bounds(&self) -> (Vec3, Vec3) {
        let [a, b, c] = self.0;
        (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
    }

    fn closest_point(&self, p: &Vec3) -> Vec3 {
        closest_point_on_triangle(p, &self.0)
    }

    fn centroid(&self) -> Vec3 {
        (self.0[0] + self.0[1] + self.0[2]) / 3.0
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, t: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Debug, Clone)]
struct Node {
    min: Vec3,
    max: Vec3,
    // leaf: start..start+count into `order`; inner: children at `left`, `left+1`
    start: usize,
    count: usize,
    left: usize,
}

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
pub struct Bvh<P> {
    prims: Vec<P>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Result of a nearest query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub point: Vec3,
    pub distance: f64,
    pub index: usize,
}

fn box_dist2(p: &Vec3, min: &Vec3, max: &Vec3) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let v = if p[k] < min[k] {
            min[k] - p[k]
        } else if p[k] > max[k] {
            p[k] - max[k]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

impl<P: Primitive> Bvh<P> {
    pub fn build(prims: Vec<P>) -> Self {
        let centroids: Vec<Vec3> = prims.iter().map(Primitive::centroid).collect();
        let bounds: Vec<(Vec3, Vec3)> = prims.iter().map(Primitive::bounds).collect();
        let mut order: Vec<usize> = (0..prims.len()).collect();
        let mut nodes = vec![Node { min: Vec3::zeros(), max: Vec3::zeros(), start: 0, count: prims.len(), left: 0 }];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            let slice = &mut order[start..start + count];
            let (mut min, mut max) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
            let (mut cmin, mut cmax) = (min, max);
            for &i in slice.iter() {
                min = min.inf(&bounds[i].0);
                max = max.sup(&bounds[i].1);
                cmin = cmin.inf(&centroids[i]);
                cmax = cmax.sup(&centroids[i]);
            }
            nodes[ni].min = min;
            nodes[ni].max = max;
            if count <= LEAF_SIZE {
                continue;
            }
            let extent = cmax - cmin;
            let axis = extent.imax();
            let mid = count / 2;
            slice.select_nth_unstable_by(mid, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
            let left = nodes.len();
            nodes.push(Node { min, max, start, count: mid, left: 0 });
            nodes.push(Node { min, max, start: start + mid, count: count - mid, left: 0 });
            nodes[ni].left = left;
            nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        Bvh { prims, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn nearest(&self, p: &Vec3) -> Option<Nearest> {
        if self.prims.is_empty() {
            return None;
        }
        let mut best: Option<(f64, Vec3, usize)> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist2(p, &node.min, &node.max) >= best_d2 {
                continue;
            }
            if node.count > 0 || node.left == 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    let q = self.prims[i].closest_point(p);
                    let d2 = (q - p).norm_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = Some((d2, q, i));
                    }
                }
                continue;
            }
            let (l, r) = (node.left, node.left + 1);
            let dl = box_dist2(p, &self.nodes[l].min, &self.nodes[l].max);
            let dr = box_dist2(p, &self.nodes[r].min, &self.nodes[r].max);
            // push the farther child first so the nearer one is visited next
            if dl < dr {
                stack.push(r);
                stack.push(l);
            } else {
                stack.push(l);
                stack.push(r);
            }
        }
        best.map(|(d2, point, index)| Nearest { point, distance: d2.sqrt(), index })
    }
}
