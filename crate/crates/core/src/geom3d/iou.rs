//! Rotated-rectangle overlap in the ground plane, via Sutherland-Hodgman
//! clipping of one convex footprint against the other.

use super::Box3D;

const COLLINEAR_EPS: f64 = 1e-9;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom.abs() < COLLINEAR_EPS {
        return q;
    }
    let s = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom;
    [p[0] + s * d1[0], p[1] + s * d1[1]]
}

/// Clips `subject` by the convex, counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let inside = |p: [f64; 2]| cross(a, b, p) >= -COLLINEAR_EPS;
        let mut prev = input[input.len() - 1];
        for &cur in &input {
            match (inside(cur), inside(prev)) {
                (true, true) => output.push(cur),
                (true, false) => {
                    output.push(line_intersection(prev, cur, a, b));
                    output.push(cur);
                }
                (false, true) => output.push(line_intersection(prev, cur, a, b)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    output
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let d = (a.px - b.px).hypot(a.py - b.py);
    if d > a.bev_radius() + b.bev_radius() {
        return 0.0;
    }
    let clipped = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&clipped).max(0.0)
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.l * a.w + b.l * b.w - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
