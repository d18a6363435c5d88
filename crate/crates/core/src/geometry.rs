//! Small fixed-size vector helpers.

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

#[inline]
pub fn sub2(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add2(a: Point2, b: Point2) -> Point2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale2(a: Point2, s: f64) -> Point2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot2(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross2(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm2(a: Point2) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist2(a: Point2, b: Point2) -> f64 {
    norm2(sub2(a, b))
}

#[inline]
pub fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale3(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Point3) -> f64 {
    dot3(a, a).sqrt()
}

/// Distance from `p` to the segment `a`-`b`, and the parameter of the
/// closest point along the segment.
pub fn point_segment(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let ab = sub2(b, a);
    let len2 = dot2(ab, ab);
    let t = if len2 > 0.0 {
        (dot2(sub2(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (dist2(p, add2(a, scale2(ab, t))), t)
}
