//! Cubic path segments and arc-length waypoint sampling.

use crate::geom::Vec3;
use crate::scalar::Scalar;

/// Subdivisions per segment used to tabulate arc length.
pub const ARC_SUBDIVISIONS: usize = 1000;

/// `S(t) = a (t - t_i)^3 + b (t - t_i)^2 + c (t - t_i) + d` on `[t_i, t_{i+1}]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicSegment<T> {
    pub a: Vec3<T>,
    pub b: Vec3<T>,
    pub c: Vec3<T>,
    pub d: Vec3<T>,
}

impl<T: Scalar> CubicSegment<T> {
    /// Evaluates at local parameter `s = t - t_i`.
    #[inline]
    pub fn eval(&self, s: T) -> Vec3<T> {
        ((self.a.scale(s) + self.b).scale(s) + self.c).scale(s) + self.d
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }
}

/// Piecewise cubic with `knots.len() == segments.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline<T> {
    pub segments: Vec<CubicSegment<T>>,
    pub knots: Vec<T>,
}

impl<T: Scalar> CubicSpline<T> {
    pub fn single(seg: CubicSegment<T>, t0: T, t1: T) -> Self {
        CubicSpline {
            segments: vec![seg],
            knots: vec![t0, t1],
        }
    }

    pub fn eval(&self, t: T) -> Vec3<T> {
        let i = self
            .knots
            .windows(2)
            .position(|w| t <= w[1])
            .unwrap_or(self.segments.len() - 1);
        self.segments[i].eval(t - self.knots[i])
    }

    pub fn start(&self) -> Vec3<T> {
        self.segments[0].eval(T::zero())
    }

    /// Dense `(t, cumulative arc length)` table built from chord sums.
    pub fn arc_table(&self) -> Vec<(T, T)> {
        let mut table = Vec::with_capacity(self.segments.len() * ARC_SUBDIVISIONS + 1);
        let mut prev = self.start();
        let mut len = T::zero();
        table.push((self.knots[0], len));
        for (i, seg) in self.segments.iter().enumerate() {
            let (t0, t1) = (self.knots[i], self.knots[i + 1]);
            let span = t1 - t0;
            for k in 1..=ARC_SUBDIVISIONS {
                let s = span * T::from_count(k) / T::from_count(ARC_SUBDIVISIONS);
                let p = seg.eval(s);
                len = len + p.distance(prev);
                prev = p;
                table.push((t0 + s, len));
            }
        }
        table
    }
}

/// Points spaced `spacing` apart in arc length, from the start of the
/// spline through its end. The final gap may be shorter than `spacing`.
/// A spline of zero length yields its start point only.
pub fn sample_spline_waypoints<T: Scalar>(spline: &CubicSpline<T>, spacing: T) -> Vec<Vec3<T>> {
    assert!(spacing > T::zero(), "waypoint spacing must be positive");
    assert!(
        spline.segments.iter().all(CubicSegment::is_finite),
        "spline coefficients must be finite"
    );
    let table = spline.arc_table();
    let total = table.last().map(|e| e.1).unwrap_or_else(T::zero);
    let mut out = vec![spline.start()];
    let tiny = spacing * T::c(1e-6);
    if total <= tiny {
        return out;
    }
    let mut k = 1;
    let mut idx = 1;
    loop {
        let target = spacing * T::from_count(k);
        if target > total - tiny {
            break;
        }
        while table[idx].1 < target {
            idx += 1;
        }
        let (t0, l0) = table[idx - 1];
        let (t1, l1) = table[idx];
        let w = if l1 > l0 { (target - l0) / (l1 - l0) } else { T::zero() };
        out.push(spline.eval(t0 + (t1 - t0) * w));
        k += 1;
    }
    out.push(spline.eval(*spline.knots.last().expect("spline has knots")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
        Vec3::new(x, y, z)
    }

    #[test]
    fn straight_unit_speed_line() {
        let seg = CubicSegment {
            a: Vec3::zero(),
            b: Vec3::zero(),
            c: v(1.0, 0.0, 0.0),
            d: Vec3::zero(),
        };
        let w = sample_spline_waypoints(&CubicSpline::single(seg, 0.0, 1.0), 0.25);
        let xs: Vec<f64> = w.iter().map(|p| p.x()).collect();
        assert_eq!(xs.len(), 5, "{xs:?}");
        for (x, e) in xs.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((x - e).abs() < 1e-9, "{xs:?}");
        }
    }

    #[test]
    fn constant_spline_is_single_point() {
        let seg = CubicSegment {
            a: Vec3::zero(),
            b: Vec3::zero(),
            c: Vec3::zero(),
            d: v(0.1, 0.2, 0.3),
        };
        let w = sample_spline_waypoints(&CubicSpline::single(seg, 0.0, 1.0), 0.01);
        assert_eq!(w, vec![v(0.1, 0.2, 0.3)]);
    }

    #[test]
    fn multi_segment_eval_uses_local_parameter() {
        let s0 = CubicSegment {
            a: Vec3::zero(),
            b: Vec3::zero(),
            c: v(1.0, 0.0, 0.0),
            d: Vec3::zero(),
        };
        let s1 = CubicSegment {
            a: Vec3::zero(),
            b: Vec3::zero(),
            c: v(0.0, 1.0, 0.0),
            d: v(1.0, 0.0, 0.0),
        };
        let sp = CubicSpline {
            segments: vec![s0, s1],
            knots: vec![0.0, 1.0, 2.0],
        };
        assert!((sp.eval(1.5) - v(1.0, 0.5, 0.0)).norm() < 1e-15);
        let w = sample_spline_waypoints(&sp, 0.5);
        assert_eq!(w.len(), 5);
        assert!((w[3] - v(1.0, 0.5, 0.0)).norm() < 1e-9);
    }
}
