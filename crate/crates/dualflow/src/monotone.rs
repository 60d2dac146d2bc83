//! Nondecreasing right-continuous piecewise-linear functions on `[0, ∞)` and
//! the operations the dual-flow construction needs: evaluation with left
//! limits, right-continuous inversion, composition, jump/flat bookkeeping,
//! and two path metrics (uniform and Lévy-type).
//!
//! Every function is stored in a canonical form: strictly increasing knots
//! starting at 0, the value at each knot (the right limit), one slope per
//! bounded segment, and a tail slope on the last unbounded segment. Values on
//! `(-∞, 0)` are 0 by convention, so a positive value at knot 0 is a jump at
//! the origin.

use thiserror::Error;

/// Tolerance for monotonicity across knots at construction time. Composition
/// and inversion re-derive values with a handful of float operations, so exact
/// chains can be off by a few ulps; anything worse is a real defect.
pub const VALUE_TOL: f64 = 1e-12;

/// Width at which the Lévy-metric bisection stops.
pub const LEVY_BISECT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MonotoneError {
    #[error("knot {index} breaks the knot contract (knots start at 0, strictly increase, stay finite)")]
    InvalidKnots { index: usize },
    #[error("knots, values and slopes have inconsistent lengths or are empty")]
    InvalidShape,
    #[error("value or slope at index {index} is negative or non-finite")]
    InvalidData { index: usize },
    #[error("function decreases across knot {index}: left limit {left_limit} exceeds value {value}")]
    DecreasingAtKnot { index: usize, left_limit: f64, value: f64 },
    #[error("inverse may be infinite: level {level} is never exceeded")]
    InverseUnbounded { level: f64 },
    #[error("record parse failure at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A nondecreasing, right-continuous, piecewise-linear function on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneFn {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    tail_slope: f64,
}

impl MonotoneFn {
    /// Build and canonicalize. `values[i]` is the value at `knots[i]` (the
    /// right limit); `slopes[i]` applies on `[knots[i], knots[i+1])`;
    /// `tail_slope` applies beyond the last knot. Jumps are encoded by a
    /// value above the incoming left limit. Decreases beyond [`VALUE_TOL`]
    /// are rejected.
    pub fn new(
        knots: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
        tail_slope: f64,
    ) -> Result<Self, MonotoneError> {
        if knots.is_empty() || values.len() != knots.len() || slopes.len() + 1 != knots.len() {
            return Err(MonotoneError::InvalidShape);
        }
        if knots[0] != 0.0 {
            return Err(MonotoneError::InvalidKnots { index: 0 });
        }
        for i in 0..knots.len() {
            if !knots[i].is_finite() || (i > 0 && knots[i] <= knots[i - 1]) {
                return Err(MonotoneError::InvalidKnots { index: i });
            }
            if !values[i].is_finite() || values[i] < 0.0 {
                return Err(MonotoneError::InvalidData { index: i });
            }
        }
        for (i, s) in slopes.iter().enumerate() {
            if !s.is_finite() || *s < 0.0 {
                return Err(MonotoneError::InvalidData { index: i });
            }
        }
        if !tail_slope.is_finite() || tail_slope < 0.0 {
            return Err(MonotoneError::InvalidData { index: knots.len() });
        }
        for i in 0..slopes.len() {
            let left_limit = values[i] + slopes[i] * (knots[i + 1] - knots[i]);
            if values[i + 1] < left_limit - VALUE_TOL {
                return Err(MonotoneError::DecreasingAtKnot {
                    index: i + 1,
                    left_limit,
                    value: values[i + 1],
                });
            }
        }
        let mut f = MonotoneFn { knots, values, slopes, tail_slope };
        f.normalize();
        Ok(f)
    }

    /// Drop knots that change nothing: a knot is redundant when the function
    /// is exactly continuous there and the slope does not change. Exact
    /// comparisons only — near-collinear segments are kept as given.
    fn normalize(&mut self) {
        let mut keep = vec![true; self.knots.len()];
        for i in 1..self.knots.len() {
            let prev = self.last_kept(&keep, i);
            let left_limit =
                self.values[prev] + self.slopes[i - 1] * (self.knots[i] - self.knots[prev]);
            let slope_before = self.slopes[i - 1];
            let slope_after =
                if i < self.slopes.len() { self.slopes[i] } else { self.tail_slope };
            // The incoming slope must be uniform across the whole kept gap.
            let uniform = (prev..i).all(|j| self.slopes[j] == slope_before);
            if uniform && left_limit == self.values[i] && slope_before == slope_after {
                keep[i] = false;
            }
        }
        if keep.iter().all(|&k| k) {
            return;
        }
        let mut knots = Vec::new();
        let mut values = Vec::new();
        let mut slopes = Vec::new();
        for i in 0..self.knots.len() {
            if keep[i] {
                if !knots.is_empty() {
                    // Slope on the segment that ends at this kept knot.
                    slopes.push(self.slopes[i - 1]);
                }
                knots.push(self.knots[i]);
                values.push(self.values[i]);
            }
        }
        self.knots = knots;
        self.values = values;
        self.slopes = slopes;
    }

    fn last_kept(&self, keep: &[bool], upto: usize) -> usize {
        (0..upto).rev().find(|&j| keep[j]).expect("knot 0 is always kept")
    }

    /// The identity map.
    pub fn identity() -> Self {
        MonotoneFn { knots: vec![0.0], values: vec![0.0], slopes: vec![], tail_slope: 1.0 }
    }

    /// The constant map `x ↦ c`.
    pub fn constant(c: f64) -> Self {
        assert!(c.is_finite() && c >= 0.0, "constant must be finite and nonnegative");
        MonotoneFn { knots: vec![0.0], values: vec![c], slopes: vec![], tail_slope: 0.0 }
    }

    /// Materializes an absorbing state snapshot sampled on a positive grid:
    /// exactly 0 below the first grid point with a positive value (a value of
    /// 0 means the point is absorbed, and interpolating a ramp into the
    /// absorbed region would fake mass where there is none), a jump at that
    /// point, piecewise-linear interpolation of `(grid[i], values[i])` beyond
    /// it, and the raw slope of the last grid cell continued past the end.
    pub fn from_grid(grid: &[f64], values: &[f64]) -> Result<Self, MonotoneError> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(MonotoneError::InvalidShape);
        }
        if grid[0] <= 0.0 {
            return Err(MonotoneError::InvalidKnots { index: 0 });
        }
        let mut knots = Vec::with_capacity(grid.len() + 1);
        let mut vals = Vec::with_capacity(grid.len() + 1);
        let mut slopes = Vec::with_capacity(grid.len());
        knots.push(0.0);
        vals.push(0.0);
        slopes.push(0.0);
        for i in 0..grid.len() {
            knots.push(grid[i]);
            vals.push(values[i]);
            if i + 1 < grid.len() {
                slopes.push(if values[i] == 0.0 {
                    0.0
                } else {
                    (values[i + 1] - values[i]) / (grid[i + 1] - grid[i])
                });
            }
        }
        let g = grid.len();
        let tail = (values[g - 1] - values[g - 2]) / (grid[g - 1] - grid[g - 2]);
        MonotoneFn::new(knots, vals, slopes, tail)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    /// Index of the segment containing `x` (the last knot at or below `x`).
    fn segment_index(&self, x: f64) -> usize {
        debug_assert!(x >= 0.0);
        self.knots.partition_point(|&k| k <= x) - 1
    }

    /// Value at `x ≥ 0` (right-continuous).
    pub fn eval(&self, x: f64) -> f64 {
        assert!(x.is_finite() && x >= 0.0, "evaluation point must be finite and nonnegative");
        let i = self.segment_index(x);
        let s = if i < self.slopes.len() { self.slopes[i] } else { self.tail_slope };
        self.values[i] + s * (x - self.knots[i])
    }

    /// Value at `x` with arguments below 0 reading as 0 (the zero extension
    /// used by the Lévy metric).
    fn eval_ext(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.eval(x)
        }
    }

    /// Left limit at `x ≥ 0`; the left limit at 0 is 0 by convention.
    pub fn left_limit(&self, x: f64) -> f64 {
        assert!(x.is_finite() && x >= 0.0, "evaluation point must be finite and nonnegative");
        if x == 0.0 {
            return 0.0;
        }
        let p = self.knots.partition_point(|&k| k < x);
        let i = p - 1;
        let s = if i < self.slopes.len() { self.slopes[i] } else { self.tail_slope };
        self.values[i] + s * (x - self.knots[i])
    }

    fn left_limit_ext(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.left_limit(x)
        }
    }

    /// Slope in force immediately to the right of `x`.
    pub fn slope_at(&self, x: f64) -> f64 {
        assert!(x.is_finite() && x >= 0.0);
        let i = self.segment_index(x);
        if i < self.slopes.len() {
            self.slopes[i]
        } else {
            self.tail_slope
        }
    }

    /// Largest slope on segments meeting `[0, upto)`, including the tail when
    /// it starts before `upto`.
    pub fn max_slope_on(&self, upto: f64) -> f64 {
        assert!(upto > 0.0);
        let mut m: f64 = 0.0;
        for i in 0..self.slopes.len() {
            if self.knots[i] < upto {
                m = m.max(self.slopes[i]);
            }
        }
        if *self.knots.last().unwrap() < upto {
            m = m.max(self.tail_slope);
        }
        m
    }

    /// `inf { y ≥ 0 : f(y) > z }`, the right-continuous generalized inverse.
    /// Errors when the level is never exceeded (flat tail at or below `z`).
    pub fn right_inverse_at(&self, z: f64) -> Result<f64, MonotoneError> {
        assert!(z.is_finite() && z >= 0.0, "inverse level must be finite and nonnegative");
        let n = self.knots.len();
        for i in 0..n {
            if self.values[i] > z {
                return Ok(self.knots[i]);
            }
            let slope = if i < self.slopes.len() { self.slopes[i] } else { self.tail_slope };
            if slope > 0.0 {
                let cross = self.knots[i] + (z - self.values[i]) / slope;
                if i + 1 < n {
                    if cross < self.knots[i + 1] {
                        return Ok(cross);
                    }
                } else {
                    return Ok(cross);
                }
            }
        }
        Err(MonotoneError::InverseUnbounded { level: z })
    }

    /// The graph of the function as a vertex path, including jump verticals:
    /// starts at `(0, 0)` (the left-limit convention at the origin) and ends
    /// at the last knot's `(knot, value)`.
    fn vertex_path(&self) -> Vec<(f64, f64)> {
        let mut path = vec![(0.0, 0.0)];
        if self.values[0] > 0.0 {
            path.push((0.0, self.values[0]));
        }
        for i in 0..self.slopes.len() {
            let left_limit =
                self.values[i] + self.slopes[i] * (self.knots[i + 1] - self.knots[i]);
            path.push((self.knots[i + 1], left_limit));
            if self.values[i + 1] > left_limit {
                path.push((self.knots[i + 1], self.values[i + 1]));
            }
        }
        path
    }

    /// The whole inverse as a function in the same class. Requires a growing
    /// tail; flats invert to jumps and jumps invert to flats.
    pub fn right_inverse_fn(&self) -> Result<Self, MonotoneError> {
        if self.tail_slope <= 0.0 {
            return Err(MonotoneError::InverseUnbounded { level: *self.values.last().unwrap() });
        }
        let path = self.vertex_path();
        // Swap axes: a graph vertex (y, z) becomes (z, y). A run of equal z
        // values (a flat of the original) becomes a jump of the inverse: the
        // run's smallest y is the left limit, its largest y the value.
        let mut runs: Vec<(f64, f64, f64)> = Vec::with_capacity(path.len());
        for &(y, z) in &path {
            match runs.last_mut() {
                Some((rz, _, max_y)) if *rz == z => *max_y = max_y.max(y),
                _ => runs.push((z, y, y)),
            }
        }
        let mut knots = Vec::with_capacity(runs.len());
        let mut values = Vec::with_capacity(runs.len());
        let mut slopes = Vec::with_capacity(runs.len());
        for j in 0..runs.len() {
            let (z, _, max_y) = runs[j];
            knots.push(z);
            values.push(max_y);
            if j + 1 < runs.len() {
                let (z2, min_y2, _) = runs[j + 1];
                slopes.push((min_y2 - max_y) / (z2 - z));
            }
        }
        MonotoneFn::new(knots, values, slopes, 1.0 / self.tail_slope)
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    ///
    /// Breakpoint candidates are `inner`'s own knots plus the preimages under
    /// `inner` of `self`'s knots; between consecutive candidates both pieces
    /// are linear, so sampling values at candidates and slopes at midpoints
    /// reproduces the composition exactly.
    pub fn compose(&self, inner: &MonotoneFn) -> MonotoneFn {
        // Knot candidates: inner's own knots plus the preimages of the outer
        // knots. A preimage x of an outer knot q satisfies inner(x) ≥ q by
        // right-continuity, but the float round-trip inner.eval(x) can land a
        // hair below q and read the outer value from before a jump at q; carry
        // q alongside the candidate and clamp the landing level to it.
        let mut cands: Vec<(f64, f64)> =
            Vec::with_capacity(inner.knots.len() + self.knots.len() + 1);
        cands.push((0.0, 0.0));
        for &x in &inner.knots {
            cands.push((x, 0.0));
        }
        for &q in &self.knots {
            if let Ok(x) = inner.right_inverse_at(q) {
                cands.push((x, q));
            }
        }
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut knots: Vec<f64> = Vec::with_capacity(cands.len());
        let mut floors: Vec<f64> = Vec::with_capacity(cands.len());
        for (x, q) in cands {
            match knots.last() {
                Some(&last) if last == x => {
                    let f = floors.last_mut().unwrap();
                    *f = f.max(q);
                }
                _ => {
                    knots.push(x);
                    floors.push(q);
                }
            }
        }
        let n = knots.len();
        let mut values = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n - 1);
        for j in 0..n {
            values.push(self.eval(inner.eval(knots[j]).max(floors[j])));
            if j + 1 < n {
                let mid = 0.5 * (knots[j] + knots[j + 1]);
                slopes.push(inner.slope_at(mid) * self.slope_at(inner.eval(mid)));
            }
        }
        let probe = knots[n - 1] + 1.0;
        let tail = inner.slope_at(probe) * self.slope_at(inner.eval(probe));
        MonotoneFn::new(knots, values, slopes, tail)
            .expect("composition of monotone functions is monotone")
    }

    /// Locations where the function jumps; includes 0 when the value at the
    /// origin is positive (the left limit there is 0 by convention).
    pub fn jump_set(&self) -> Vec<f64> {
        let mut jumps = Vec::new();
        if self.values[0] > 0.0 {
            jumps.push(0.0);
        }
        for i in 0..self.slopes.len() {
            let left_limit =
                self.values[i] + self.slopes[i] * (self.knots[i + 1] - self.knots[i]);
            if self.values[i + 1] > left_limit {
                jumps.push(self.knots[i + 1]);
            }
        }
        jumps
    }

    /// Values taken on nondegenerate flat pieces (slope-zero segments and a
    /// flat tail), deduplicated.
    pub fn flat_image_set(&self) -> Vec<f64> {
        let mut flats = Vec::new();
        for i in 0..self.slopes.len() {
            if self.slopes[i] == 0.0 {
                flats.push(self.values[i]);
            }
        }
        if self.tail_slope == 0.0 {
            flats.push(*self.values.last().unwrap());
        }
        flats.dedup();
        flats
    }

    /// Pointwise minimum with the constant `cap`: the function runs unchanged
    /// until it first exceeds `cap`, then stays at `cap` forever.
    pub fn truncate_min(&self, cap: f64) -> MonotoneFn {
        assert!(cap.is_finite() && cap >= 0.0);
        let cross = match self.right_inverse_at(cap) {
            Ok(c) => c,
            Err(_) => return self.clone(), // never exceeds the cap
        };
        let mut knots = vec![];
        let mut values = vec![];
        let mut slopes = vec![];
        for i in 0..self.knots.len() {
            if self.knots[i] >= cross {
                break;
            }
            knots.push(self.knots[i]);
            values.push(self.values[i].min(cap));
            if i < self.slopes.len() && self.knots[i + 1] < cross {
                slopes.push(self.slopes[i]);
            }
        }
        if knots.is_empty() {
            // cross == 0: the value at the origin already exceeds the cap.
            return MonotoneFn::constant(cap);
        }
        if *knots.last().unwrap() < cross {
            slopes.push(self.slope_at(*knots.last().unwrap()));
            knots.push(cross);
            values.push(cap);
        }
        MonotoneFn::new(knots, values, slopes, 0.0).expect("truncation preserves monotonicity")
    }

    /// Serialize to the plain-text record format (17 significant digits per
    /// number; parses back to an identical value).
    pub fn to_record(&self) -> String {
        use crate::numeric::fmt_g17;
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "monotone-fn v1").unwrap();
        writeln!(out, "tail_slope {}", fmt_g17(self.tail_slope)).unwrap();
        writeln!(out, "knots {}", self.knots.len()).unwrap();
        for i in 0..self.knots.len() {
            if i < self.slopes.len() {
                writeln!(
                    out,
                    "{} {} {}",
                    fmt_g17(self.knots[i]),
                    fmt_g17(self.values[i]),
                    fmt_g17(self.slopes[i])
                )
                .unwrap();
            } else {
                writeln!(out, "{} {}", fmt_g17(self.knots[i]), fmt_g17(self.values[i])).unwrap();
            }
        }
        out
    }

    /// Parse the record format produced by [`MonotoneFn::to_record`].
    pub fn from_record(text: &str) -> Result<Self, MonotoneError> {
        fn field(line: usize, s: Option<&str>) -> Result<f64, MonotoneError> {
            let s = s.ok_or(MonotoneError::Parse { line, reason: "missing field".into() })?;
            s.parse::<f64>()
                .map_err(|e| MonotoneError::Parse { line, reason: format!("bad float {s:?}: {e}") })
        }
        let mut lines = text.lines().enumerate();
        let (ln, header) = lines
            .next()
            .ok_or(MonotoneError::Parse { line: 1, reason: "empty record".into() })?;
        if header.trim() != "monotone-fn v1" {
            return Err(MonotoneError::Parse { line: ln + 1, reason: "bad header".into() });
        }
        let (ln, tail_line) = lines
            .next()
            .ok_or(MonotoneError::Parse { line: 2, reason: "missing tail_slope".into() })?;
        let mut it = tail_line.split_whitespace();
        if it.next() != Some("tail_slope") {
            return Err(MonotoneError::Parse { line: ln + 1, reason: "expected tail_slope".into() });
        }
        let tail_slope = field(ln + 1, it.next())?;
        let (ln, count_line) = lines
            .next()
            .ok_or(MonotoneError::Parse { line: 3, reason: "missing knot count".into() })?;
        let mut it = count_line.split_whitespace();
        if it.next() != Some("knots") {
            return Err(MonotoneError::Parse { line: ln + 1, reason: "expected knots".into() });
        }
        let n: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(MonotoneError::Parse { line: ln + 1, reason: "bad knot count".into() })?;
        let mut knots = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let (ln, line) = lines.next().ok_or(MonotoneError::Parse {
                line: 4 + i,
                reason: "truncated record".into(),
            })?;
            let mut it = line.split_whitespace();
            knots.push(field(ln + 1, it.next())?);
            values.push(field(ln + 1, it.next())?);
            if i + 1 < n {
                slopes.push(field(ln + 1, it.next())?);
            }
        }
        MonotoneFn::new(knots, values, slopes, tail_slope)
    }
}

/// `sup_{x ∈ [0, cap]} |a(x) − b(x)|`, including approach to jumps from the
/// left (the supremum over the closed interval of the right-continuous
/// difference and its left limits).
pub fn sup_metric(a: &MonotoneFn, b: &MonotoneFn, cap: f64) -> f64 {
    assert!(cap > 0.0 && cap.is_finite(), "sup metric needs a positive finite window");
    let mut pts: Vec<f64> = vec![0.0, cap];
    pts.extend(a.knots.iter().copied().filter(|&k| k <= cap));
    pts.extend(b.knots.iter().copied().filter(|&k| k <= cap));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let mut m: f64 = 0.0;
    for &x in &pts {
        m = m.max((a.eval(x) - b.eval(x)).abs());
        m = m.max((a.left_limit(x) - b.left_limit(x)).abs());
    }
    m
}

/// Lévy-type distance on `[0, cap]`:
/// `inf { ε > 0 : a(x−ε) − ε < b(x) and b(x−ε) − ε < a(x) for all x ∈ [0, cap] }`,
/// with both functions read as 0 on `(−∞, 0)`. Computed by bisection (the
/// feasible set is an interval) to width [`LEVY_BISECT_TOL`]; the returned
/// value is always feasible, so it is an upper bound on the infimum.
pub fn levy_metric(a: &MonotoneFn, b: &MonotoneFn, cap: f64) -> f64 {
    assert!(cap > 0.0 && cap.is_finite(), "Lévy metric needs a positive finite window");
    let mut hi = sup_metric(a, b, cap) + 1.0;
    debug_assert!(levy_feasible(a, b, cap, hi));
    let mut lo = 0.0;
    while hi - lo > LEVY_BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        if levy_feasible(a, b, cap, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Exact strict-feasibility test for the Lévy condition at a given ε.
fn levy_feasible(a: &MonotoneFn, b: &MonotoneFn, cap: f64, eps: f64) -> bool {
    levy_feasible_one_sided(a, b, cap, eps) && levy_feasible_one_sided(b, a, cap, eps)
}

/// Checks `f(x−ε) − ε < g(x)` for all `x ∈ [0, cap]`. The difference
/// `h(x) = f(x−ε) − ε − g(x)` is piecewise linear between the breakpoints
/// `{f-knots + ε} ∪ {g-knots} ∪ {0, cap}`; on each piece `[c, d)` strict
/// negativity is equivalent to `h(c) < 0` together with `h(d−) ≤ 0`, and the
/// right endpoint `cap` needs `h(cap) < 0` itself.
///
/// Each candidate carries the argument at which `f` is read alongside the
/// point `x` itself: recomputing it as `x − ε` after rounding `x = k + ε`
/// can land one ulp on the wrong side of the knot `k`, reading the wrong
/// branch of a jump of `f` and breaking monotonicity of feasibility in `ε`.
fn levy_feasible_one_sided(f: &MonotoneFn, g: &MonotoneFn, cap: f64, eps: f64) -> bool {
    let mut pts: Vec<(f64, f64)> = vec![(0.0, -eps), (cap, cap - eps)];
    pts.extend(f.knots.iter().map(|&k| (k + eps, k)).filter(|&(x, _)| x > 0.0 && x < cap));
    pts.extend(g.knots.iter().map(|&k| (k, k - eps)).filter(|&(x, _)| x > 0.0 && x < cap));
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.dedup();
    let h_right = |p: (f64, f64)| f.eval_ext(p.1) - eps - g.eval(p.0);
    let h_left = |p: (f64, f64)| f.left_limit_ext(p.1) - eps - g.left_limit(p.0);
    for w in pts.windows(2) {
        if h_right(w[0]) >= 0.0 || h_left(w[1]) > 0.0 {
            return false;
        }
    }
    h_right((cap, cap - eps)) < 0.0
}

/// The flat/jump compatibility condition for composing two maps: no value on
/// a nondegenerate flat of `first` may be a jump location of `second` (values
/// are compared exactly). When it holds, `(second ∘ first)⁻¹ = first⁻¹ ∘
/// second⁻¹` without right-continuity corrections.
pub fn rd_condition(first: &MonotoneFn, second: &MonotoneFn) -> bool {
    let flats = first.flat_image_set();
    if flats.is_empty() {
        return true;
    }
    let jumps = second.jump_set();
    !flats.iter().any(|r| jumps.iter().any(|d| r == d))
}

/// Tally for one invariant exercised by [`inversion_property_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub trials: u64,
    pub failures: u64,
}

/// Outcome of the randomized inversion/composition invariant suite.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySuiteReport {
    pub pairs: u64,
    pub checks: Vec<PropertyCheck>,
}

impl PropertySuiteReport {
    pub fn failures(&self) -> u64 {
        self.checks.iter().map(|c| c.failures).sum()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }
}

/// Deterministic word stream for the property suite: a pure function of
/// (seed, pair index, role, slot), so reruns agree regardless of iteration
/// order or batching.
fn suite_word(seed: u64, pair: u64, role: u64, slot: u64) -> u64 {
    use crate::numeric::{splitmix64, stable_hash64};
    splitmix64(stable_hash64(&[
        b"monotone-props",
        &seed.to_le_bytes(),
        &pair.to_le_bytes(),
        &role.to_le_bytes(),
        &slot.to_le_bytes(),
    ]))
}

/// Random piecewise-linear function with dyadic knots and values (multiples
/// of 1/64) and power-of-two slopes, so evaluation, inversion and composition
/// are exact in f64. Zero-slope segments and jumps appear with high weight —
/// flats and jumps are where inversion identities earn their keep. The tail
/// slope is always positive, keeping right inverses total.
fn random_dyadic_fn(seed: u64, pair: u64, role: u64) -> MonotoneFn {
    const SLOPES: [f64; 8] = [0.0, 0.0, 0.25, 0.5, 1.0, 1.0, 2.0, 4.0];
    const JUMPS: [f64; 8] = [0.0, 0.0, 0.0, 0.0, 0.125, 0.25, 0.5, 1.0];
    const TAILS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
    let segs = 1 + (suite_word(seed, pair, role, 0) % 6) as usize;
    let mut knots = Vec::with_capacity(segs + 1);
    let mut values = Vec::with_capacity(segs + 1);
    let mut slopes = Vec::with_capacity(segs);
    knots.push(0.0);
    values.push(JUMPS[(suite_word(seed, pair, role, 1) % 8) as usize]);
    for j in 0..segs {
        let gap = (1 + suite_word(seed, pair, role, 10 + j as u64) % 64) as f64 / 64.0;
        let slope = SLOPES[(suite_word(seed, pair, role, 100 + j as u64) % 8) as usize];
        let jump = JUMPS[(suite_word(seed, pair, role, 200 + j as u64) % 8) as usize];
        knots.push(knots[j] + gap);
        values.push(values[j] + slope * gap + jump);
        slopes.push(slope);
    }
    let tail = TAILS[(suite_word(seed, pair, role, 2) % 4) as usize];
    MonotoneFn::new(knots, values, slopes, tail).expect("generator emits monotone data")
}

/// Randomized suite over the inversion and composition invariants that the
/// dual-flow construction leans on. For each of `pairs` generated pairs
/// (φ, ψ) and a spread of levels z (random levels plus every knot value of
/// both functions, which is where flats and jumps sit) it checks:
///
/// - `inverse-escape`: φ(φ⁻¹(z) + ε) > z for ε ∈ {1/64, 1};
/// - `compose-inverse-bound`: (φ∘ψ)⁻¹(z) ≤ ψ⁻¹(φ⁻¹(z));
/// - `sandwich`: φ⁻¹(z) ≤ ψ((φ∘ψ)⁻¹(z)) ≤ ψ(ψ⁻¹(φ⁻¹(z)));
/// - `sandwich-left-limit`: ψ(ψ⁻¹(φ⁻¹(z))−) ≤ φ⁻¹(z);
/// - `continuity-equality`: equality in `compose-inverse-bound` whenever φ is
///   left-continuous at φ⁻¹(z);
/// - `switch-le` / `switch-gt`: φ⁻¹(y) ≤ x ⟹ φ(x) ≥ y, and
///   φ(x) > y ⟹ φ⁻¹(y) ≤ x, at random (x, y).
///
/// The generated data is dyadic so every identity holds exactly; `tol` only
/// absorbs platform-float differences. Inequalities `a ≤ b` are counted as
/// failures when `a > b + tol`, strict ones `a > b` when `a ≤ b − tol`.
pub fn inversion_property_suite(pairs: u64, seed: u64, tol: f64) -> PropertySuiteReport {
    assert!(tol >= 0.0 && tol.is_finite());
    let mut checks = [
        PropertyCheck { name: "inverse-escape", trials: 0, failures: 0 },
        PropertyCheck { name: "compose-inverse-bound", trials: 0, failures: 0 },
        PropertyCheck { name: "sandwich", trials: 0, failures: 0 },
        PropertyCheck { name: "sandwich-left-limit", trials: 0, failures: 0 },
        PropertyCheck { name: "continuity-equality", trials: 0, failures: 0 },
        PropertyCheck { name: "switch-le", trials: 0, failures: 0 },
        PropertyCheck { name: "switch-gt", trials: 0, failures: 0 },
    ];
    let mut tally = |idx: usize, ok: bool| {
        checks[idx].trials += 1;
        if !ok {
            checks[idx].failures += 1;
        }
    };
    for pair in 0..pairs {
        let phi = random_dyadic_fn(seed, pair, 0);
        let psi = random_dyadic_fn(seed, pair, 1);
        let comp = phi.compose(&psi);

        let mut levels: Vec<f64> = vec![0.0];
        for slot in 0..4 {
            levels.push((suite_word(seed, pair, 2, slot) % 513) as f64 / 64.0);
        }
        levels.extend(phi.values().iter().copied());
        levels.extend(psi.values().iter().map(|&v| phi.eval(v)));

        for &z in &levels {
            let phi_inv = phi.right_inverse_at(z).expect("positive tail slope");
            let comp_inv = comp.right_inverse_at(z).expect("positive tail slope");
            let chain_inv = psi.right_inverse_at(phi_inv).expect("positive tail slope");

            tally(0, phi.eval(phi_inv + 1.0 / 64.0) > z - tol && phi.eval(phi_inv + 1.0) > z - tol);
            tally(1, comp_inv <= chain_inv + tol);
            let mid = psi.eval(comp_inv);
            tally(2, phi_inv <= mid + tol && mid <= psi.eval(chain_inv) + tol);
            tally(3, psi.left_limit(chain_inv) <= phi_inv + tol);
            if phi.left_limit(phi_inv) == phi.eval(phi_inv) {
                tally(4, (comp_inv - chain_inv).abs() <= tol);
            }
        }

        for slot in 0..4 {
            let x = (suite_word(seed, pair, 3, slot) % 513) as f64 / 64.0;
            let y = (suite_word(seed, pair, 4, slot) % 513) as f64 / 64.0;
            let inv = phi.right_inverse_at(y).expect("positive tail slope");
            tally(5, !(inv <= x) || phi.eval(x) >= y - tol);
            tally(6, !(phi.eval(x) > y) || inv <= x + tol);
        }
    }
    PropertySuiteReport { pairs, checks: checks.to_vec() }
}
