//! Product domains `M = M_1 × … × M_L` built from component grids, and the
//! discretized adjustment family of ball products.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{DistanceMatrix, TriangulatedManifold};

/// Default cap on the total number of (ball, grid point) memberships of an
/// adjustment family.
pub const DEFAULT_MEMBERSHIP_LIMIT: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentKind {
    Mesh,
    Circle { circumference: f64 },
    Interval { start: f64, end: f64 },
}

/// A radius cap: a positive number or unbounded. Serialized as a number, or
/// the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusCap(pub f64);

impl RadiusCap {
    pub const UNBOUNDED: RadiusCap = RadiusCap(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for RadiusCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for RadiusCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let value = if matches!(t, "inf" | "infinity" | "Inf") {
            f64::INFINITY
        } else {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("invalid radius cap `{t}`")))?
        };
        check_cap(value)?;
        Ok(RadiusCap(value))
    }
}

impl Serialize for RadiusCap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for RadiusCap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let value = match Repr::deserialize(d)? {
            Repr::Number(v) => v,
            Repr::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Inf") => f64::INFINITY,
            Repr::Text(t) => t
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid radius cap `{t}`")))?,
        };
        if value > 0.0 {
            Ok(RadiusCap(value))
        } else {
            Err(serde::de::Error::custom(format!("radius cap must be positive, got {value}")))
        }
    }
}

/// One factor `M_l` of the product domain, discretized.
#[derive(Debug, Clone)]
pub struct ComponentGrid {
    kind: ComponentKind,
    weights: Vec<f64>,
    distances: DistanceMatrix,
    coordinates: Vec<Vec<f64>>,
    radius_cap: f64,
}

fn check_cap(cap: f64) -> Result<()> {
    if cap > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("radius cap must be positive, got {cap}")))
    }
}

impl ComponentGrid {
    /// Mesh component; the manifold must already carry weights and distances.
    pub fn from_mesh(mesh: &TriangulatedManifold, radius_cap: f64) -> Result<Self> {
        check_cap(radius_cap)?;
        let weights = mesh.weights()?.to_vec();
        if let Some(v) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidMesh(format!(
                "vertex {v} has non-positive quadrature weight (isolated vertex?)"
            )));
        }
        let coordinates = match mesh.positions() {
            Some(p) => p.iter().map(|x| x.to_vec()).collect(),
            None => (0..mesh.n_vertices()).map(|_| Vec::new()).collect(),
        };
        Ok(Self {
            kind: ComponentKind::Mesh,
            weights,
            distances: mesh.distances()?.clone(),
            coordinates,
            radius_cap,
        })
    }

    /// `n` equally spaced points on a circle of the given circumference,
    /// with arc-length distance.
    pub fn circle(n: usize, circumference: f64, radius_cap: f64) -> Result<Self> {
        check_cap(radius_cap)?;
        if n == 0 || !(circumference > 0.0 && circumference.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "circle grid needs n >= 1 and a positive circumference (got n={n}, circumference={circumference})"
            )));
        }
        let h = circumference / n as f64;
        let distances = DistanceMatrix::from_fn(n, |i, j| {
            let k = i.abs_diff(j);
            k.min(n - k) as f64 * h
        });
        Ok(Self {
            kind: ComponentKind::Circle { circumference },
            weights: vec![h; n],
            distances,
            coordinates: (0..n).map(|i| vec![i as f64 * h]).collect(),
            radius_cap,
        })
    }

    /// `n >= 2` equally spaced points on `[start, end]` with trapezoid weights.
    pub fn interval(n: usize, start: f64, end: f64, radius_cap: f64) -> Result<Self> {
        check_cap(radius_cap)?;
        if n < 2 || !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "interval grid needs n >= 2 and start < end (got n={n}, [{start}, {end}])"
            )));
        }
        let h = (end - start) / (n - 1) as f64;
        let mut weights = vec![h; n];
        weights[0] = h / 2.0;
        weights[n - 1] = h / 2.0;
        let distances = DistanceMatrix::from_fn(n, |i, j| i.abs_diff(j) as f64 * h);
        Ok(Self {
            kind: ComponentKind::Interval { start, end },
            weights,
            distances,
            coordinates: (0..n).map(|i| vec![start + i as f64 * h]).collect(),
            radius_cap,
        })
    }

    pub fn with_radius_cap(mut self, radius_cap: f64) -> Result<Self> {
        check_cap(radius_cap)?;
        self.radius_cap = radius_cap;
        Ok(self)
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// Embedding coordinates (mesh), or the arc/axis position (circle, interval).
    pub fn coordinates(&self, point: usize) -> &[f64] {
        &self.coordinates[point]
    }

    pub fn radius_cap(&self) -> f64 {
        self.radius_cap
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn spacing(&self) -> f64 {
        match self.kind {
            ComponentKind::Mesh => f64::NAN,
            ComponentKind::Circle { circumference } => circumference / self.len() as f64,
            ComponentKind::Interval { start, end } => (end - start) / (self.len() - 1) as f64,
        }
    }

    /// Distance from an arbitrary center to a grid point.
    fn distance_from(&self, center: BallCenter, point: usize) -> Result<f64> {
        match (self.kind, center) {
            (_, BallCenter::Point(c)) => {
                if c >= self.len() {
                    return Err(Error::VertexOutOfRange {
                        index: c,
                        len: self.len(),
                    });
                }
                Ok(self.distances.get(c, point))
            }
            (ComponentKind::Mesh, BallCenter::Position(_)) => Err(Error::InvalidArgument(
                "mesh balls are centered at vertices".into(),
            )),
            (ComponentKind::Circle { circumference }, BallCenter::Position(x)) => {
                let delta = (x - self.coordinates[point][0]).rem_euclid(circumference);
                Ok(delta.min(circumference - delta))
            }
            (ComponentKind::Interval { .. }, BallCenter::Position(x)) => {
                Ok((x - self.coordinates[point][0]).abs())
            }
        }
    }

    /// Grid points strictly inside `B(center, r)`, in increasing order.
    pub fn ball(&self, center: BallCenter, r: f64) -> Result<Vec<usize>> {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {r}")));
        }
        let mut out = Vec::new();
        for p in 0..self.len() {
            if self.distance_from(center, p)? < r {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Where a component ball is centered: at a grid point, or (circle and
/// interval components) at an arbitrary position along the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BallCenter {
    Point(usize),
    Position(f64),
}

impl fmt::Display for BallCenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BallCenter::Point(p) => write!(f, "v{p}"),
            BallCenter::Position(x) => write!(f, "{x}"),
        }
    }
}

/// One ball of a component family. Its support is the first `len` points of
/// chain `chain`; any radius in `(min_radius, radius]` realizes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentBall {
    pub chain: usize,
    pub len: usize,
    pub center: BallCenter,
    pub radius: f64,
    pub min_radius: f64,
}

/// Distinct ball supports of one component under its radius cap.
///
/// Supports are stored as prefixes of point orderings ("chains"): all balls
/// sharing a center in a mesh, or sharing a left end on a circle or interval,
/// are nested and share one chain. Balls are ordered by chain, then length.
#[derive(Debug, Clone)]
pub struct ComponentFamily {
    chains: Vec<Vec<usize>>,
    balls: Vec<ComponentBall>,
}

impl ComponentFamily {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn balls(&self) -> &[ComponentBall] {
        &self.balls
    }

    pub fn chains(&self) -> &[Vec<usize>] {
        &self.chains
    }

    /// Support of ball `b` in chain order.
    pub fn support(&self, b: usize) -> &[usize] {
        let ball = &self.balls[b];
        &self.chains[ball.chain][..ball.len]
    }

    pub fn sorted_support(&self, b: usize) -> Vec<usize> {
        let mut s = self.support(b).to_vec();
        s.sort_unstable();
        s
    }

    pub fn memberships(&self) -> usize {
        self.balls.iter().map(|b| b.len).sum()
    }
}

struct Dedup {
    seen: HashMap<u64, Vec<Vec<usize>>>,
}

impl Dedup {
    fn new() -> Self {
        Self {
            seen: HashMap::new(),
        }
    }

    /// Returns true when `support` was not seen before.
    fn insert(&mut self, support: &[usize]) -> bool {
        let mut sorted = support.to_vec();
        sorted.sort_unstable();
        let mut hasher = DefaultHasher::new();
        sorted.hash(&mut hasher);
        let bucket = self.seen.entry(hasher.finish()).or_default();
        if bucket.contains(&sorted) {
            false
        } else {
            bucket.push(sorted);
            true
        }
    }
}

/// Enumerates every distinct support `{p : d(center, p) < ε}` with
/// `ε <= radius_cap`.
///
/// Mesh components use vertex centers with radii swept over the sorted distinct
/// distances from the center. Circle and interval components allow any center
/// on the axis, which makes the family exactly the contiguous runs of points
/// whose half-span lies strictly below the cap. Singletons are always present.
pub fn enumerate_component_balls(grid: &ComponentGrid) -> ComponentFamily {
    let cap = grid.radius_cap;
    let n = grid.len();
    let mut chains = Vec::new();
    let mut balls = Vec::new();
    let mut dedup = Dedup::new();

    match grid.kind {
        ComponentKind::Mesh => {
            for center in 0..n {
                let row = grid.distances.row(center);
                let mut order: Vec<usize> = (0..n).filter(|&p| row[p].is_finite()).collect();
                order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                let chain = chains.len();
                let mut used = 0;
                let mut start = 0;
                while start < order.len() {
                    let level = row[order[start]];
                    if !(level < cap) {
                        break;
                    }
                    let mut end = start + 1;
                    while end < order.len() && row[order[end]] == level {
                        end += 1;
                    }
                    let next = order.get(end).map_or(f64::INFINITY, |&p| row[p]);
                    if dedup.insert(&order[..end]) {
                        balls.push(ComponentBall {
                            chain,
                            len: end,
                            center: BallCenter::Point(center),
                            radius: next.min(cap),
                            min_radius: level,
                        });
                        used = end;
                    }
                    start = end;
                }
                if used > 0 {
                    order.truncate(used);
                    chains.push(order);
                }
            }
        }
        ComponentKind::Circle { circumference } => {
            let h = grid.spacing();
            for first in 0..n {
                let chain = chains.len();
                let order: Vec<usize> = (0..n).map(|k| (first + k) % n).collect();
                let max_len = if first == 0 { n } else { n - 1 };
                let mut used = 0;
                for len in 1..=max_len.max(1) {
                    let half_span = (len - 1) as f64 * h / 2.0;
                    if !(half_span < cap) {
                        break;
                    }
                    if !dedup.insert(&order[..len]) {
                        continue;
                    }
                    let center = ((first as f64 + (len - 1) as f64 / 2.0) * h).rem_euclid(circumference);
                    let radius = if len == n { cap } else { (len as f64 * h / 2.0).min(cap) };
                    balls.push(ComponentBall {
                        chain,
                        len,
                        center: BallCenter::Position(center),
                        radius,
                        min_radius: half_span,
                    });
                    used = len;
                }
                if used > 0 {
                    let mut order = order;
                    order.truncate(used);
                    chains.push(order);
                }
            }
        }
        ComponentKind::Interval { start: a, .. } => {
            let h = grid.spacing();
            for first in 0..n {
                let chain = chains.len();
                let mut used = 0;
                for len in 1..=n - first {
                    let half_span = (len - 1) as f64 * h / 2.0;
                    if !(half_span < cap) {
                        break;
                    }
                    let support: Vec<usize> = (first..first + len).collect();
                    if !dedup.insert(&support) {
                        continue;
                    }
                    let center = a + (first as f64 + (len - 1) as f64 / 2.0) * h;
                    let radius = if len == n { cap } else { (len as f64 * h / 2.0).min(cap) };
                    balls.push(ComponentBall {
                        chain,
                        len,
                        center: BallCenter::Position(center),
                        radius,
                        min_radius: half_span,
                    });
                    used = len;
                }
                if used > 0 {
                    chains.push((first..first + used).collect());
                }
            }
        }
    }
    ComponentFamily { chains, balls }
}

/// `M = M_1 × … × M_L`, with grid points indexed row-major (last component
/// varies fastest).
#[derive(Debug, Clone)]
pub struct ProductDomain {
    components: Vec<ComponentGrid>,
    strides: Vec<usize>,
    len: usize,
}

impl ProductDomain {
    pub fn new(components: Vec<ComponentGrid>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("product domain needs at least one component".into()));
        }
        let mut strides = vec![1; components.len()];
        for l in (0..components.len() - 1).rev() {
            strides[l] = strides[l + 1] * components[l + 1].len();
        }
        let len = strides[0] * components[0].len();
        Ok(Self {
            components,
            strides,
            len,
        })
    }

    pub fn components(&self) -> &[ComponentGrid] {
        &self.components
    }

    /// Number of product grid points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, parts: &[usize]) -> usize {
        parts.iter().zip(&self.strides).map(|(p, s)| p * s).sum()
    }

    pub fn parts(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let p = index / s;
                index %= s;
                p
            })
            .collect()
    }

    /// Product of the component weights, multiplied left to right.
    pub fn point_weight(&self, index: usize) -> f64 {
        self.parts(index)
            .iter()
            .zip(&self.components)
            .map(|(&p, c)| c.weights[p])
            .product()
    }

    pub fn point_weights(&self) -> Vec<f64> {
        (0..self.len).map(|g| self.point_weight(g)).collect()
    }

    pub fn total_measure(&self) -> f64 {
        self.components.iter().map(ComponentGrid::total_measure).product()
    }

    pub fn radius_caps(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.radius_cap).collect()
    }

    /// Same grids with new radius caps.
    pub fn with_radius_caps(&self, caps: &[f64]) -> Result<Self> {
        if caps.len() != self.components.len() {
            return Err(Error::Dimension(format!(
                "{} caps for {} components",
                caps.len(),
                self.components.len()
            )));
        }
        let components = self
            .components
            .iter()
            .zip(caps)
            .map(|(c, &cap)| c.clone().with_radius_cap(cap))
            .collect::<Result<_>>()?;
        Self::new(components)
    }
}

/// A materialized ball product `I = B(x_1, ε_1) × … × B(x_L, ε_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentBall {
    pub centers: Vec<BallCenter>,
    pub radii: Vec<f64>,
    /// Product grid indices, increasing.
    pub support: Vec<usize>,
    /// Product weight of each support point.
    pub weights: Vec<f64>,
}

/// Sum of product weights over the ball's support.
pub fn ball_weight(ball: &AdjustmentBall) -> f64 {
    ball.weights.iter().sum()
}

/// The adjustment family: every product of component ball supports.
///
/// Member `i` corresponds to the multi-index of component balls in row-major
/// order (last component fastest).
#[derive(Debug, Clone)]
pub struct AdjustmentFamily {
    components: Vec<ComponentFamily>,
    strides: Vec<usize>,
    len: usize,
}

/// Enumerates the family with the default membership limit.
pub fn enumerate_family(domain: &ProductDomain) -> Result<AdjustmentFamily> {
    enumerate_family_with_limit(domain, DEFAULT_MEMBERSHIP_LIMIT)
}

pub fn enumerate_family_with_limit(domain: &ProductDomain, limit: usize) -> Result<AdjustmentFamily> {
    let components: Vec<ComponentFamily> =
        domain.components.iter().map(enumerate_component_balls).collect();
    let memberships = components
        .iter()
        .try_fold(1usize, |acc, f| acc.checked_mul(f.memberships()))
        .unwrap_or(usize::MAX);
    if memberships > limit {
        return Err(Error::FamilyTooLarge { memberships, limit });
    }
    let mut strides = vec![1; components.len()];
    for l in (0..components.len().saturating_sub(1)).rev() {
        strides[l] = strides[l + 1] * components[l + 1].len();
    }
    let len = strides[0] * components[0].len();
    Ok(AdjustmentFamily {
        components,
        strides,
        len,
    })
}

impl AdjustmentFamily {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn components(&self) -> &[ComponentFamily] {
        &self.components
    }

    /// Component ball indices of member `i`.
    pub fn parts(&self, mut i: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let p = i / s;
                i %= s;
                p
            })
            .collect()
    }

    pub fn member_index(&self, parts: &[usize]) -> usize {
        parts.iter().zip(&self.strides).map(|(p, s)| p * s).sum()
    }

    /// Total (member, grid point) memberships.
    pub fn memberships(&self) -> usize {
        self.components.iter().map(ComponentFamily::memberships).product()
    }

    pub fn component_balls(&self, i: usize) -> Vec<ComponentBall> {
        self.parts(i)
            .iter()
            .zip(&self.components)
            .map(|(&b, f)| f.balls[b])
            .collect()
    }

    /// Calls `visit` with every product grid index in member `i`'s support.
    pub fn for_each_point(&self, domain: &ProductDomain, i: usize, mut visit: impl FnMut(usize)) {
        let parts = self.parts(i);
        let supports: Vec<&[usize]> = parts
            .iter()
            .zip(&self.components)
            .map(|(&b, f)| f.support(b))
            .collect();
        let mut cursor = vec![0usize; supports.len()];
        loop {
            let index: usize = cursor
                .iter()
                .zip(&supports)
                .zip(&domain.strides)
                .map(|((&c, s), stride)| s[c] * stride)
                .sum();
            visit(index);
            let mut l = supports.len();
            loop {
                if l == 0 {
                    return;
                }
                l -= 1;
                cursor[l] += 1;
                if cursor[l] < supports[l].len() {
                    break;
                }
                cursor[l] = 0;
            }
        }
    }

    pub fn ball(&self, domain: &ProductDomain, i: usize) -> AdjustmentBall {
        let balls = self.component_balls(i);
        let mut support = Vec::new();
        self.for_each_point(domain, i, |g| support.push(g));
        support.sort_unstable();
        let weights = support.iter().map(|&g| domain.point_weight(g)).collect();
        AdjustmentBall {
            centers: balls.iter().map(|b| b.center).collect(),
            radii: balls.iter().map(|b| b.radius).collect(),
            support,
            weights,
        }
    }

    /// Members still admissible when the component caps are lowered to `caps`.
    pub fn admissible_under(&self, caps: &[f64]) -> Result<Vec<bool>> {
        if caps.len() != self.components.len() {
            return Err(Error::Dimension(format!(
                "{} caps for {} components",
                caps.len(),
                self.components.len()
            )));
        }
        let per_component: Vec<Vec<bool>> = self
            .components
            .iter()
            .zip(caps)
            .map(|(f, &cap)| f.balls.iter().map(|b| b.min_radius < cap).collect())
            .collect();
        Ok((0..self.len)
            .map(|i| {
                self.parts(i)
                    .iter()
                    .zip(&per_component)
                    .all(|(&b, ok)| ok[b])
            })
            .collect())
    }
}
