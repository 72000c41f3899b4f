//! Permutation engine: pointwise and ball-wise p-values, and the adjusted
//! p-value function `p̃(x) = max_{I ∋ x} p^I`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AdjustmentBall, AdjustmentFamily, ProductDomain};
use crate::error::{Error, Result};
use crate::glm::{
    prepare_statistic, DesignSpec, HypothesisSpec, NullModel, PointwiseStatistic, SignalMatrix,
    StatField, StatisticKind,
};

/// Name of the generator behind [`PermutationPlan::permutations`].
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9) + Fisher-Yates shuffle (rand 0.9)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Permute reduced-model residuals and add them back to the reduced fit.
    FreedmanLane,
    /// Permute whole observations (exchangeable two-sample null only).
    RawLabelPermutation,
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Random { count: usize, seed: u64 },
    Explicit(Vec<Vec<usize>>),
}

/// How the null distribution is sampled. Every replicate applies one
/// permutation of the observations to the whole domain.
#[derive(Debug, Clone)]
pub struct PermutationPlan {
    source: Source,
    scheme: Scheme,
    null_model: NullModel,
}

impl PermutationPlan {
    pub fn new(
        permutations: usize,
        seed: u64,
        scheme: Scheme,
        design: &DesignSpec,
        hypothesis: &HypothesisSpec,
    ) -> Result<Self> {
        if permutations == 0 {
            return Err(Error::InvalidArgument("need at least one permutation".into()));
        }
        if scheme == Scheme::RawLabelPermutation && hypothesis.statistic != StatisticKind::TTwoSampleSq {
            return Err(Error::InvalidArgument(
                "raw label permutation is only valid for the two-sample model".into(),
            ));
        }
        Ok(Self {
            source: Source::Random {
                count: permutations,
                seed,
            },
            scheme,
            null_model: NullModel::new(design, hypothesis)?,
        })
    }

    /// Replaces the random draws with a fixed list, e.g. an exhaustive
    /// enumeration of relabelings (the identity should be left out: the
    /// observed statistic is always counted once).
    pub fn with_permutations(mut self, permutations: Vec<Vec<usize>>) -> Result<Self> {
        let n = self.null_model.n_obs();
        if permutations.is_empty() {
            return Err(Error::InvalidArgument("need at least one permutation".into()));
        }
        for p in &permutations {
            let mut seen = vec![false; n];
            if p.len() != n || p.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::InvalidArgument(format!("{p:?} is not a permutation of 0..{n}")));
            }
        }
        self.source = Source::Explicit(permutations);
        Ok(self)
    }

    /// Number of permuted replicates `B`.
    pub fn count(&self) -> usize {
        match &self.source {
            Source::Random { count, .. } => *count,
            Source::Explicit(list) => list.len(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.source {
            Source::Random { seed, .. } => Some(seed),
            Source::Explicit(_) => None,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn n_obs(&self) -> usize {
        self.null_model.n_obs()
    }

    /// The `B` permutations, drawn sequentially from the seeded stream.
    pub fn permutations(&self) -> Vec<Vec<usize>> {
        match &self.source {
            Source::Explicit(list) => list.clone(),
            Source::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let n = self.n_obs();
                (0..*count)
                    .map(|_| {
                        let mut p: Vec<usize> = (0..n).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            }
        }
    }
}

/// Per-column residuals under the reduced model, computed once.
struct Residualized<'a> {
    signals: &'a SignalMatrix,
    residuals: Option<Vec<f64>>,
}

impl<'a> Residualized<'a> {
    fn new(signals: &'a SignalMatrix, plan: &PermutationPlan) -> Result<Self> {
        if signals.n_obs() != plan.n_obs() {
            return Err(Error::Dimension(format!(
                "{} observations but the plan has {}",
                signals.n_obs(),
                plan.n_obs()
            )));
        }
        let residuals = match plan.scheme {
            Scheme::RawLabelPermutation => None,
            Scheme::FreedmanLane => Some(
                signals
                    .columns()
                    .flat_map(|y| plan.null_model.split(y).1)
                    .collect(),
            ),
        };
        Ok(Self { signals, residuals })
    }

    /// Writes column `j` of the permuted signals into `out`.
    ///
    /// Freedman–Lane: `y*_i = fit_i + r_{perm(i)} = y_i - r_i + r_{perm(i)}`,
    /// with rows the permutation fixes copied through unchanged.
    fn permuted_column(&self, j: usize, perm: &[usize], out: &mut [f64]) {
        let y = self.signals.column(j);
        match &self.residuals {
            None => {
                for (o, &src) in out.iter_mut().zip(perm) {
                    *o = y[src];
                }
            }
            Some(all) => {
                let n = y.len();
                let r = &all[j * n..(j + 1) * n];
                for i in 0..n {
                    let src = perm[i];
                    out[i] = if src == i { y[i] } else { (y[i] - r[i]) + r[src] };
                }
            }
        }
    }

    fn permuted(&self, perm: &[usize]) -> Result<SignalMatrix> {
        let (n, m) = (self.signals.n_obs(), self.signals.n_points());
        let mut columns = vec![0.0; n * m];
        for (j, out) in columns.chunks_mut(n).enumerate() {
            self.permuted_column(j, perm, out);
        }
        SignalMatrix::from_columns(n, m, columns)
    }

    fn stat_field(&self, perm: &[usize], statistic: &dyn PointwiseStatistic) -> Result<StatField> {
        let n = self.signals.n_obs();
        let mut buf = vec![0.0; n];
        (0..self.signals.n_points())
            .map(|j| {
                self.permuted_column(j, perm, &mut buf);
                statistic.evaluate(&buf, j)
            })
            .collect::<Result<Vec<_>>>()
            .map(StatField)
    }
}

/// Applies one permutation to the signals under the plan's scheme.
pub fn permute_once(signals: &SignalMatrix, plan: &PermutationPlan, perm: &[usize]) -> Result<SignalMatrix> {
    if perm.len() != signals.n_obs() {
        return Err(Error::Dimension("permutation length differs from N".into()));
    }
    Residualized::new(signals, plan)?.permuted(perm)
}

/// `Σ_{g ∈ I} w(g) T(g)` for one materialized ball.
pub fn integrated_stat(field: &StatField, ball: &AdjustmentBall) -> f64 {
    ball.support
        .iter()
        .zip(&ball.weights)
        .map(|(&g, w)| w * field.0[g])
        .sum()
}

struct ChainPlan {
    order: Vec<usize>,
    /// (prefix length, component ball index), increasing in length.
    emits: Vec<(usize, usize)>,
}

struct ComponentPlan {
    n_points: usize,
    n_balls: usize,
    weights: Vec<f64>,
    chains: Vec<ChainPlan>,
}

/// Evaluates `T^I` for every family member at once.
///
/// Components are integrated out one at a time, last first: within a chain
/// of nested component balls a running sum yields all of them in one pass,
/// so the cost per field is `Σ_l (Π_{j<l} n_j) · (Σ chain lengths of l) ·
/// (Π_{j>l} |family_j|)`.
pub struct FamilyIntegrator {
    components: Vec<ComponentPlan>,
    n_members: usize,
}

impl FamilyIntegrator {
    pub fn new(domain: &ProductDomain, family: &AdjustmentFamily) -> Self {
        let components = domain
            .components()
            .iter()
            .zip(family.components())
            .map(|(grid, fam)| {
                let mut chains: Vec<ChainPlan> = fam
                    .chains()
                    .iter()
                    .map(|order| ChainPlan {
                        order: order.clone(),
                        emits: Vec::new(),
                    })
                    .collect();
                for (b, ball) in fam.balls().iter().enumerate() {
                    chains[ball.chain].emits.push((ball.len, b));
                }
                for c in &mut chains {
                    c.emits.sort_unstable();
                }
                ComponentPlan {
                    n_points: grid.len(),
                    n_balls: fam.len(),
                    weights: grid.weights().to_vec(),
                    chains,
                }
            })
            .collect();
        Self {
            components,
            n_members: family.len(),
        }
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn integrate(&self, field: &[f64]) -> Vec<f64> {
        let mut current = field.to_vec();
        let mut inner = 1usize;
        for (l, comp) in self.components.iter().enumerate().rev() {
            let outer: usize = self.components[..l].iter().map(|c| c.n_points).product();
            let mut out = vec![0.0; outer * comp.n_balls * inner];
            if inner == 1 {
                for o in 0..outer {
                    let src = &current[o * comp.n_points..(o + 1) * comp.n_points];
                    let dst = &mut out[o * comp.n_balls..(o + 1) * comp.n_balls];
                    for chain in &comp.chains {
                        let mut acc = 0.0;
                        let mut emits = chain.emits.iter().peekable();
                        for (pos, &p) in chain.order.iter().enumerate() {
                            acc += comp.weights[p] * src[p];
                            while let Some(&&(len, b)) = emits.peek() {
                                if len != pos + 1 {
                                    break;
                                }
                                dst[b] = acc;
                                emits.next();
                            }
                        }
                    }
                }
            } else {
                let mut acc = vec![0.0; inner];
                for o in 0..outer {
                    for chain in &comp.chains {
                        acc.fill(0.0);
                        let mut emits = chain.emits.iter().peekable();
                        for (pos, &p) in chain.order.iter().enumerate() {
                            let w = comp.weights[p];
                            let start = (o * comp.n_points + p) * inner;
                            for (a, s) in acc.iter_mut().zip(&current[start..start + inner]) {
                                *a += w * s;
                            }
                            while let Some(&&(len, b)) = emits.peek() {
                                if len != pos + 1 {
                                    break;
                                }
                                let at = (o * comp.n_balls + b) * inner;
                                out[at..at + inner].copy_from_slice(&acc);
                                emits.next();
                            }
                        }
                    }
                }
            }
            current = out;
            inner *= comp.n_balls;
        }
        current
    }
}

/// Observed statistics together with the full permutation distribution.
#[derive(Debug, Clone)]
pub struct NullDistribution {
    pub observed: StatField,
    pub observed_balls: Vec<f64>,
    pub permuted_balls: Vec<Vec<f64>>,
    pub permuted_fields: Vec<StatField>,
}

fn check_dimensions(signals: &SignalMatrix, design: &DesignSpec, domain: &ProductDomain) -> Result<()> {
    if signals.n_points() != domain.len() {
        return Err(Error::Dimension(format!(
            "signals have {} points, the domain grid has {}",
            signals.n_points(),
            domain.len()
        )));
    }
    if signals.n_obs() != design.n_obs() {
        return Err(Error::Dimension(format!(
            "{} observations but {} design rows",
            signals.n_obs(),
            design.n_obs()
        )));
    }
    Ok(())
}

/// Materializes the observed and all `B` permuted statistic fields and ball
/// statistics. Memory grows with `B`; [`run_test`] streams instead.
pub fn null_distribution(
    signals: &SignalMatrix,
    design: &DesignSpec,
    hypothesis: &HypothesisSpec,
    domain: &ProductDomain,
    family: &AdjustmentFamily,
    plan: &PermutationPlan,
) -> Result<NullDistribution> {
    check_dimensions(signals, design, domain)?;
    let statistic = prepare_statistic(design, hypothesis)?;
    let integrator = FamilyIntegrator::new(domain, family);
    let residualized = Residualized::new(signals, plan)?;
    let identity: Vec<usize> = (0..signals.n_obs()).collect();
    let observed = residualized.stat_field(&identity, statistic.as_ref())?;
    let observed_balls = integrator.integrate(observed.values());
    let replicates = plan
        .permutations()
        .par_iter()
        .map(|perm| {
            let field = residualized.stat_field(perm, statistic.as_ref())?;
            let balls = integrator.integrate(field.values());
            Ok((field, balls))
        })
        .collect::<Result<Vec<_>>>()?;
    let (permuted_fields, permuted_balls) = replicates.into_iter().unzip();
    Ok(NullDistribution {
        observed,
        observed_balls,
        permuted_balls,
        permuted_fields,
    })
}

/// Unadjusted, ball-wise and adjusted p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueFields {
    pub pointwise: Vec<f64>,
    pub ballwise: Vec<f64>,
    pub adjusted: Vec<f64>,
}

/// `(1 + #{b : permuted_b >= observed}) / (B + 1)`; ties count as extreme.
pub fn permutation_pvalue(exceedances: usize, permutations: usize) -> f64 {
    (1 + exceedances) as f64 / (permutations + 1) as f64
}

/// `p̃(g) = max { p^I : I ∋ g, mask[I] }`, scattered member by member.
pub fn adjust(
    domain: &ProductDomain,
    family: &AdjustmentFamily,
    ballwise: &[f64],
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if ballwise.len() != family.len() || mask.is_some_and(|m| m.len() != family.len()) {
        return Err(Error::Dimension(format!(
            "{} ball p-values for a family of {}",
            ballwise.len(),
            family.len()
        )));
    }
    let mut adjusted = vec![0.0f64; domain.len()];
    for (i, &p) in ballwise.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        family.for_each_point(domain, i, |g| {
            if p > adjusted[g] {
                adjusted[g] = p;
            }
        });
    }
    Ok(adjusted)
}

pub fn pvalues(
    dist: &NullDistribution,
    domain: &ProductDomain,
    family: &AdjustmentFamily,
) -> Result<PValueFields> {
    let b = dist.permuted_fields.len();
    if b == 0 {
        return Err(Error::InvalidArgument("null distribution is empty".into()));
    }
    let pointwise = (0..dist.observed.len())
        .map(|g| {
            let obs = dist.observed.0[g];
            let count = dist.permuted_fields.iter().filter(|f| f.0[g] >= obs).count();
            permutation_pvalue(count, b)
        })
        .collect();
    let ballwise: Vec<f64> = (0..dist.observed_balls.len())
        .map(|i| {
            let obs = dist.observed_balls[i];
            let count = dist.permuted_balls.iter().filter(|t| t[i] >= obs).count();
            permutation_pvalue(count, b)
        })
        .collect();
    let adjusted = adjust(domain, family, &ballwise, None)?;
    Ok(PValueFields {
        pointwise,
        ballwise,
        adjusted,
    })
}

/// Result of [`run_test`].
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub observed: StatField,
    pub observed_balls: Vec<f64>,
    pub pvalues: PValueFields,
    pub permutations: usize,
}

#[derive(Clone)]
struct Counts {
    points: Vec<u32>,
    balls: Vec<u32>,
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        for (a, b) in self.points.iter_mut().zip(other.points) {
            *a += b;
        }
        for (a, b) in self.balls.iter_mut().zip(other.balls) {
            *a += b;
        }
        self
    }
}

/// Full test without keeping the permutation distribution: replicates are
/// reduced to exceedance counts as they are produced. Integer counts merge
/// associatively, so parallel and sequential runs agree exactly.
pub fn run_test(
    signals: &SignalMatrix,
    design: &DesignSpec,
    hypothesis: &HypothesisSpec,
    domain: &ProductDomain,
    family: &AdjustmentFamily,
    plan: &PermutationPlan,
) -> Result<TestOutcome> {
    check_dimensions(signals, design, domain)?;
    let statistic = prepare_statistic(design, hypothesis)?;
    let integrator = FamilyIntegrator::new(domain, family);
    let residualized = Residualized::new(signals, plan)?;
    let identity: Vec<usize> = (0..signals.n_obs()).collect();
    let observed = residualized.stat_field(&identity, statistic.as_ref())?;
    let observed_balls = integrator.integrate(observed.values());
    let perms = plan.permutations();
    let zero = Counts {
        points: vec![0; domain.len()],
        balls: vec![0; family.len()],
    };
    let counts = perms
        .par_iter()
        .try_fold(
            || zero.clone(),
            |mut acc, perm| -> Result<Counts> {
                let field = residualized.stat_field(perm, statistic.as_ref())?;
                for (c, (t, o)) in acc.points.iter_mut().zip(field.0.iter().zip(&observed.0)) {
                    *c += u32::from(t >= o);
                }
                let balls = integrator.integrate(field.values());
                for (c, (t, o)) in acc.balls.iter_mut().zip(balls.iter().zip(&observed_balls)) {
                    *c += u32::from(t >= o);
                }
                Ok(acc)
            },
        )
        .try_reduce(|| zero.clone(), |a, b| Ok(a.merge(b)))?;
    let b = perms.len();
    let pointwise = counts.points.iter().map(|&c| permutation_pvalue(c as usize, b)).collect();
    let ballwise: Vec<f64> = counts.balls.iter().map(|&c| permutation_pvalue(c as usize, b)).collect();
    let adjusted = adjust(domain, family, &ballwise, None)?;
    Ok(TestOutcome {
        observed,
        observed_balls,
        pvalues: PValueFields {
            pointwise,
            ballwise,
            adjusted,
        },
        permutations: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{enumerate_family, ComponentGrid};
    use crate::glm::StatisticKind;
    use approx::assert_relative_eq;

    fn two_sample(n: usize) -> (DesignSpec, HypothesisSpec) {
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        (
            DesignSpec::two_sample(&labels).unwrap(),
            HypothesisSpec::coefficient(1, 2, StatisticKind::TTwoSampleSq),
        )
    }

    #[test]
    fn identity_permutation_is_exact() {
        let (design, h) = two_sample(4);
        let s = SignalMatrix::from_rows(4, 2, &[0.1, 0.7, 1.3, -2.0, 0.33, 5.0, 9.1, 0.2]).unwrap();
        for scheme in [Scheme::FreedmanLane, Scheme::RawLabelPermutation] {
            let plan = PermutationPlan::new(1, 0, scheme, &design, &h).unwrap();
            assert_eq!(permute_once(&s, &plan, &[0, 1, 2, 3]).unwrap(), s);
        }
    }

    #[test]
    fn freedman_lane_intercept_null_preserves_mean() {
        let (design, h) = two_sample(4);
        let plan = PermutationPlan::new(1, 0, Scheme::FreedmanLane, &design, &h).unwrap();
        let y = [1.0, 4.0, 2.0, 9.0];
        let s = SignalMatrix::from_rows(4, 1, &y).unwrap();
        let out = permute_once(&s, &plan, &[3, 2, 1, 0]).unwrap();
        // ȳ + reverse(y - ȳ)
        let mean = 4.0;
        let expected: Vec<f64> = y.iter().rev().map(|v| mean + (v - mean)).collect();
        for (a, b) in out.column(0).iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let m: f64 = out.column(0).iter().sum::<f64>() / 4.0;
        assert_relative_eq!(m, mean, epsilon = 1e-12);
    }

    #[test]
    fn pvalue_conventions() {
        assert_eq!(permutation_pvalue(0, 9), 0.1);
        assert_eq!(permutation_pvalue(9, 9), 1.0);
    }

    #[test]
    fn seeded_permutations_are_reproducible() {
        let (design, h) = two_sample(10);
        let a = PermutationPlan::new(20, 7, Scheme::FreedmanLane, &design, &h).unwrap();
        let b = PermutationPlan::new(20, 7, Scheme::FreedmanLane, &design, &h).unwrap();
        let c = PermutationPlan::new(20, 8, Scheme::FreedmanLane, &design, &h).unwrap();
        assert_eq!(a.permutations(), b.permutations());
        assert_ne!(a.permutations(), c.permutations());
        for p in a.permutations() {
            let mut s = p.clone();
            s.sort_unstable();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn plan_validation() {
        let t = DesignSpec::trend(&[1.0, 2.0, 3.0, 4.0]);
        let h = HypothesisSpec::coefficient(1, 2, StatisticKind::SlopeSq);
        assert!(PermutationPlan::new(5, 0, Scheme::RawLabelPermutation, &t, &h).is_err());
        assert!(PermutationPlan::new(0, 0, Scheme::FreedmanLane, &t, &h).is_err());
        let plan = PermutationPlan::new(5, 0, Scheme::FreedmanLane, &t, &h).unwrap();
        assert!(plan.clone().with_permutations(vec![vec![0, 1, 1, 3]]).is_err());
        assert!(plan.with_permutations(vec![vec![1, 0, 3, 2]]).is_ok());
    }

    fn interval_domain(n: usize, cap: f64) -> ProductDomain {
        ProductDomain::new(vec![ComponentGrid::interval(n, 0.0, 1.0, cap).unwrap()]).unwrap()
    }

    #[test]
    fn integrator_matches_direct_sums() {
        let d = ProductDomain::new(vec![
            ComponentGrid::interval(4, 0.0, 3.0, f64::INFINITY).unwrap(),
            ComponentGrid::circle(5, 5.0, 1.2).unwrap(),
            ComponentGrid::interval(3, 0.0, 1.0, 0.6).unwrap(),
        ])
        .unwrap();
        let fam = enumerate_family(&d).unwrap();
        let field: Vec<f64> = (0..d.len()).map(|g| ((g * 37 % 11) as f64).sqrt()).collect();
        let fast = FamilyIntegrator::new(&d, &fam).integrate(&field);
        let t = StatField(field);
        for (i, v) in fast.iter().enumerate() {
            assert_relative_eq!(*v, integrated_stat(&t, &fam.ball(&d, i)), max_relative = 1e-13);
        }
    }

    #[test]
    fn identity_hook_reproduces_observed() {
        let (design, h) = two_sample(4);
        let d = interval_domain(3, f64::INFINITY);
        let fam = enumerate_family(&d).unwrap();
        let s = SignalMatrix::from_rows(4, 3, &[0.1, 0.5, 0.9, 0.3, 0.2, 0.4, 1.1, 0.8, 1.7, 1.5, 1.2, 0.6]).unwrap();
        let plan = PermutationPlan::new(1, 0, Scheme::FreedmanLane, &design, &h)
            .unwrap()
            .with_permutations(vec![vec![0, 1, 2, 3]])
            .unwrap();
        let dist = null_distribution(&s, &design, &h, &d, &fam, &plan).unwrap();
        assert_eq!(dist.permuted_fields[0], dist.observed);
        assert_eq!(dist.permuted_balls[0], dist.observed_balls);
        let p = pvalues(&dist, &d, &fam).unwrap();
        assert!(p.pointwise.iter().chain(&p.ballwise).chain(&p.adjusted).all(|&v| v == 1.0));
    }

    #[test]
    fn group_swap_leaves_field_unchanged() {
        let (design, h) = two_sample(6);
        let d = interval_domain(4, f64::INFINITY);
        let fam = enumerate_family(&d).unwrap();
        let rows: Vec<f64> = (0..24).map(|k| ((k * 7919) % 23) as f64 / 7.0).collect();
        let s = SignalMatrix::from_rows(6, 4, &rows).unwrap();
        let plan = PermutationPlan::new(1, 0, Scheme::RawLabelPermutation, &design, &h)
            .unwrap()
            .with_permutations(vec![vec![3, 4, 5, 0, 1, 2]])
            .unwrap();
        let dist = null_distribution(&s, &design, &h, &d, &fam, &plan).unwrap();
        assert_eq!(dist.permuted_fields[0], dist.observed);
    }

    #[test]
    fn extreme_and_tied_counts() {
        let d = interval_domain(2, f64::INFINITY);
        let fam = enumerate_family(&d).unwrap();
        let dist = NullDistribution {
            observed: StatField(vec![5.0, 1.0]),
            observed_balls: vec![2.5, 3.0, 0.5],
            permuted_fields: vec![StatField(vec![1.0, 1.0]); 4],
            permuted_balls: vec![vec![0.0, 3.0, 0.1]; 4],
        };
        let p = pvalues(&dist, &d, &fam).unwrap();
        assert_eq!(p.pointwise, vec![0.2, 1.0]);
        assert_eq!(p.ballwise, vec![0.2, 1.0, 0.2]);
    }

    #[test]
    fn full_domain_only_gives_constant_adjustment() {
        let d = ProductDomain::new(vec![ComponentGrid::circle(1, 1.0, f64::INFINITY).unwrap()]).unwrap();
        let fam = enumerate_family(&d).unwrap();
        assert_eq!(fam.len(), 1);
        let adj = adjust(&d, &fam, &[0.3], None).unwrap();
        assert_eq!(adj, vec![0.3]);
        let two = interval_domain(2, f64::INFINITY);
        let fam2 = enumerate_family(&two).unwrap();
        let mask: Vec<bool> = (0..fam2.len()).map(|i| fam2.ball(&two, i).support.len() == 2).collect();
        let adj = adjust(&two, &fam2, &[0.1, 0.4, 0.2], Some(&mask)).unwrap();
        assert_eq!(adj, vec![0.4, 0.4]);
    }

    #[test]
    fn streaming_matches_materialized() {
        let (design, h) = two_sample(8);
        let d = ProductDomain::new(vec![
            ComponentGrid::interval(5, 0.0, 1.0, 0.3).unwrap(),
            ComponentGrid::circle(4, 4.0, f64::INFINITY).unwrap(),
        ])
        .unwrap();
        let fam = enumerate_family(&d).unwrap();
        let rows: Vec<f64> = (0..8 * 20).map(|k| (((k * 2654435761usize) % 1000) as f64) / 100.0).collect();
        let s = SignalMatrix::from_rows(8, 20, &rows).unwrap();
        let plan = PermutationPlan::new(40, 3, Scheme::FreedmanLane, &design, &h).unwrap();
        let dist = null_distribution(&s, &design, &h, &d, &fam, &plan).unwrap();
        let a = pvalues(&dist, &d, &fam).unwrap();
        let b = run_test(&s, &design, &h, &d, &fam, &plan).unwrap();
        assert_eq!(a, b.pvalues);
        for (p, q) in a.pointwise.iter().zip(&a.adjusted) {
            assert!(q >= p);
        }
    }
}
