//! Monte Carlo harness for the two-sample simulation design: signal on a
//! region of a mesh, spatially correlated Gaussian noise, error-rate metrics.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{enumerate_family, ComponentGrid, ProductDomain, RadiusCap};
use crate::error::{Error, Result};
use crate::glm::{DesignSpec, HypothesisSpec, SignalMatrix, StatisticKind};
use crate::mesh::{build_icosphere, load_mesh, DistanceMatrix, TriangulatedManifold};
use crate::permute::{run_test, PermutationPlan, Scheme};

/// Largest mesh for which the dense covariance square root is formed.
pub const MAX_DENSE_NOISE_VERTICES: usize = 2000;

/// Zero-mean Gaussian field with covariance `sd² exp(-d² / (2 h²))`,
/// sampled through the symmetric square root of the covariance matrix.
#[derive(Debug, Clone)]
pub struct GaussianKernelNoise {
    root: DMatrix<f64>,
}

impl GaussianKernelNoise {
    pub fn new(distances: &DistanceMatrix, bandwidth: f64, sd: f64) -> Result<Self> {
        let n = distances.len();
        if n > MAX_DENSE_NOISE_VERTICES {
            return Err(Error::InvalidArgument(format!(
                "dense Gaussian noise is limited to {MAX_DENSE_NOISE_VERTICES} vertices, mesh has {n}"
            )));
        }
        if !(bandwidth > 0.0 && sd > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise bandwidth and sd must be positive (got {bandwidth}, {sd})"
            )));
        }
        let var = sd * sd;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let d = distances.get(i, j);
            if d.is_finite() {
                var * (-d * d / (2.0 * bandwidth * bandwidth)).exp()
            } else {
                0.0
            }
        });
        let eig = cov.symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite eigenvalue".into()));
        }
        let sqrt_vals = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()));
        let v = &eig.eigenvectors;
        let root = v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose();
        if root.iter().any(|x| !x.is_finite()) {
            return Err(Error::Factorization("non-finite square root".into()));
        }
        Ok(Self { root })
    }

    pub fn len(&self) -> usize {
        self.root.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.root.nrows() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.len(), (0..self.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.root * z).iter().copied().collect()
    }
}

/// One draw of kernel noise on the mesh's vertices.
pub fn gaussian_kernel_noise(mesh: &TriangulatedManifold, bandwidth: f64, sd: f64, seed: u64) -> Result<Vec<f64>> {
    let noise = GaussianKernelNoise::new(mesh.distances()?, bandwidth, sd)?;
    Ok(noise.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Icosphere { order: usize, radius: f64 },
    Off(PathBuf),
}

impl MeshSource {
    pub fn build(&self) -> Result<TriangulatedManifold> {
        match self {
            MeshSource::Icosphere { order, radius } => build_icosphere(*order, *radius),
            MeshSource::Off(path) => load_mesh(path),
        }
    }
}

/// Where the pointwise null is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthMask {
    /// Global null.
    None,
    Vertices(Vec<usize>),
    /// One geodesic disc `{e : d(center, e) < radius}`.
    Cap { center: usize, radius: f64 },
    /// Union of equal-radius discs.
    Patches { centers: Vec<usize>, radius: f64 },
}

impl TruthMask {
    pub fn resolve(&self, mesh: &TriangulatedManifold) -> Result<Vec<bool>> {
        let n = mesh.n_vertices();
        let mut mask = vec![false; n];
        let mut mark = |vs: Vec<usize>| -> Result<()> {
            for v in vs {
                *mask.get_mut(v).ok_or(Error::VertexOutOfRange { index: v, len: n })? = true;
            }
            Ok(())
        };
        match self {
            TruthMask::None => {}
            TruthMask::Vertices(vs) => mark(vs.clone())?,
            TruthMask::Cap { center, radius } => mark(mesh.ball(*center, *radius)?)?,
            TruthMask::Patches { centers, radius } => {
                for &c in centers {
                    mark(mesh.ball(c, *radius)?)?;
                }
            }
        }
        Ok(mask)
    }
}

fn default_scheme() -> Scheme {
    Scheme::FreedmanLane
}

/// One simulation scenario: `N/2` signals of pure noise, `N/2` with the
/// base signal `amplitude · 1[truth]` added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub mesh: MeshSource,
    pub truth: TruthMask,
    pub signal_amplitude: f64,
    pub noise_bandwidth: f64,
    pub noise_sd: f64,
    pub samples: usize,
    pub radius_cap: RadiusCap,
    pub permutations: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("scenario {}: {msg}", self.id)));
        if self.samples < 4 || !self.samples.is_multiple_of(2) {
            return bad(format!("samples must be even and at least 4, got {}", self.samples));
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if self.permutations == 0 {
            return bad("permutations must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.noise_bandwidth > 0.0 && self.noise_sd > 0.0) {
            return bad("noise bandwidth and sd must be positive".into());
        }
        if !self.signal_amplitude.is_finite() {
            return bad("signal amplitude must be finite".into());
        }
        Ok(())
    }
}

/// Measure-weighted Monte Carlo error rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// `None` when the truth mask is empty.
    pub sensitivity: Option<f64>,
    pub fwer: f64,
    pub false_positive_rate: f64,
    pub false_discovery_rate: f64,
}

impl ErrorRates {
    pub fn require_sensitivity(&self) -> Result<f64> {
        self.sensitivity
            .ok_or_else(|| Error::InvalidArgument("sensitivity is undefined for an empty truth mask".into()))
    }
}

/// Aggregates per-replicate rejection masks against the truth mask.
///
/// * sensitivity: mean of `w(R ∩ T) / w(T)`
/// * FWER: share of replicates with a rejection outside `T`
/// * FPR: mean of `w(R \ T) / w(Tᶜ)` (0 when `Tᶜ` is empty)
/// * FDR: mean of `w(R \ T) / w(R)` (0 on replicates without rejections)
pub fn compute_error_rates(rejections: &[Vec<bool>], truth: &[bool], weights: &[f64]) -> Result<ErrorRates> {
    if rejections.is_empty() {
        return Err(Error::InvalidArgument("no replicates".into()));
    }
    if truth.len() != weights.len() || rejections.iter().any(|r| r.len() != truth.len()) {
        return Err(Error::Dimension("masks and weights must cover the same vertices".into()));
    }
    let w_true: f64 = truth.iter().zip(weights).filter(|(t, _)| **t).map(|(_, w)| w).sum();
    let w_null: f64 = truth.iter().zip(weights).filter(|(t, _)| !**t).map(|(_, w)| w).sum();
    let (mut sens, mut fwer, mut fpr, mut fdr) = (0.0, 0.0, 0.0, 0.0);
    for rejected in rejections {
        let (mut hit, mut false_hit, mut total) = (0.0, 0.0, 0.0);
        let mut any_false = false;
        for ((&r, &t), &w) in rejected.iter().zip(truth).zip(weights) {
            if !r {
                continue;
            }
            total += w;
            if t {
                hit += w;
            } else {
                false_hit += w;
                any_false = true;
            }
        }
        if w_true > 0.0 {
            sens += hit / w_true;
        }
        if any_false {
            fwer += 1.0;
        }
        if w_null > 0.0 {
            fpr += false_hit / w_null;
        }
        if total > 0.0 {
            fdr += false_hit / total;
        }
    }
    let reps = rejections.len() as f64;
    Ok(ErrorRates {
        sensitivity: (w_true > 0.0).then(|| sens / reps),
        fwer: fwer / reps,
        false_positive_rate: fpr / reps,
        false_discovery_rate: fdr / reps,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub rates: ErrorRates,
    /// `p̃ <= alpha`, one mask per replicate.
    pub rejections: Vec<Vec<bool>>,
    pub truth: Vec<bool>,
    pub family_size: usize,
}

/// Per-replicate generator: the scenario seed picks the key, the replicate
/// index the ChaCha stream.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let mut mesh = cfg.mesh.build()?;
    mesh.compute_weights()?;
    mesh.compute_distances()?;
    run_scenario_on(cfg, &mesh)
}

/// Runs a scenario on an already prepared mesh (weights and distances set);
/// `cfg.mesh` is ignored.
pub fn run_scenario_on(cfg: &ScenarioConfig, mesh: &TriangulatedManifold) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let truth = cfg.truth.resolve(mesh)?;
    let noise = GaussianKernelNoise::new(mesh.distances()?, cfg.noise_bandwidth, cfg.noise_sd)?;
    let grid = ComponentGrid::from_mesh(mesh, cfg.radius_cap.value())?;
    let weights = grid.weights().to_vec();
    let domain = ProductDomain::new(vec![grid])?;
    let family = enumerate_family(&domain)?;

    let n = cfg.samples;
    let m = mesh.n_vertices();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    let design = DesignSpec::two_sample(&labels)?;
    let hypothesis = HypothesisSpec::coefficient(1, 2, StatisticKind::TTwoSampleSq);

    let rejections = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(cfg.seed, rep as u64);
            let mut rows = Vec::with_capacity(n * m);
            for &label in &labels {
                let field = noise.sample(&mut rng);
                rows.extend(field.iter().zip(&truth).map(|(e, &t)| {
                    if label == 1 && t {
                        e + cfg.signal_amplitude
                    } else {
                        *e
                    }
                }));
            }
            let signals = SignalMatrix::from_rows(n, m, &rows)?;
            let plan = PermutationPlan::new(cfg.permutations, rng.random(), cfg.scheme, &design, &hypothesis)?;
            let outcome = run_test(&signals, &design, &hypothesis, &domain, &family, &plan)?;
            Ok(outcome.pvalues.adjusted.iter().map(|&p| p <= cfg.alpha).collect())
        })
        .collect::<Result<Vec<Vec<bool>>>>()?;

    let rates = compute_error_rates(&rejections, &truth, &weights)?;
    Ok(ScenarioOutcome {
        rates,
        rejections,
        truth,
        family_size: family.len(),
    })
}

/// Twelve scenarios on a unit icosphere: a scattered four-patch region and a
/// single connected cap, each crossed with
/// `(N, cap) ∈ {(20, ∞), (10, ∞), (40, ∞), (20, r₁), (20, r₂), (20, r₃)}`,
/// where `r₁, r₂, r₃ = (10, 3, 0.5) · π / 57` (caps of 10, 3 and 0.5 on a
/// surface 57 units across, rescaled to the half circumference `π`).
pub fn standard_sweep(order: usize, permutations: usize, replicates: usize, seed: u64) -> Vec<ScenarioConfig> {
    let pi = std::f64::consts::PI;
    let caps = [10.0 / 57.0 * pi, 3.0 / 57.0 * pi, 0.5 / 57.0 * pi];
    let layout = [
        (20, f64::INFINITY),
        (10, f64::INFINITY),
        (40, f64::INFINITY),
        (20, caps[0]),
        (20, caps[1]),
        (20, caps[2]),
    ];
    let regions = [
        ("patches", TruthMask::Patches { centers: vec![2, 3, 4, 6], radius: 0.35 }),
        ("cap", TruthMask::Cap { center: 5, radius: 0.6 }),
    ];
    regions
        .iter()
        .flat_map(|(name, mask)| {
            layout.iter().enumerate().map(move |(k, &(samples, cap))| ScenarioConfig {
                id: format!("{name}-{}", k + 1),
                mesh: MeshSource::Icosphere { order, radius: 1.0 },
                truth: mask.clone(),
                signal_amplitude: 1.0,
                noise_bandwidth: 0.2,
                noise_sd: 1.0,
                samples,
                radius_cap: RadiusCap(cap),
                permutations,
                replicates,
                alpha: 0.05,
                seed,
                scheme: Scheme::FreedmanLane,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn counting_example() {
        let truth = [false, true, true, false];
        let rejected = vec![vec![false, false, true, true]];
        let r = compute_error_rates(&rejected, &truth, &[1.0; 4]).unwrap();
        assert_eq!(r.sensitivity, Some(0.5));
        assert_eq!(r.fwer, 1.0);
        assert_eq!(r.false_positive_rate, 0.5);
        assert_eq!(r.false_discovery_rate, 0.5);
    }

    #[test]
    fn reject_all_and_none() {
        let truth = [true; 3];
        let all = compute_error_rates(&[vec![true; 3]], &truth, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            all,
            ErrorRates {
                sensitivity: Some(1.0),
                fwer: 0.0,
                false_positive_rate: 0.0,
                false_discovery_rate: 0.0
            }
        );
        let none = compute_error_rates(&[vec![false; 3]], &[true, false, false], &[1.0; 3]).unwrap();
        assert_eq!(none.sensitivity, Some(0.0));
        assert_eq!((none.fwer, none.false_positive_rate, none.false_discovery_rate), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_truth_has_no_sensitivity() {
        let r = compute_error_rates(&[vec![true, false]], &[false, false], &[1.0, 1.0]).unwrap();
        assert_eq!(r.sensitivity, None);
        assert!(r.require_sensitivity().is_err());
        assert_eq!(r.fwer, 1.0);
        assert!(compute_error_rates(&[], &[false], &[1.0]).is_err());
    }

    #[test]
    fn weighted_denominators() {
        let r = compute_error_rates(&[vec![true, true, false]], &[true, false, false], &[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(r.sensitivity, Some(1.0));
        assert_relative_eq!(r.false_positive_rate, 0.25);
        assert_relative_eq!(r.false_discovery_rate, 1.0 / 3.0);
    }

    fn path_distances() -> DistanceMatrix {
        DistanceMatrix::from_fn(3, |i, j| i.abs_diff(j) as f64)
    }

    #[test]
    fn kernel_covariance_by_monte_carlo() {
        let noise = GaussianKernelNoise::new(&path_distances(), 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut cov = [[0.0; 3]; 3];
        for _ in 0..draws {
            let x = noise.sample(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += x[i] * x[j];
                }
            }
        }
        for i in 0..3usize {
            for j in 0..3usize {
                let d = i.abs_diff(j) as f64;
                let expected = (-d * d / 2.0).exp();
                assert!((cov[i][j] / draws as f64 - expected).abs() < 0.02, "({i},{j})");
            }
        }
    }

    #[test]
    fn bandwidth_limits() {
        let d = path_distances();
        let tiny = GaussianKernelNoise::new(&d, 1e-3, 1.0).unwrap();
        let huge = GaussianKernelNoise::new(&d, 1e4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 20_000;
        let (mut c_tiny, mut c_huge, mut v_tiny, mut v_huge) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..draws {
            let a = tiny.sample(&mut rng);
            let b = huge.sample(&mut rng);
            c_tiny += a[0] * a[2];
            v_tiny += a[0] * a[0];
            c_huge += b[0] * b[2];
            v_huge += b[0] * b[0];
            assert!((b[0] - b[2]).abs() < 1e-3 * (1.0 + b[0].abs()));
        }
        assert!((c_tiny / v_tiny).abs() < 0.03);
        assert!(c_huge / v_huge > 0.999);
    }

    #[test]
    fn noise_rejects_bad_parameters() {
        assert!(GaussianKernelNoise::new(&path_distances(), 0.0, 1.0).is_err());
        assert!(GaussianKernelNoise::new(&path_distances(), 1.0, -1.0).is_err());
    }

    fn small_scenario() -> ScenarioConfig {
        ScenarioConfig {
            id: "t".into(),
            mesh: MeshSource::Icosphere { order: 2, radius: 1.0 },
            truth: TruthMask::Cap { center: 0, radius: 0.8 },
            signal_amplitude: 2.0,
            noise_bandwidth: 0.3,
            noise_sd: 1.0,
            samples: 8,
            radius_cap: RadiusCap(0.7),
            permutations: 19,
            replicates: 3,
            alpha: 0.05,
            seed: 42,
            scheme: Scheme::FreedmanLane,
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = small_scenario();
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.rates, b.rates);
        assert_eq!(a.rejections, b.rejections);
        for v in [a.rates.fwer, a.rates.false_positive_rate, a.rates.false_discovery_rate] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn scenario_validation() {
        let mut cfg = small_scenario();
        cfg.samples = 7;
        assert!(run_scenario(&cfg).is_err());
        let mut cfg = small_scenario();
        cfg.replicates = 0;
        assert!(run_scenario(&cfg).is_err());
        let mut cfg = small_scenario();
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn global_null_has_no_sensitivity() {
        let mut cfg = small_scenario();
        cfg.signal_amplitude = 0.0;
        cfg.truth = TruthMask::None;
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.rates.sensitivity, None);
    }

    #[test]
    fn strong_signal_tiny_cap_is_found() {
        let mut cfg = small_scenario();
        cfg.signal_amplitude = 50.0;
        cfg.noise_sd = 0.5;
        cfg.radius_cap = RadiusCap(0.01);
        cfg.samples = 10;
        cfg.permutations = 99;
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.rates.sensitivity, Some(1.0));
    }

    #[test]
    fn sweep_layout() {
        let sweep = standard_sweep(3, 10, 2, 1);
        assert_eq!(sweep.len(), 12);
        assert!(sweep.iter().all(|s| s.validate().is_ok()));
        assert_eq!(sweep.iter().filter(|s| s.samples == 20).count(), 8);
        for cfg in [&sweep[0], &sweep[3]] {
            let text = serde_json::to_string(cfg).unwrap();
            let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(&back, cfg);
        }
        assert!(serde_json::to_string(&sweep[0]).unwrap().contains("\"inf\""));
    }

    #[test]
    fn scenario_rejects_unknown_fields() {
        let mut v = serde_json::to_value(small_scenario()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
    }
}
