use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{check_dims, w2_alignment, MetricsError};
use crate::cpml::CpmlParams;
use crate::field::{ChargeSnapshot, Field};
use crate::kernel::{FieldParams, PairPotential};
use crate::optim::{find_local_minimum, Descent, DescentOptions};
use crate::seed::SeedTree;
use crate::vecmath::{centroid, dist};

/// Relative slack on "within delta" comparisons. Decaying-field minima sit
/// exactly on a delta-sphere, and descent may stop a rounding error outside.
pub const KINK_TOLERANCE: f64 = 1e-9;

/// Grid intervals of the radial-line search.
const RADIAL_SAMPLES: usize = 2020;
/// Relative width of the shell beyond delta covered by the radial search.
const RADIAL_SHELL: f64 = 0.01;

const CPML_CENTROID_TOL: f64 = 1e-6;

fn within(d: f64, delta: f64) -> bool {
    d <= delta * (1.0 + KINK_TOLERANCE)
}

/// Largest admissible clamp radius for `points`: `min |z_i - z_j| / (2 (1 + 1/n))`,
/// infinite for a single point.
pub fn prop1_bound(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let mut min_pair = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            min_pair = min_pair.min(dist(a, b));
        }
    }
    min_pair / (2.0 * (1.0 + 1.0 / n))
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Point {
    /// Distance from the seed to the decaying-field minimum.
    pub dist: f64,
    pub within_delta: bool,
    pub converged: bool,
    /// The ray from the seed through the found minimum has a local minimum
    /// within delta of the seed: its lowest point on `[0, 1.01 delta]` lies
    /// inside the ball.
    pub radial_ok: bool,
    pub cpml_centroid_dist: f64,
    pub cpml_nearest_dist: f64,
    pub cpml_converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Report {
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub bound: f64,
    /// The centroid is farther than delta from every point, so it is the
    /// contrastive field's minimum.
    pub centroid_clear: bool,
    pub per_point: Vec<Prop1Point>,
    pub all_within_delta: bool,
    /// Contrastive descents reached the centroid and stayed clear of every
    /// point; vacuous unless `centroid_clear`.
    pub cpml_ok: bool,
}

fn descend<K: PairPotential>(
    snapshot: &ChargeSnapshot,
    kernel: &K,
    start: &[f64],
    options: &DescentOptions,
) -> Result<Descent, MetricsError> {
    let field = Field::new(snapshot, kernel);
    Ok(find_local_minimum(&field, 0, start, options)?)
}

/// Descends the attraction field of `points` from every point, under both
/// the decaying kernel and the contrastive one.
///
/// `delta` defaults to 0.9 times [`prop1_bound`] (1.0 for a single point).
pub fn prop1_check(
    points: &[Vec<f64>],
    alpha: f64,
    delta: Option<f64>,
    tol: f64,
) -> Result<Prop1Report, MetricsError> {
    let n = points.len();
    if n == 0 {
        return Err(MetricsError::TooFewPoints { needed: 1, got: 0 });
    }
    let dim = points[0].len();
    check_dims("point dimension", points, dim)?;
    let bound = prop1_bound(points);
    let delta = delta.unwrap_or(if n == 1 { 1.0 } else { 0.9 * bound });
    let pfml = FieldParams::new(delta, alpha)?;
    let cpml = CpmlParams::new(delta)?;
    let snapshot = ChargeSnapshot::from_samples(dim, 1, points.iter().map(|p| (0, p.clone())))?;
    let field = Field::new(&snapshot, &pfml);
    let center = centroid(points);
    let centroid_clear = points.iter().all(|p| dist(p, &center) > delta);

    let pfml_options = DescentOptions {
        tolerance: tol,
        max_step: Some(delta / 4.0),
        ..DescentOptions::default()
    };
    let cpml_options = DescentOptions {
        tolerance: tol,
        ..DescentOptions::default()
    };
    let mut per_point = Vec::with_capacity(n);
    for z in points {
        let found = descend(&snapshot, &pfml, z, &pfml_options)?;
        let d = dist(&found.position, z);
        let radial_ok = d == 0.0 || {
            let dir: Vec<f64> = found.position.iter().zip(z).map(|(p, q)| (p - q) / d).collect();
            // The ray minimum is local: other points pull harder the farther
            // out one goes, so only a thin shell beyond delta is searched.
            let reach = delta * (1.0 + RADIAL_SHELL);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=RADIAL_SAMPLES {
                let s = reach * k as f64 / RADIAL_SAMPLES as f64;
                let probe: Vec<f64> = z.iter().zip(&dir).map(|(q, u)| q + s * u).collect();
                let value = field.class_potential(&probe, 0, None)?;
                if value < best.0 {
                    best = (value, s);
                }
            }
            within(best.1, delta)
        };
        let contrastive = descend(&snapshot, &cpml, z, &cpml_options)?;
        per_point.push(Prop1Point {
            dist: d,
            within_delta: within(d, delta),
            converged: found.converged(),
            radial_ok,
            cpml_centroid_dist: dist(&contrastive.position, &center),
            cpml_nearest_dist: points
                .iter()
                .map(|p| dist(p, &contrastive.position))
                .fold(f64::INFINITY, f64::min),
            cpml_converged: contrastive.converged(),
        });
    }
    let all_within_delta = per_point.iter().all(|p| p.within_delta);
    let cpml_ok = !centroid_clear
        || per_point.iter().all(|p| {
            p.cpml_converged && p.cpml_centroid_dist < CPML_CENTROID_TOL && p.cpml_nearest_dist > delta
        });
    Ok(Prop1Report {
        n,
        alpha,
        delta,
        bound,
        centroid_clear,
        per_point,
        all_within_delta,
        cpml_ok,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Summary {
    pub instances: Vec<Prop1Report>,
    pub fraction_within_delta: f64,
    pub fraction_radial_ok: f64,
    /// Instances whose centroid is clear of every point.
    pub clear_instances: usize,
    pub cpml_ok: bool,
    pub passed: bool,
}

/// Runs [`prop1_check`] on `instances` random planar point sets: n in
/// [2, 8] points uniform in the unit square around the origin, alpha drawn
/// from {1, 2, 4}, delta from the bound. Instance `i` uses substream
/// `("prop1", i)` of `seed`.
pub fn run_prop1(seed: u64, instances: usize) -> Result<Prop1Summary, MetricsError> {
    let tree = SeedTree::new(seed);
    let mut reports = Vec::with_capacity(instances);
    for i in 0..instances {
        let mut rng = tree.stream("prop1", i as u64);
        let n = rng.random_range(2..=8);
        let alpha = [1.0, 2.0, 4.0][rng.random_range(0..3)];
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        reports.push(prop1_check(&points, alpha, None, 1e-10)?);
    }
    let total: usize = reports.iter().map(|r| r.per_point.len()).sum();
    let count = |f: fn(&Prop1Point) -> bool| {
        reports.iter().flat_map(|r| &r.per_point).filter(|p| f(p)).count() as f64 / total.max(1) as f64
    };
    let fraction_within_delta = count(|p| p.within_delta);
    let fraction_radial_ok = count(|p| p.radial_ok);
    let cpml_ok = reports.iter().all(|r| r.cpml_ok);
    Ok(Prop1Summary {
        clear_instances: reports.iter().filter(|r| r.centroid_clear).count(),
        passed: fraction_within_delta == 1.0 && cpml_ok,
        instances: reports,
        fraction_within_delta,
        fraction_radial_ok,
        cpml_ok,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Corollary1Trial {
    pub w2_pfml: f64,
    pub w2_cpml: f64,
    pub pfml_converged: bool,
    pub cpml_converged: bool,
}

impl Corollary1Trial {
    fn passes(&self, delta: f64) -> bool {
        self.pfml_converged && within(self.w2_pfml, delta) && self.w2_pfml < self.w2_cpml
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Corollary1Report {
    pub delta: f64,
    pub alpha: f64,
    pub num_proxies: usize,
    pub trials: Vec<Corollary1Trial>,
    pub fraction_pfml_within_delta: f64,
    pub fraction_pfml_beats_cpml: f64,
    /// Trials meeting both conditions with a converged relaxation.
    pub fraction_passing: f64,
    pub relaxation_failures: usize,
    pub passed: bool,
}

/// Share of trials that must pass.
const COROLLARY1_PASS_FRACTION: f64 = 0.95;

/// Relaxes `num_proxies` proxies, initialized from a normal fitted to the
/// data's centroid and spread, down the attraction field of `points` under
/// both kernels, then aligns each equilibrium to the data. Trial `t` draws
/// its initialization from substream `("corollary1", t)` of `seed`.
pub fn corollary1_check(
    points: &[Vec<f64>],
    num_proxies: usize,
    alpha: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<Corollary1Report, MetricsError> {
    let n = points.len();
    if n == 0 || num_proxies == 0 || num_proxies > n {
        return Err(MetricsError::TooFewData {
            proxies: num_proxies,
            data: n,
        });
    }
    let dim = points[0].len();
    check_dims("point dimension", points, dim)?;
    let pfml = FieldParams::new(delta, alpha)?;
    let cpml = CpmlParams::new(delta)?;
    let snapshot = ChargeSnapshot::from_samples(dim, 1, points.iter().map(|p| (0, p.clone())))?;
    let center = centroid(points);
    let spread = (points.iter().map(|p| dist(p, &center).powi(2)).sum::<f64>() / (n * dim) as f64).sqrt();
    let init = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).expect("finite spread");
    let pfml_options = DescentOptions {
        max_step: Some(delta / 4.0),
        ..DescentOptions::default()
    };
    let cpml_options = DescentOptions::default();

    let tree = SeedTree::new(seed);
    let mut records = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = tree.stream("corollary1", t as u64);
        let starts: Vec<Vec<f64>> = (0..num_proxies)
            .map(|_| center.iter().map(|c| c + init.sample(&mut rng)).collect())
            .collect();
        let relax = |kernel: &dyn Fn(&[f64]) -> Result<Descent, MetricsError>| {
            let mut ends = Vec::with_capacity(num_proxies);
            let mut converged = true;
            for s in &starts {
                let d = kernel(s)?;
                converged &= d.converged();
                ends.push(d.position);
            }
            Ok::<_, MetricsError>((w2_alignment(&ends, points)?.w2, converged))
        };
        let (w2_pfml, pfml_converged) = relax(&|s| descend(&snapshot, &pfml, s, &pfml_options))?;
        let (w2_cpml, cpml_converged) = relax(&|s| descend(&snapshot, &cpml, s, &cpml_options))?;
        records.push(Corollary1Trial {
            w2_pfml,
            w2_cpml,
            pfml_converged,
            cpml_converged,
        });
    }
    let frac = |f: &dyn Fn(&Corollary1Trial) -> bool| {
        records.iter().filter(|t| f(t)).count() as f64 / trials.max(1) as f64
    };
    let fraction_pfml_within_delta = frac(&|t| within(t.w2_pfml, delta));
    let fraction_pfml_beats_cpml = frac(&|t| t.w2_pfml < t.w2_cpml);
    let fraction_passing = frac(&|t| t.passes(delta));
    Ok(Corollary1Report {
        delta,
        alpha,
        num_proxies,
        relaxation_failures: records
            .iter()
            .filter(|t| !(t.pfml_converged && t.cpml_converged))
            .count(),
        trials: records,
        fraction_pfml_within_delta,
        fraction_pfml_beats_cpml,
        fraction_passing,
        passed: fraction_passing >= COROLLARY1_PASS_FRACTION,
    })
}

/// Ten planar points in two tight clusters of five around `(-1, 0)` and
/// `(1, 0)`, drawn from substream `("corollary1-points", 0)` of `seed`.
pub fn two_cluster_points(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedTree::new(seed).stream("corollary1-points", 0);
    let jitter = Normal::new(0.0, 0.04).expect("positive std");
    let mut points = Vec::with_capacity(10);
    for cx in [-1.0, 1.0] {
        for _ in 0..5 {
            points.push(vec![cx + jitter.sample(&mut rng), jitter.sample(&mut rng)]);
        }
    }
    points
}

/// [`corollary1_check`] on [`two_cluster_points`] with three proxies,
/// alpha = 4 and delta = 0.2.
pub fn run_corollary1(seed: u64, trials: usize) -> Result<Corollary1Report, MetricsError> {
    corollary1_check(&two_cluster_points(seed), 3, 4.0, 0.2, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_trivially_within() {
        let r = prop1_check(&[vec![0.3, -0.2]], 2.0, None, 1e-10).unwrap();
        assert_eq!(r.delta, 1.0);
        assert!(r.all_within_delta);
        assert_eq!(r.per_point[0].dist, 0.0);
    }

    #[test]
    fn two_points_at_unit_distance() {
        let r = prop1_check(&[vec![0.0, 0.0], vec![1.0, 0.0]], 2.0, None, 1e-10).unwrap();
        assert!((r.delta - 0.9 / 3.0).abs() < 1e-15);
        assert!(r.all_within_delta);
        assert!(r.per_point.iter().all(|p| p.radial_ok && p.converged));
        assert!(r.centroid_clear && r.cpml_ok);
        for p in &r.per_point {
            assert!((p.cpml_nearest_dist - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn one_dimensional_pair_with_one_proxy() {
        let points = vec![vec![0.0], vec![1.0]];
        let r = corollary1_check(&points, 1, 4.0, 0.2, 10, 5).unwrap();
        for t in &r.trials {
            assert!((t.w2_cpml - 0.5).abs() < 1e-6);
            assert!(within(t.w2_pfml, 0.2));
        }
        assert!(r.passed);
    }

    #[test]
    fn corollary1_report_field_names() {
        let r = corollary1_check(&[vec![0.0], vec![1.0]], 1, 4.0, 0.2, 1, 0).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("trials").is_some());
        assert!(json.get("fraction_pfml_within_delta").is_some());
        assert!(json.get("fraction_pfml_beats_cpml").is_some());
    }
}
