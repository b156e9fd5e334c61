//! Monte Carlo detection statistics.
//!
//! The state evolution is deterministic: given a scene, a policy, and a
//! phase, every trial of an ideal run ends in the same final density
//! matrix. Only detection is random. Each trial therefore draws one Born
//! sample from the final state, using a counter-based generator keyed by
//! `(seed, trial index)` so results are bit-reproducible and independent
//! of evaluation order; sweeps fan out across points with disjoint
//! stream indices, making parallel and sequential execution identical.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::collapse::CollapsePolicy;
use crate::error::{Error, Result};
use crate::experiments::bin_masses_from_state;
use crate::optics::{ComponentKind, ScreenParams};
use crate::qstate::{DensityMatrix, ModeBasis};
use crate::scenedsl::SceneDoc;
use crate::timeline::{run, schedule};

/// One Monte Carlo campaign: how many packets, which collapse rule, and
/// the reproducibility seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub trials: u64,
    pub seed: u64,
    pub policy: CollapsePolicy,
}

/// Where one packet ended up.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    /// Caught by a named detector.
    Detector(String),
    /// Ended in a mode no detector watches (reported by mode name).
    Mode(String),
    /// Absorbed along the way (polarizer loss).
    Loss,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Detector(id) => f.write_str(id),
            Outcome::Mode(name) => f.write_str(name),
            Outcome::Loss => f.write_str("loss"),
        }
    }
}

/// Counted detections of one campaign, plus the exact probabilities the
/// counts estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub counts: BTreeMap<Outcome, u64>,
    pub trials: u64,
    pub policy: CollapsePolicy,
    pub seed: u64,
    /// Born probabilities per outcome from the final state.
    pub analytic: BTreeMap<Outcome, f64>,
}

impl ExperimentResult {
    pub fn count(&self, outcome: &Outcome) -> u64 {
        self.counts.get(outcome).copied().unwrap_or(0)
    }

    pub fn frequency(&self, outcome: &Outcome) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.count(outcome) as f64 / self.trials as f64
        }
    }
}

/// Outcome label for each basis mode: the detector watching that mode's
/// region and path, or the mode's own name.
pub fn outcome_labels(scene: &SceneDoc, basis: &ModeBasis) -> Vec<Outcome> {
    basis
        .modes()
        .iter()
        .map(|mode| {
            scene
                .components
                .iter()
                .find_map(|c| match &c.kind {
                    ComponentKind::Detector { region, path }
                        if *region == mode.region && *path == mode.path =>
                    {
                        Some(Outcome::Detector(c.id.clone()))
                    }
                    _ => None,
                })
                .unwrap_or_else(|| Outcome::Mode(mode.to_string()))
        })
        .collect()
}

/// Diagonal probability of mode `i`, clamped against rounding dust.
fn mode_probability(rho: &DensityMatrix, i: usize) -> f64 {
    rho.entry(i, i).re.max(0.0)
}

/// One Born sample from a final state: a mode index or a loss event.
///
/// The draw inverts the cumulative distribution over the diagonal in
/// basis order, with the norm deficit as the trailing loss slot. The
/// strict `u < cumulative` comparison means zero-probability outcomes
/// are never produced, even at the distribution's boundaries.
pub fn sample_outcome(rho: &DensityMatrix, u: f64) -> Option<usize> {
    debug_assert!((0.0..1.0).contains(&u));
    let n = rho.dim();
    let mut cumulative = 0.0;
    for i in 0..n {
        cumulative += mode_probability(rho, i);
        if u < cumulative {
            return Some(i);
        }
    }
    // Remaining mass is the deficit: a loss event. When rounding left
    // `u` above every boundary, fall back to the last positive slot.
    if rho.norm_deficit() > 0.0 {
        return None;
    }
    (0..n).rev().find(|&i| mode_probability(rho, i) > 0.0)
}

/// Per-trial generator: one independent ChaCha stream per trial index so
/// any subset of trials can be drawn in any order.
fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn tally(
    rho: &DensityMatrix,
    labels: &[Outcome],
    seed: u64,
    stream_base: u64,
    trials: u64,
) -> BTreeMap<Outcome, u64> {
    let mut counts: BTreeMap<Outcome, u64> = BTreeMap::new();
    for trial in 0..trials {
        let mut rng = trial_rng(seed, stream_base + trial);
        let u = rng.random::<f64>();
        let outcome = match sample_outcome(rho, u) {
            Some(i) => labels[i].clone(),
            None => Outcome::Loss,
        };
        *counts.entry(outcome).or_insert(0) += 1;
    }
    counts
}

fn analytic_reference(rho: &DensityMatrix, labels: &[Outcome]) -> BTreeMap<Outcome, f64> {
    let mut analytic: BTreeMap<Outcome, f64> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        *analytic.entry(label.clone()).or_insert(0.0) += mode_probability(rho, i);
    }
    if rho.norm_deficit() > 0.0 {
        analytic.insert(Outcome::Loss, rho.norm_deficit());
    }
    analytic
}

/// Runs `cfg.trials` packets through the scene and counts detections.
///
/// The evolution itself is computed once; each trial draws one Born
/// sample from the final state, which is observationally identical to
/// evolving per trial because the evolution is deterministic.
pub fn run_trials(scene: &SceneDoc, cfg: &RunConfig) -> Result<ExperimentResult> {
    run_trials_with_stream(scene, cfg, 0)
}

fn run_trials_with_stream(
    scene: &SceneDoc,
    cfg: &RunConfig,
    stream_base: u64,
) -> Result<ExperimentResult> {
    let timeline = schedule(scene)?;
    let evolution = run(&timeline, scene, cfg.policy)?;
    let labels = outcome_labels(scene, &evolution.basis);
    let counts = tally(
        &evolution.final_state,
        &labels,
        cfg.seed,
        stream_base,
        cfg.trials,
    );
    Ok(ExperimentResult {
        counts,
        trials: cfg.trials,
        policy: cfg.policy,
        seed: cfg.seed,
        analytic: analytic_reference(&evolution.final_state, &labels),
    })
}

/// One phase point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub phi: f64,
    pub result: ExperimentResult,
}

/// Sweeps the phase grid, building the scene per point and running a
/// full campaign at each. Points run in parallel; every point uses the
/// stream range `[index * trials, (index + 1) * trials)`, so the result
/// is identical to a sequential sweep.
pub fn sweep<F>(build: F, phis: &[f64], cfg: &RunConfig) -> Result<Vec<SweepPoint>>
where
    F: Fn(f64) -> Result<SceneDoc> + Sync,
{
    phis.par_iter()
        .enumerate()
        .map(|(idx, &phi)| {
            let scene = build(phi)?;
            let result =
                run_trials_with_stream(&scene, cfg, idx as u64 * cfg.trials)?;
            Ok(SweepPoint { phi, result })
        })
        .collect()
}

/// Interference visibility of one outcome's frequency across a sweep.
pub fn sweep_visibility(points: &[SweepPoint], outcome: &Outcome) -> Result<f64> {
    let series: Vec<f64> = points
        .iter()
        .map(|p| p.result.frequency(outcome))
        .collect();
    crate::experiments::visibility(&series)
}

/// Binned screen detections of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenHistogram {
    pub counts: Vec<u64>,
    pub loss: u64,
    /// The exact per-bin masses the counts estimate.
    pub masses: Vec<f64>,
    pub trials: u64,
    pub policy: CollapsePolicy,
    pub seed: u64,
}

impl ScreenHistogram {
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| {
                if self.trials == 0 {
                    0.0
                } else {
                    c as f64 / self.trials as f64
                }
            })
            .collect()
    }
}

/// Runs a screen scene and histograms the detection positions into the
/// screen's bins. Sampling uses the same per-bin masses the analytic
/// side reports, so goodness-of-fit tests compare like with like.
pub fn screen_histogram(
    scene: &SceneDoc,
    params: &ScreenParams,
    cfg: &RunConfig,
) -> Result<ScreenHistogram> {
    let timeline = schedule(scene)?;
    let evolution = run(&timeline, scene, cfg.policy)?;
    let masses = bin_masses_from_state(&evolution.final_state, scene, params)?;
    let deficit = evolution.final_state.norm_deficit();
    let kept = 1.0 - deficit;

    let mut counts = vec![0u64; masses.len()];
    let mut loss = 0u64;
    for trial in 0..cfg.trials {
        let mut rng = trial_rng(cfg.seed, trial);
        let u = rng.random::<f64>();
        let mut cumulative = 0.0;
        let mut hit = None;
        for (i, &m) in masses.iter().enumerate() {
            cumulative += m * kept;
            if u < cumulative {
                hit = Some(i);
                break;
            }
        }
        match hit {
            Some(i) => counts[i] += 1,
            None if deficit > 0.0 => loss += 1,
            None => {
                if let Some(i) = (0..masses.len()).rev().find(|&i| masses[i] > 0.0) {
                    counts[i] += 1;
                }
            }
        }
    }
    Ok(ScreenHistogram {
        counts,
        loss,
        masses,
        trials: cfg.trials,
        policy: cfg.policy,
        seed: cfg.seed,
    })
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against expected masses. Bins
/// with zero expected mass must hold zero counts (else the statistic is
/// infinite by convention and the fit fails outright).
pub fn chi_square_gof(counts: &[u64], masses: &[f64]) -> Result<ChiSquareTest> {
    if counts.len() != masses.len() {
        return Err(Error::Config(format!(
            "{} count bins against {} expected bins",
            counts.len(),
            masses.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("chi-square needs at least one count".into()));
    }
    let mut statistic = 0.0;
    let mut support = 0usize;
    for (&c, &m) in counts.iter().zip(masses) {
        let expected = m * total as f64;
        if expected > 0.0 {
            support += 1;
            let delta = c as f64 - expected;
            statistic += delta * delta / expected;
        } else if c > 0 {
            return Ok(ChiSquareTest {
                statistic: f64::INFINITY,
                dof: support.max(2) - 1,
                p_value: 0.0,
            });
        }
    }
    if support < 2 {
        return Err(Error::Config(
            "chi-square needs at least two bins with positive expectation".into(),
        ));
    }
    let dof = support - 1;
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::Config(format!("chi-square distribution: {e}")))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{build, double_slit_screen, Preset, PresetParams};
    use approx::assert_relative_eq;

    fn fig4(phi: f64) -> SceneDoc {
        build(
            Preset::Fig4,
            &PresetParams {
                phi,
                ..PresetParams::default()
            },
        )
        .unwrap()
    }

    fn x() -> Outcome {
        Outcome::Detector("x".into())
    }

    fn y() -> Outcome {
        Outcome::Detector("y".into())
    }

    #[test]
    fn counts_are_deterministic_and_sum_to_trials() {
        let scene = fig4(std::f64::consts::FRAC_PI_3);
        let cfg = RunConfig {
            trials: 2000,
            seed: 7,
            policy: CollapsePolicy::PoV1,
        };
        let a = run_trials(&scene, &cfg).unwrap();
        let b = run_trials(&scene, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.values().sum::<u64>(), 2000);
        let freq_sum: f64 = a.counts.keys().map(|o| a.frequency(o)).sum();
        assert_relative_eq!(freq_sum, 1.0, epsilon = 1e-12);
        // Different seed, different counts.
        let c = run_trials(
            &scene,
            &RunConfig {
                seed: 8,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn zero_probability_port_is_never_hit() {
        // At zero phase the whole amplitude exits the y port; the x count
        // must be exactly zero, not merely small.
        let scene = fig4(0.0);
        let cfg = RunConfig {
            trials: 10_000,
            seed: 11,
            policy: CollapsePolicy::PoV1,
        };
        let result = run_trials(&scene, &cfg).unwrap();
        assert_eq!(result.count(&x()), 0);
        assert_eq!(result.count(&y()), 10_000);
        assert_eq!(result.analytic.get(&x()).copied().unwrap_or(0.0), 0.0);
    }

    #[test]
    fn frequencies_converge_to_born_probabilities() {
        // 100 independent campaigns at dark-port probability 1/4; at
        // least 99 must land within 4 sigma.
        let scene = fig4(std::f64::consts::FRAC_PI_3);
        let p = 0.25;
        let trials = 10_000u64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let mut within = 0;
        for seed in 0..100 {
            let result = run_trials(
                &scene,
                &RunConfig {
                    trials,
                    seed,
                    policy: CollapsePolicy::PoV1,
                },
            )
            .unwrap();
            if (result.frequency(&x()) - p).abs() <= 4.0 * sigma {
                within += 1;
            }
        }
        assert!(within >= 99, "only {within} of 100 campaigns within 4 sigma");
    }

    #[test]
    fn collapse_sends_half_to_each_port() {
        let scene = fig4(0.0);
        let result = run_trials(
            &scene,
            &RunConfig {
                trials: 10_000,
                seed: 3,
                policy: CollapsePolicy::PoV2Strong,
            },
        )
        .unwrap();
        let fx = result.frequency(&x());
        assert!((0.48..=0.52).contains(&fx), "frequency {fx}");
    }

    #[test]
    fn sweep_is_order_independent() {
        let phis: Vec<f64> = (0..8)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / 8.0)
            .collect();
        let cfg = RunConfig {
            trials: 500,
            seed: 42,
            policy: CollapsePolicy::PoV1,
        };
        let parallel = sweep(|phi| Ok(fig4(phi)), &phis, &cfg).unwrap();
        // Sequential reference with identical stream assignment.
        let sequential: Vec<SweepPoint> = phis
            .iter()
            .enumerate()
            .map(|(idx, &phi)| SweepPoint {
                phi,
                result: run_trials_with_stream(&fig4(phi), &cfg, idx as u64 * cfg.trials)
                    .unwrap(),
            })
            .collect();
        assert_eq!(parallel, sequential);
    }

    #[test]
    fn sweep_visibility_separates_policies() {
        let phis: Vec<f64> = (0..16)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / 16.0)
            .collect();
        let coherent = sweep(
            |phi| Ok(fig4(phi)),
            &phis,
            &RunConfig {
                trials: 20_000,
                seed: 9,
                policy: CollapsePolicy::PoV1,
            },
        )
        .unwrap();
        let vis = sweep_visibility(&coherent, &x()).unwrap();
        assert!(vis >= 0.99, "coherent visibility {vis}");

        let collapsed = sweep(
            |phi| Ok(fig4(phi)),
            &phis,
            &RunConfig {
                trials: 20_000,
                seed: 9,
                policy: CollapsePolicy::PoV2Strong,
            },
        )
        .unwrap();
        let vis = sweep_visibility(&collapsed, &x()).unwrap();
        assert!(vis <= 0.02, "collapsed visibility {vis}");
    }

    #[test]
    fn screen_histogram_matches_masses() {
        let scene = build(Preset::Fig3, &PresetParams::default()).unwrap();
        let params = double_slit_screen();
        for (policy, seed) in [
            (CollapsePolicy::PoV1, 5u64),
            (CollapsePolicy::PoV2Strong, 6),
            (CollapsePolicy::PoV2Weak, 7),
        ] {
            let hist = screen_histogram(
                &scene,
                &params,
                &RunConfig {
                    trials: 100_000,
                    seed,
                    policy,
                },
            )
            .unwrap();
            assert_eq!(hist.counts.len(), 64);
            assert_eq!(hist.counts.iter().sum::<u64>() + hist.loss, 100_000);
            assert_eq!(hist.loss, 0);
            let test = chi_square_gof(&hist.counts, &hist.masses).unwrap();
            assert!(
                test.p_value > 0.001,
                "{policy}: p={} stat={}",
                test.p_value,
                test.statistic
            );
        }
    }

    #[test]
    fn screen_visibility_separates_policies() {
        let scene = build(Preset::Fig3, &PresetParams::default()).unwrap();
        let params = double_slit_screen();
        let coherent = screen_histogram(
            &scene,
            &params,
            &RunConfig {
                trials: 100_000,
                seed: 12,
                policy: CollapsePolicy::PoV1,
            },
        )
        .unwrap();
        let vis = crate::experiments::visibility(&coherent.frequencies()).unwrap();
        assert!(vis > 0.9, "coherent screen visibility {vis}");

        let collapsed = screen_histogram(
            &scene,
            &params,
            &RunConfig {
                trials: 100_000,
                seed: 12,
                policy: CollapsePolicy::PoV2Strong,
            },
        )
        .unwrap();
        let vis = crate::experiments::visibility(&collapsed.frequencies()).unwrap();
        assert!(vis < 0.1, "collapsed screen visibility {vis}");
    }

    #[test]
    fn chi_square_rejects_wrong_distribution() {
        // Sample a strongly fringed pattern but test against flat masses.
        let scene = build(Preset::Fig3, &PresetParams::default()).unwrap();
        let params = double_slit_screen();
        let hist = screen_histogram(
            &scene,
            &params,
            &RunConfig {
                trials: 100_000,
                seed: 13,
                policy: CollapsePolicy::PoV1,
            },
        )
        .unwrap();
        let flat = vec![1.0 / 64.0; 64];
        let test = chi_square_gof(&hist.counts, &flat).unwrap();
        assert!(test.p_value < 1e-6, "p={}", test.p_value);
    }

    #[test]
    fn chi_square_edge_cases() {
        assert!(chi_square_gof(&[1, 2], &[0.5]).is_err());
        assert!(chi_square_gof(&[0, 0], &[0.5, 0.5]).is_err());
        // Counts in a zero-mass bin sink the fit.
        let test = chi_square_gof(&[5, 5], &[1.0, 0.0]).unwrap();
        assert_eq!(test.p_value, 0.0);
    }

    #[test]
    fn loss_is_counted_when_amplitude_is_absorbed() {
        // A polarizer crossed by a rotated packet absorbs half the mass.
        let text = "\
scene lossy speed=1 packet=0.001
region a
region b
region c
segment s1 at=a length=1
pockels pc at=b
segment s2 at=b length=1
polarizer pv axis=V between=b:c
segment s3 at=c length=1
detector d at=c path=p
source pulse emit=0 amp=a:p:V:1
route p via=s1,pc,s2,pv,s3,d
window pc on=0.9 off=1.1
";
        let scene = crate::scenedsl::parse(text).unwrap();
        let cfg = RunConfig {
            trials: 10_000,
            seed: 21,
            policy: CollapsePolicy::PoV1,
        };
        let result = run_trials(&scene, &cfg).unwrap();
        // The Pockels swap puts everything into H, which the polarizer
        // absorbs entirely: every trial is a loss.
        assert_eq!(result.count(&Outcome::Loss), 10_000);
        assert_relative_eq!(
            result.analytic.get(&Outcome::Loss).copied().unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }
}
