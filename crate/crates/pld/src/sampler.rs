//! Full sampler runs: simple rejection, the rejection-free approximate
//! pipeline, and the exact-uniform pipeline, with restart loops and stats.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degree::{DegreeSequence, StageParams};
use crate::heavy::{phase1, phase2};
use crate::light::{compute_rho_table, phase3, phase4, phase5, RhoTable};
use crate::pairing::{census, membership_a0, membership_phi0, Pairing};
use crate::rng::{stream_rng, PldRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simple,
    PldStar,
    PldExact,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simple" => Ok(Mode::Simple),
            "pld-star" => Ok(Mode::PldStar),
            "pld-exact" => Ok(Mode::PldExact),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartCause {
    Phi0,
    A0,
    F,
    B,
    PreB,
    T,
    Cap,
}

/// Phase outcome other than success: either restart the whole run or abort it.
#[derive(Debug)]
pub enum PhaseError {
    Restart(RestartCause),
    /// A deterministic lower bound exceeded an exact count: the configured
    /// parameters are unusable and silent continuation would bias the output.
    ParamInvalid(String),
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("restart budget of {budget} exceeded after {restarts} restarts")]
    BudgetExceeded { budget: u64, restarts: u64 },
    #[error("parameterization invalid: {0}")]
    ParamInvalid(String),
    #[error("type distribution has a negative entry; parameterization unusable")]
    RhoNegative,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct RestartCauses {
    pub phi0: u64,
    pub a0: u64,
    pub f: u64,
    pub b: u64,
    pub pre_b: u64,
    pub t: u64,
    pub cap: u64,
    pub param_invalid: u64,
}

impl RestartCauses {
    pub fn total(&self) -> u64 {
        self.phi0 + self.a0 + self.f + self.b + self.pre_b + self.t + self.cap + self.param_invalid
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct SwitchCounts {
    pub phase1: u64,
    pub phase2: u64,
    pub phase3: u64,
    pub phase4: u64,
    pub phase5_type_i: u64,
    pub phase5_type_iii: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PhaseIterations {
    pub phase1: u64,
    pub phase2: u64,
    pub phase3: u64,
    pub phase4: u64,
    pub phase5: u64,
}

/// Observability record for one or more runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RunStats {
    pub restarts: u64,
    pub restart_causes: RestartCauses,
    pub switch_counts: SwitchCounts,
    pub iterations: PhaseIterations,
    pub wall_time: f64,
    pub delegated_simple: bool,
}

impl RunStats {
    fn record_restart(&mut self, cause: RestartCause) {
        self.restarts += 1;
        match cause {
            RestartCause::Phi0 => self.restart_causes.phi0 += 1,
            RestartCause::A0 => self.restart_causes.a0 += 1,
            RestartCause::F => self.restart_causes.f += 1,
            RestartCause::B => self.restart_causes.b += 1,
            RestartCause::PreB => self.restart_causes.pre_b += 1,
            RestartCause::T => self.restart_causes.t += 1,
            RestartCause::Cap => self.restart_causes.cap += 1,
        }
    }

    pub fn merge(&mut self, other: &RunStats) {
        self.restarts += other.restarts;
        self.restart_causes.phi0 += other.restart_causes.phi0;
        self.restart_causes.a0 += other.restart_causes.a0;
        self.restart_causes.f += other.restart_causes.f;
        self.restart_causes.b += other.restart_causes.b;
        self.restart_causes.pre_b += other.restart_causes.pre_b;
        self.restart_causes.t += other.restart_causes.t;
        self.restart_causes.cap += other.restart_causes.cap;
        self.restart_causes.param_invalid += other.restart_causes.param_invalid;
        self.switch_counts.phase1 += other.switch_counts.phase1;
        self.switch_counts.phase2 += other.switch_counts.phase2;
        self.switch_counts.phase3 += other.switch_counts.phase3;
        self.switch_counts.phase4 += other.switch_counts.phase4;
        self.switch_counts.phase5_type_i += other.switch_counts.phase5_type_i;
        self.switch_counts.phase5_type_iii += other.switch_counts.phase5_type_iii;
        self.iterations.phase1 += other.iterations.phase1;
        self.iterations.phase2 += other.iterations.phase2;
        self.iterations.phase3 += other.iterations.phase3;
        self.iterations.phase4 += other.iterations.phase4;
        self.iterations.phase5 += other.iterations.phase5;
        self.wall_time += other.wall_time;
        self.delegated_simple |= other.delegated_simple;
    }
}

pub const DEFAULT_MAX_RESTARTS: u64 = 1_000_000;

/// Draws one graph with the degree sequence of `d`, returning the sorted edge
/// list in original 1-based labels.
pub fn sample(
    d: &DegreeSequence,
    params: &StageParams,
    mode: Mode,
    rng: &mut PldRng,
    max_restarts: u64,
) -> Result<(Vec<(u32, u32)>, RunStats), SampleError> {
    let table = match mode {
        Mode::Simple => None,
        _ if params.mom.m[2] < params.mom.m[1] => None,
        _ => Some(compute_rho_table(params)?),
    };
    sample_with_table(d, params, mode, table.as_ref(), rng, max_restarts)
}

pub(crate) fn sample_with_table(
    d: &DegreeSequence,
    params: &StageParams,
    mode: Mode,
    table: Option<&RhoTable>,
    rng: &mut PldRng,
    max_restarts: u64,
) -> Result<(Vec<(u32, u32)>, RunStats), SampleError> {
    let start = Instant::now();
    let mut stats = RunStats::default();
    // When M2 < M1 the admissible initial set is the simple pairings and the
    // switching stages pass the pairing straight through, so the run is the
    // simple rejection scheme.
    let effective = if mode != Mode::Simple && params.mom.m[2] < params.mom.m[1] {
        stats.delegated_simple = true;
        Mode::Simple
    } else {
        mode
    };

    loop {
        if stats.restarts >= max_restarts {
            return Err(SampleError::BudgetExceeded {
                budget: max_restarts,
                restarts: stats.restarts,
            });
        }
        let mut p = Pairing::random(d, rng);
        let outcome: Result<Vec<(u32, u32)>, PhaseError> = match effective {
            Mode::Simple => {
                if p.is_simple() {
                    Ok(p.project(d).expect("simple pairing projects"))
                } else {
                    Err(PhaseError::Restart(RestartCause::Phi0))
                }
            }
            _ => run_pld(&mut p, d, params, table.expect("table"), effective, rng, &mut stats),
        };
        match outcome {
            Ok(edges) => {
                verify_output(&edges, d, rng);
                stats.wall_time = start.elapsed().as_secs_f64();
                return Ok((edges, stats));
            }
            Err(PhaseError::Restart(cause)) => {
                stats.record_restart(cause);
            }
            Err(PhaseError::ParamInvalid(msg)) => {
                stats.restart_causes.param_invalid += 1;
                return Err(SampleError::ParamInvalid(msg));
            }
        }
    }
}

fn run_pld(
    p: &mut Pairing,
    d: &DegreeSequence,
    params: &StageParams,
    table: &RhoTable,
    mode: Mode,
    rng: &mut PldRng,
    stats: &mut RunStats,
) -> Result<Vec<(u32, u32)>, PhaseError> {
    if !membership_phi0(p, params) {
        return Err(PhaseError::Restart(RestartCause::Phi0));
    }
    phase1(p, params, mode, rng, stats)?;
    phase2(p, params, mode, rng, stats)?;
    let c = census(p, params);
    if !membership_a0(&c, params) {
        return Err(PhaseError::Restart(RestartCause::A0));
    }
    phase3(p, params, mode, rng, stats)?;
    phase4(p, params, mode, rng, stats)?;
    phase5(p, d, params, table, mode, rng, stats)
}

/// Emitted graphs are checked for simplicity and exact degrees: always in
/// debug builds, one in a hundred in release builds.
fn verify_output(edges: &[(u32, u32)], d: &DegreeSequence, rng: &mut PldRng) {
    let check = cfg!(debug_assertions) || rand::Rng::gen_ratio(rng, 1, 100);
    if !check {
        return;
    }
    let n = d.n();
    let mut deg = vec![0u32; n + 1];
    let mut seen = std::collections::HashSet::new();
    for &(u, v) in edges {
        assert!(u < v, "edge not normalized");
        assert!(v as usize <= n, "label out of range");
        assert!(seen.insert((u, v)), "duplicate edge");
        deg[u as usize] += 1;
        deg[v as usize] += 1;
    }
    for v in 0..n {
        let want = d.degree(v);
        let got = deg[d.original_label(v) as usize];
        assert_eq!(got, want, "degree mismatch at canonical vertex {v}");
    }
}

/// N independent samples; sample j uses the RNG stream derived from
/// (master_seed, j), so results are identical regardless of scheduling.
pub fn sample_batch(
    d: &DegreeSequence,
    params: &StageParams,
    mode: Mode,
    master_seed: u64,
    n_samples: u64,
    max_restarts: u64,
) -> Result<(Vec<Vec<(u32, u32)>>, RunStats), SampleError> {
    let table = match mode {
        Mode::Simple => None,
        _ if params.mom.m[2] < params.mom.m[1] => None,
        _ => Some(compute_rho_table(params)?),
    };
    let results: Vec<Result<(Vec<(u32, u32)>, RunStats), SampleError>> = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(master_seed, j);
            sample_with_table(d, params, mode, table.as_ref(), &mut rng, max_restarts)
        })
        .collect();
    let mut edges_out = Vec::with_capacity(n_samples as usize);
    let mut agg = RunStats::default();
    for r in results {
        let (edges, stats) = r?;
        agg.merge(&stats);
        edges_out.push(edges);
    }
    Ok((edges_out, agg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree::{derive_params, DegreeSequence};
    use crate::rng::master_rng;

    fn setup(raw: &[i64]) -> (DegreeSequence, StageParams) {
        let d = DegreeSequence::load_and_validate(raw).unwrap();
        let p = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        (d, p)
    }

    #[test]
    fn unique_graph_any_mode() {
        let (d, params) = setup(&[1, 1]);
        for mode in [Mode::Simple, Mode::PldStar, Mode::PldExact] {
            let mut rng = master_rng(5);
            let (edges, stats) = sample(&d, &params, mode, &mut rng, 1000).unwrap();
            assert_eq!(edges, vec![(1, 2)]);
            assert_eq!(stats.restarts, 0);
        }
    }

    #[test]
    fn triangle_simple_mode() {
        let (d, params) = setup(&[2, 2, 2]);
        let mut rng = master_rng(6);
        for _ in 0..50 {
            let (edges, _) = sample(&d, &params, Mode::Simple, &mut rng, 100_000).unwrap();
            assert_eq!(edges, vec![(1, 2), (1, 3), (2, 3)]);
        }
    }

    #[test]
    fn simple_rejection_acceptance_rate() {
        let (d, params) = setup(&[2, 2, 2]);
        let mut rng = master_rng(7);
        let trials = 100_000u64;
        let mut accepted = 0u64;
        for _ in 0..trials {
            let p = Pairing::random(&d, &mut rng);
            if p.is_simple() {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / trials as f64;
        assert!((rate - 8.0 / 15.0).abs() < 0.01, "rate {rate}");
        let _ = params;
    }

    #[test]
    fn delegation_when_m2_below_m1() {
        let (d, params) = setup(&[2, 2, 2, 1, 1]);
        assert!(params.mom.m[2] < params.mom.m[1]);
        let mut rng = master_rng(8);
        let (_, stats) = sample(&d, &params, Mode::PldExact, &mut rng, 100_000).unwrap();
        assert!(stats.delegated_simple);
    }

    #[test]
    fn batch_determinism_and_stats_invariant() {
        let (d, params) = setup(&[3, 2, 2, 2, 1]);
        let (a, sa) = sample_batch(&d, &params, Mode::PldStar, 99, 50, 100_000).unwrap();
        let (b, sb) = sample_batch(&d, &params, Mode::PldStar, 99, 50, 100_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.restarts, sb.restarts);
        assert_eq!(sa.restarts, sa.restart_causes.total());
        // single sample equals the batch entry with the same stream
        let mut rng = stream_rng(99, 0);
        let (one, _) = sample(&d, &params, Mode::PldStar, &mut rng, 100_000).unwrap();
        assert_eq!(one, a[0]);
    }

    #[test]
    fn budget_exceeded_on_ungraphical_input() {
        // d = (2): the only multigraph is a loop, so no simple graph exists.
        let d = DegreeSequence::load_and_validate(&[2]).unwrap();
        let params = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        let mut rng = master_rng(9);
        match sample(&d, &params, Mode::Simple, &mut rng, 200) {
            Err(SampleError::BudgetExceeded { .. }) => {}
            other => panic!("expected budget exceeded, got {other:?}"),
        }
    }
}
