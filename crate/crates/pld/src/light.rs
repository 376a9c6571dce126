//! Stage 2: light loop removal (Phase 3), light triple removal (Phase 4),
//! and light double-edge removal with type I/III switchings (Phase 5),
//! together with the type-distribution recursion and the doublet census.

use rand::Rng;
use thiserror::Error;

use crate::degree::{DegreeSequence, StageParams};
use crate::heavy::RESAMPLE_CAP;
use crate::pairing::Pairing;
use crate::rng::PldRng;
use crate::sampler::{Mode, PhaseError, RestartCause, RunStats, SampleError};

#[derive(Debug, Error, PartialEq)]
pub enum LightError {
    #[error("doublet census requires a pairing without loops or triple edges")]
    CensusPrecondition,
}

/// Switching types used in the double-edge phase. Types IV..VII exist only as
/// bound families for diagnostics of the type distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchType {
    I,
    III,
    IV,
    V,
    VI,
    VII,
}

fn m1f(params: &StageParams) -> f64 {
    params.mom.m[1] as f64
}

/// Upper bound on type-I switchings in class i: one labeled double edge and
/// two labeled pairs.
pub fn mbar_i(params: &StageParams, i: usize) -> f64 {
    4.0 * i as f64 * m1f(params) * m1f(params)
}

pub fn mbar_tau(params: &StageParams, tau: SwitchType) -> f64 {
    let m = &params.mom;
    let (m1, m2, m3) = (m.m[1] as f64, m.m[2] as f64, m.m[3] as f64);
    let (l2, l3) = (m.l[2] as f64, m.l[3] as f64);
    let _ = m1;
    match tau {
        SwitchType::I => unreachable!("use mbar_i with the class index"),
        SwitchType::III => m3 * l3,
        SwitchType::IV => 2.0 * m2.powi(3) * l2,
        SwitchType::V => 2.0 * m2 * m2 * m3 * l3,
        SwitchType::VI => m2.powi(5) * l2,
        SwitchType::VII => m2.powi(4) * m3 * l3,
    }
}

/// Lower bound on the creatable-doublet count in class i.
pub fn mlow(params: &StageParams, i: usize) -> f64 {
    let m = &params.mom;
    let (m2, l2, l4) = (m.m[2] as f64, m.l[2] as f64, m.l[4] as f64);
    let (d1, dh, u1) = (params.d1 as f64, params.dh as f64, params.u[1]);
    let fi = i as f64;
    m2 * l2
        - 8.0 * fi * (dh * m2 + d1 * l2)
        - (2.0 * fi * d1 * d1 * dh * dh + 4.0 * fi * u1 * u1 + 8.0 * m2 * u1 + l4)
}

/// Pre-state lower bounds: powers of M1 - 2 U1 - 4i.
pub fn mhat(params: &StageParams, tau: SwitchType, i: usize) -> f64 {
    let base = m1f(params) - 2.0 * params.u[1] - 4.0 * i as f64;
    match tau {
        SwitchType::I => 1.0,
        SwitchType::III => base,
        SwitchType::IV => base.powi(3),
        SwitchType::V => base.powi(4),
        SwitchType::VI => base.powi(6),
        SwitchType::VII => base.powi(7),
    }
}

/// Lower bound actually used against b_lite = Z0 + Z1: the headroom term
/// covers every doublet class the two-type scheme cannot create.
pub fn mlow_lite(params: &StageParams, i: usize) -> f64 {
    (mlow(params, i) - 8.0 * m1f(params) * params.u[1] * params.u[1]).max(1.0)
}

pub fn mhat_used(params: &StageParams, i: usize) -> f64 {
    mhat(params, SwitchType::III, i).max(1.0)
}

/// Phase-3 bound family.
pub fn mbar_loop(params: &StageParams, i: usize) -> f64 {
    2.0 * i as f64 * m1f(params) * m1f(params)
}

pub fn mlow_loop(params: &StageParams, i: usize) -> f64 {
    let m = &params.mom;
    let (m1, l2) = (m.m[1] as f64, m.l[2] as f64);
    let (d1, dh, u1) = (params.d1 as f64, params.dh as f64, params.u[1]);
    let fi = i as f64;
    let burden = 2.0 * fi + 4.0 * params.b_d + 6.0 * params.b_t;
    l2 * m1
        - 2.0 * dh * m1 * (burden + fi * dh / 2.0)
        - l2 * (burden + 6.0 * d1 + 2.0 * u1)
}

/// Phase-4 bound family.
pub fn mbar_triple(params: &StageParams, i: usize) -> f64 {
    12.0 * i as f64 * m1f(params).powi(3)
}

pub fn mlow_triple(params: &StageParams, i: usize) -> f64 {
    let m = &params.mom;
    let (m2, m3, l3, l6) = (m.m[2] as f64, m.m[3] as f64, m.l[3] as f64, m.l[6] as f64);
    let (d1, dh) = (params.d1 as f64, params.dh as f64);
    let (u1, u2, u3) = (params.u[1], params.u[2], params.u[3]);
    let fi = i as f64;
    m3 * l3
        - 3.0 * m3 * (4.0 * params.b_d * dh * dh + 6.0 * fi * dh * dh)
        - 3.0 * l3 * (4.0 * params.b_d * d1 * d1 + 6.0 * fi * d1 * d1)
        - l6
        - 16.0 * m3 * u3
        - 3.0 * m2 * u1 * u2
}

/// Solved type distribution for Phase 5. Rows 0..=i1; the bounds actually
/// used by the run (clamped where the raw formulas go nonpositive at small
/// scales) are recorded alongside.
#[derive(Debug, Clone)]
pub struct RhoTable {
    pub i1: usize,
    pub x: Vec<f64>,
    pub rho_i: Vec<f64>,
    pub rho_iii: Vec<f64>,
    pub xi_eff: f64,
    pub mlow_used: Vec<f64>,
    pub mhat_used: Vec<f64>,
    pub clamped: bool,
}

pub fn compute_rho_table(params: &StageParams) -> Result<RhoTable, SampleError> {
    let i1 = params.b_d.ceil().max(0.0) as usize;
    let xi = params.xi_eff;
    let mut x = vec![0.0; i1 + 1];
    let mut rho_i = vec![0.0; i1 + 1];
    let mut rho_iii = vec![0.0; i1 + 1];
    let mut ml_used = vec![0.0; i1 + 1];
    let mut mh_used = vec![0.0; i1 + 1];
    let mut clamped = false;
    x[i1] = 1.0;
    rho_i[i1] = 1.0 - xi;
    rho_iii[i1] = 0.0;
    ml_used[i1] = mlow_lite(params, i1);
    mh_used[i1] = mhat_used(params, i1);
    if mlow(params, i1) <= 0.0 {
        clamped = true;
    }
    let mb_iii = mbar_tau(params, SwitchType::III);
    for i in (0..i1).rev() {
        let ml = mlow_lite(params, i);
        let mh = mhat_used(params, i);
        if mlow(params, i) - 8.0 * m1f(params) * params.u[1] * params.u[1] <= 1.0
            || mhat(params, SwitchType::III, i) <= 1.0
        {
            clamped = true;
        }
        ml_used[i] = ml;
        mh_used[i] = mh;
        let c1 = x[i + 1] * rho_i[i + 1] * ml / mbar_i(params, i + 1) + 1.0;
        let c2 = rho_i[i + 1] * x[i + 1] * mb_iii / (mbar_i(params, i + 1) * mh);
        x[i] = c1;
        rho_iii[i] = c2 / c1;
        rho_i[i] = 1.0 - xi - rho_iii[i];
        if rho_i[i] < 0.0 {
            return Err(SampleError::RhoNegative);
        }
    }
    Ok(RhoTable {
        i1,
        x,
        rho_i,
        rho_iii,
        xi_eff: xi,
        mlow_used: ml_used,
        mhat_used: mh_used,
        clamped,
    })
}

/// Diagnostic type-selection mass for the unimplemented switching types,
/// evaluated from the solved table by the same recursion row.
pub fn rho_extended(
    table: &RhoTable,
    params: &StageParams,
    tau: SwitchType,
    i: usize,
) -> f64 {
    debug_assert!(matches!(
        tau,
        SwitchType::IV | SwitchType::V | SwitchType::VI | SwitchType::VII
    ));
    if i >= table.i1 {
        return 0.0;
    }
    let mh = mhat(params, tau, i).max(1.0);
    table.rho_i[i + 1] * table.x[i + 1] / table.x[i] * mbar_tau(params, tau)
        / (mbar_i(params, i + 1) * mh)
}

/// Classification of all M2 L2 doublets. Indices 0..=5 then the remainder.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DoubletCounts {
    pub z: [u64; 6],
    pub zstar: u64,
}

impl DoubletCounts {
    pub fn b_lite(&self) -> u64 {
        self.z[0] + self.z[1]
    }

    pub fn total(&self) -> u64 {
        self.z.iter().sum::<u64>() + self.zstar
    }
}

fn has_loop_or_triple(p: &Pairing, h: u32) -> bool {
    p.mult_entries().any(|(&(a, b), &m)| {
        if a == b {
            true
        } else {
            m == 3 && !(a < h && b < h)
        }
    })
}

/// Classifies every (light ordered 2-star, ordered 2-star) selection by which
/// single adjacencies join the paired vertices: none -> Z0 (type-I creatable),
/// centers -> Z1, one leaf pair -> Z2, center plus leaf -> Z3, both leaves ->
/// Z4, all three -> Z5; anything unclean lands in the remainder.
pub fn doublet_census(
    p: &Pairing,
    params: &StageParams,
    lite: bool,
) -> Result<DoubletCounts, LightError> {
    let h = params.h as u32;
    if has_loop_or_triple(p, h) {
        return Err(LightError::CensusPrecondition);
    }
    let n = p.n() as u32;
    let mut counts = DoubletCounts::default();
    let m2_total: u64 = (0..n)
        .map(|v| {
            let d = p.degree(v) as u64;
            d * d.saturating_sub(1)
        })
        .sum();
    for u1 in h..n {
        if p.degree(u1) < 2 {
            continue;
        }
        for pa in p.points_of(u1) {
            for pb in p.points_of(u1) {
                if pa == pb {
                    continue;
                }
                let u2 = p.vertex_of(p.mate(pa));
                let u3 = p.vertex_of(p.mate(pb));
                let f1_clean = u2 != u1
                    && u3 != u1
                    && u2 != u3
                    && p.m(u1, u2) == 1
                    && p.m(u1, u3) == 1;
                if !f1_clean {
                    if !lite {
                        counts.zstar += m2_total;
                    }
                    continue;
                }
                for v1 in 0..n {
                    if p.degree(v1) < 2 {
                        continue;
                    }
                    for ra in p.points_of(v1) {
                        for rb in p.points_of(v1) {
                            if ra == rb {
                                continue;
                            }
                            let v2 = p.vertex_of(p.mate(ra));
                            let v3 = p.vertex_of(p.mate(rb));
                            let clean = v2 != v1
                                && v3 != v1
                                && v2 != v3
                                && p.m(v1, v2) == 1
                                && p.m(v1, v3) == 1
                                && distinct6(u1, u2, u3, v1, v2, v3);
                            if !clean {
                                if !lite {
                                    counts.zstar += 1;
                                }
                                continue;
                            }
                            let e1 = p.m(u1, v1);
                            let e2 = p.m(u2, v2);
                            let e3 = p.m(u3, v3);
                            if e1 > 1 || e2 > 1 || e3 > 1 {
                                if !lite {
                                    counts.zstar += 1;
                                }
                                continue;
                            }
                            let idx = match (e1, e2, e3) {
                                (0, 0, 0) => 0,
                                (1, 0, 0) => 1,
                                (0, 1, 0) | (0, 0, 1) => 2,
                                (1, 1, 0) | (1, 0, 1) => 3,
                                (0, 1, 1) => 4,
                                (1, 1, 1) => 5,
                                _ => unreachable!(),
                            };
                            if !lite || idx <= 1 {
                                counts.z[idx] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(counts)
}

fn distinct6(a: u32, b: u32, c: u32, d: u32, e: u32, f: u32) -> bool {
    let v = [a, b, c, d, e, f];
    for i in 0..6 {
        for j in (i + 1)..6 {
            if v[i] == v[j] {
                return false;
            }
        }
    }
    true
}

/// Valid labeled extra-pair choices for a designated centers-adjacent doublet:
/// the pre-state count for a type III step.
pub fn bhat_iii(p: &Pairing, u: [u32; 3], v: [u32; 3]) -> u64 {
    let named = [u[0], u[1], u[2], v[0], v[1], v[2]];
    let mut count = 0u64;
    for e in 0..p.total_points() as u32 {
        let f = p.mate(e);
        let wa = p.vertex_of(e);
        let wb = p.vertex_of(f);
        if wa == wb || p.m(wa, wb) != 1 {
            continue;
        }
        if named.contains(&wa) || named.contains(&wb) {
            continue;
        }
        if p.m(u[0], wa) != 0 || p.m(v[0], wb) != 0 {
            continue;
        }
        count += 1;
    }
    count
}

/// Exact creatable-configuration count for the loop phase: valid
/// (light ordered 2-star, oriented pair) selections.
pub fn phase3_b_exact(p: &Pairing, params: &StageParams) -> u64 {
    let h = params.h as u32;
    let n = p.n() as u32;
    let mut total = 0u64;
    for u0 in h..n {
        if p.degree(u0) < 2 || p.m(u0, u0) != 0 {
            continue;
        }
        for pa in p.points_of(u0) {
            for pb in p.points_of(u0) {
                if pa == pb {
                    continue;
                }
                let u1 = p.vertex_of(p.mate(pa));
                let u3 = p.vertex_of(p.mate(pb));
                if u1 == u0 || u3 == u0 || u1 == u3 {
                    continue;
                }
                if p.m(u0, u1) != 1 || p.m(u0, u3) != 1 {
                    continue;
                }
                for e in 0..p.total_points() as u32 {
                    let f = p.mate(e);
                    let w1 = p.vertex_of(e);
                    let w2 = p.vertex_of(f);
                    if w1 == w2 || p.m(w1, w2) != 1 {
                        continue;
                    }
                    if [u0, u1, u3].contains(&w1) || [u0, u1, u3].contains(&w2) {
                        continue;
                    }
                    if p.m(u1, w1) != 0 || p.m(u3, w2) != 0 {
                        continue;
                    }
                    total += 1;
                }
            }
        }
    }
    total
}

/// Exact creatable-configuration count for the triple phase: ordered pairs of
/// 3-stars, the first light, forming a valid inverse; this is also the number
/// of type III switchings applicable on the pairing.
pub fn phase4_b_exact(p: &Pairing, params: &StageParams) -> u64 {
    let h = params.h as u32;
    let n = p.n() as u32;
    let mut total = 0u64;
    let mut stars1 = Vec::new();
    for w1 in h..n {
        if p.degree(w1) < 3 {
            continue;
        }
        collect_stars(p, w1, &mut stars1);
    }
    for (w1, l) in &stars1 {
        for w2 in 0..n {
            if p.degree(w2) < 3 || w2 == *w1 || l.contains(&w2) {
                continue;
            }
            if p.m(*w1, w2) != 0 {
                continue;
            }
            let pts: Vec<u32> = p.points_of(w2).collect();
            for &ra in &pts {
                for &rb in &pts {
                    for &rc in &pts {
                        if ra == rb || ra == rc || rb == rc {
                            continue;
                        }
                        let q = [
                            p.vertex_of(p.mate(ra)),
                            p.vertex_of(p.mate(rb)),
                            p.vertex_of(p.mate(rc)),
                        ];
                        if q.iter().any(|&x| {
                            x == w2 || x == *w1 || l.contains(&x) || p.m(w2, x) != 1
                        }) {
                            continue;
                        }
                        if (0..3).any(|g| p.m(l[g], q[g]) != 0) {
                            continue;
                        }
                        total += 1;
                    }
                }
            }
        }
    }
    total
}

/// Ordered 3-stars at w with all pairs single: (center, leaves).
fn collect_stars(p: &Pairing, w: u32, out: &mut Vec<(u32, [u32; 3])>) {
    let pts: Vec<u32> = p.points_of(w).collect();
    for &a in &pts {
        for &b in &pts {
            for &c in &pts {
                if a == b || a == c || b == c {
                    continue;
                }
                let l = [
                    p.vertex_of(p.mate(a)),
                    p.vertex_of(p.mate(b)),
                    p.vertex_of(p.mate(c)),
                ];
                if l.iter().any(|&x| x == w || p.m(w, x) != 1) {
                    continue;
                }
                out.push((w, l));
            }
        }
    }
}

fn bernoulli(rng: &mut PldRng, prob: f64) -> bool {
    rng.gen::<f64>() < prob
}

/// Phase 3: remove light loops one at a time.
pub fn phase3(
    p: &mut Pairing,
    params: &StageParams,
    mode: Mode,
    rng: &mut PldRng,
    stats: &mut RunStats,
) -> Result<(), PhaseError> {
    let exact = mode == Mode::PldExact;
    let mut loops: Vec<(u32, u32)> = Vec::new();
    for pt in 0..p.total_points() as u32 {
        let q = p.mate(pt);
        if pt < q && p.vertex_of(pt) == p.vertex_of(q) {
            loops.push((pt, q));
        }
    }
    while !loops.is_empty() {
        let i = loops.len();
        stats.iterations.phase3 += 1;
        let mut attempts = 0u32;
        let idx;
        loop {
            attempts += 1;
            let cand = rng.gen_range(0..loops.len());
            let (mut p1, mut p2) = loops[cand];
            if rng.gen::<bool>() {
                std::mem::swap(&mut p1, &mut p2);
            }
            let e3 = rng.gen_range(0..p.total_points() as u32);
            let e5 = rng.gen_range(0..p.total_points() as u32);
            let m3 = p.mate(e3);
            let m5 = p.mate(e5);
            let u0 = p.vertex_of(p1);
            let u1 = p.vertex_of(e3);
            let u2 = p.vertex_of(m3);
            let u3 = p.vertex_of(e5);
            let u4 = p.vertex_of(m5);
            let valid = distinct5(u0, u1, u2, u3, u4)
                && p.m(u1, u2) == 1
                && p.m(u3, u4) == 1
                && p.m(u0, u1) == 0
                && p.m(u0, u3) == 0
                && p.m(u2, u4) == 0
                && p.m(u0, u0) == 1;
            if valid {
                p.rewire(
                    &[(p1, p2), (e3, m3), (e5, m5)],
                    &[(p1, e3), (p2, e5), (m3, m5)],
                );
                stats.switch_counts.phase3 += 1;
                idx = cand;
                break;
            }
            if exact {
                return Err(PhaseError::Restart(RestartCause::F));
            }
            if attempts >= RESAMPLE_CAP {
                return Err(PhaseError::Restart(RestartCause::Cap));
            }
        }
        loops.swap_remove(idx);
        if exact {
            let ml = mlow_loop(params, i - 1);
            if ml <= 0.0 {
                return Err(PhaseError::Restart(RestartCause::B));
            }
            let b = phase3_b_exact(p, params) as f64;
            if ml > b {
                return Err(PhaseError::ParamInvalid(format!(
                    "loop-phase lower bound {ml} exceeds exact count {b}"
                )));
            }
            if !bernoulli(rng, ml / b) {
                return Err(PhaseError::Restart(RestartCause::B));
            }
        }
    }
    Ok(())
}

fn distinct5(a: u32, b: u32, c: u32, d: u32, e: u32) -> bool {
    let v = [a, b, c, d, e];
    for i in 0..5 {
        for j in (i + 1)..5 {
            if v[i] == v[j] {
                return false;
            }
        }
    }
    true
}

/// Phase 4: remove light triple edges one at a time.
pub fn phase4(
    p: &mut Pairing,
    params: &StageParams,
    mode: Mode,
    rng: &mut PldRng,
    stats: &mut RunStats,
) -> Result<(), PhaseError> {
    let exact = mode == Mode::PldExact;
    let h = params.h as u32;
    let mut triples: Vec<(u32, u32)> = p
        .mult_entries()
        .filter(|(&(a, b), &m)| a != b && m == 3 && !(a < h && b < h))
        .map(|(&(a, b), _)| (a, b))
        .collect();
    while !triples.is_empty() {
        let i = triples.len();
        stats.iterations.phase4 += 1;
        let mut attempts = 0u32;
        let idx;
        loop {
            attempts += 1;
            let cand = rng.gen_range(0..triples.len());
            let (mut va, mut vb) = triples[cand];
            if rng.gen::<bool>() {
                std::mem::swap(&mut va, &mut vb);
            }
            // va plays the light-center side
            let mut tp: Vec<(u32, u32)> = p
                .points_of(va)
                .filter(|&pt| p.vertex_of(p.mate(pt)) == vb)
                .map(|pt| (pt, p.mate(pt)))
                .collect();
            debug_assert_eq!(tp.len(), 3);
            // random assignment of the triple pairs to the three picks
            for g in (1..3).rev() {
                let k = rng.gen_range(0..=g);
                tp.swap(g, k);
            }
            let picks: Vec<(u32, u32)> = (0..3)
                .map(|_| {
                    let e = rng.gen_range(0..p.total_points() as u32);
                    (e, p.mate(e))
                })
                .collect();
            let c: Vec<u32> = picks.iter().map(|&(e, _)| p.vertex_of(e)).collect();
            let dd: Vec<u32> = picks.iter().map(|&(_, f)| p.vertex_of(f)).collect();
            let mut verts = vec![va, vb];
            verts.extend_from_slice(&c);
            verts.extend_from_slice(&dd);
            let all_distinct = {
                let mut ok = true;
                for x in 0..verts.len() {
                    for y in (x + 1)..verts.len() {
                        if verts[x] == verts[y] {
                            ok = false;
                        }
                    }
                }
                ok
            };
            let valid = va >= h
                && all_distinct
                && picks.iter().enumerate().all(|(g, &(e, f))| {
                    let (w1, w2) = (p.vertex_of(e), p.vertex_of(f));
                    p.m(w1, w2) == 1 && p.m(va, c[g]) == 0 && p.m(vb, dd[g]) == 0
                })
                && pairwise_distinct_pairs(p, &picks);
            if valid {
                let mut removed = Vec::new();
                let mut added = Vec::new();
                for g in 0..3 {
                    let (pa, pb) = tp[g];
                    let (e, f) = picks[g];
                    removed.push((pa, pb));
                    removed.push((e, f));
                    added.push((pa, e));
                    added.push((pb, f));
                }
                p.rewire(&removed, &added);
                stats.switch_counts.phase4 += 1;
                idx = cand;
                break;
            }
            if exact {
                return Err(PhaseError::Restart(RestartCause::F));
            }
            if attempts >= RESAMPLE_CAP {
                return Err(PhaseError::Restart(RestartCause::Cap));
            }
        }
        triples.swap_remove(idx);
        if exact {
            let ml = mlow_triple(params, i - 1);
            if ml <= 0.0 {
                return Err(PhaseError::Restart(RestartCause::B));
            }
            let b = phase4_b_exact(p, params) as f64;
            if ml > b {
                return Err(PhaseError::ParamInvalid(format!(
                    "triple-phase lower bound {ml} exceeds exact count {b}"
                )));
            }
            if !bernoulli(rng, ml / b) {
                return Err(PhaseError::Restart(RestartCause::B));
            }
        }
    }
    Ok(())
}

fn pairwise_distinct_pairs(p: &Pairing, picks: &[(u32, u32)]) -> bool {
    let ids: Vec<u32> = picks.iter().map(|&(e, _)| e.min(p.mate(e))).collect();
    for x in 0..ids.len() {
        for y in (x + 1)..ids.len() {
            if ids[x] == ids[y] {
                return false;
            }
        }
    }
    true
}

/// Weighted sampler over ordered 3-stars: cumulative [d]_3 per vertex.
struct StarSampler {
    cum: Vec<u64>,
    verts: Vec<u32>,
    total: u64,
}

impl StarSampler {
    fn new(p: &Pairing, range: std::ops::Range<u32>) -> StarSampler {
        let mut cum = Vec::new();
        let mut verts = Vec::new();
        let mut acc = 0u64;
        for v in range {
            let d = p.degree(v) as u64;
            if d >= 3 {
                acc += d * (d - 1) * (d - 2);
                cum.push(acc);
                verts.push(v);
            }
        }
        StarSampler {
            cum,
            verts,
            total: acc,
        }
    }

    /// Uniform labeled 3-star: center plus three ordered distinct points.
    fn draw(&self, p: &Pairing, rng: &mut PldRng) -> Option<(u32, [u32; 3])> {
        if self.total == 0 {
            return None;
        }
        let t = rng.gen_range(0..self.total);
        let k = self.cum.partition_point(|&c| c <= t);
        let v = self.verts[k];
        let d = p.degree(v);
        let base = p.points_of(v).next().unwrap();
        let i1 = rng.gen_range(0..d);
        let mut i2 = rng.gen_range(0..d - 1);
        if i2 >= i1 {
            i2 += 1;
        }
        let mut i3 = rng.gen_range(0..d - 2);
        for low in [i1.min(i2), i1.max(i2)] {
            if i3 >= low {
                i3 += 1;
            }
        }
        Some((v, [base + i1, base + i2, base + i3]))
    }
}

/// Phase 5: drive the double-edge count to zero with type I switchings,
/// interleaved with type III switchings per the solved type distribution,
/// and emit the projected graph from the zero class.
#[allow(clippy::too_many_arguments)]
pub fn phase5(
    p: &mut Pairing,
    d: &DegreeSequence,
    params: &StageParams,
    table: &RhoTable,
    mode: Mode,
    rng: &mut PldRng,
    stats: &mut RunStats,
) -> Result<Vec<(u32, u32)>, PhaseError> {
    let exact = mode == Mode::PldExact;
    let h = params.h as u32;
    let mut doubles: Vec<(u32, u32)> = p
        .mult_entries()
        .filter(|(&(a, b), &m)| a != b && m == 2 && !(a < h && b < h))
        .map(|(&(a, b), _)| (a, b))
        .collect();
    let light_stars = StarSampler::new(p, h..p.n() as u32);
    let all_stars = StarSampler::new(p, 0..p.n() as u32);
    let cap = 10 * table.i1 as u64 + 50;
    let mut iters = 0u64;
    loop {
        let i = doubles.len();
        debug_assert!(i <= table.i1);
        iters += 1;
        stats.iterations.phase5 += 1;
        if iters > cap {
            return Err(PhaseError::Restart(RestartCause::Cap));
        }
        // type selection; leftover mass is a t-rejection in exact mode
        let tau = loop {
            let u: f64 = rng.gen();
            if u < table.rho_i[i] {
                break SwitchType::I;
            } else if u < table.rho_i[i] + table.rho_iii[i] {
                break SwitchType::III;
            } else if exact {
                return Err(PhaseError::Restart(RestartCause::T));
            }
            // rejection-free mode renormalizes over the two implemented types
        };
        match tau {
            SwitchType::I => {
                if i == 0 {
                    let edges = p.project(d).expect("zero class is simple");
                    return Ok(edges);
                }
                let idx = type_i_step(p, h, &doubles, exact, rng, stats)?;
                doubles.swap_remove(idx);
                if exact {
                    let b = doublet_census(p, params, true)
                        .expect("no loops or triples in this phase")
                        .b_lite() as f64;
                    let ml = table.mlow_used[i - 1];
                    if b < ml {
                        return Err(PhaseError::ParamInvalid(format!(
                            "b_lite {b} below its lower bound {ml}"
                        )));
                    }
                    if !bernoulli(rng, ml / b) {
                        return Err(PhaseError::Restart(RestartCause::B));
                    }
                }
            }
            SwitchType::III => {
                let (u, v) = type_iii_step(p, &light_stars, &all_stars, exact, rng, stats)?;
                if exact {
                    let bh = bhat_iii(p, u, v) as f64;
                    let mh = table.mhat_used[i];
                    if bh < mh {
                        return Err(PhaseError::ParamInvalid(format!(
                            "pre-state count {bh} below its lower bound {mh}"
                        )));
                    }
                    if !bernoulli(rng, mh / bh) {
                        return Err(PhaseError::Restart(RestartCause::PreB));
                    }
                    let b = doublet_census(p, params, true)
                        .expect("no loops or triples in this phase")
                        .b_lite() as f64;
                    let ml = table.mlow_used[i];
                    if b < ml {
                        return Err(PhaseError::ParamInvalid(format!(
                            "b_lite {b} below its lower bound {ml}"
                        )));
                    }
                    if !bernoulli(rng, ml / b) {
                        return Err(PhaseError::Restart(RestartCause::B));
                    }
                }
            }
            _ => unreachable!(),
        }
    }
}

/// One type-I attempt: superset draw, validity check, application.
/// Returns the index of the removed double edge.
fn type_i_step(
    p: &mut Pairing,
    h: u32,
    doubles: &[(u32, u32)],
    exact: bool,
    rng: &mut PldRng,
    stats: &mut RunStats,
) -> Result<usize, PhaseError> {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let idx = rng.gen_range(0..doubles.len());
        let (mut u1, mut v1) = doubles[idx];
        if rng.gen::<bool>() {
            std::mem::swap(&mut u1, &mut v1);
        }
        let mut dp: Vec<(u32, u32)> = p
            .points_of(u1)
            .filter(|&pt| p.vertex_of(p.mate(pt)) == v1)
            .map(|pt| (pt, p.mate(pt)))
            .collect();
        debug_assert_eq!(dp.len(), 2);
        if rng.gen::<bool>() {
            dp.swap(0, 1);
        }
        let e5 = rng.gen_range(0..p.total_points() as u32);
        let e7 = rng.gen_range(0..p.total_points() as u32);
        let (m5, m7) = (p.mate(e5), p.mate(e7));
        let u2 = p.vertex_of(e5);
        let v2 = p.vertex_of(m5);
        let u3 = p.vertex_of(e7);
        let v3 = p.vertex_of(m7);
        let valid = u1 >= h
            && distinct6(u1, u2, u3, v1, v2, v3)
            && p.m(u2, v2) == 1
            && p.m(u3, v3) == 1
            && p.m(u1, u2) == 0
            && p.m(u1, u3) == 0
            && p.m(v1, v2) == 0
            && p.m(v1, v3) == 0;
        if valid {
            let (p1, p2) = dp[0];
            let (p3, p4) = dp[1];
            p.rewire(
                &[(p1, p2), (p3, p4), (e5, m5), (e7, m7)],
                &[(p1, e5), (p3, e7), (p2, m5), (p4, m7)],
            );
            stats.switch_counts.phase5_type_i += 1;
            return Ok(idx);
        }
        if exact {
            return Err(PhaseError::Restart(RestartCause::F));
        }
        if attempts >= RESAMPLE_CAP {
            return Err(PhaseError::Restart(RestartCause::Cap));
        }
    }
}

/// One type-III attempt. Returns the doublet vertices (centers first) that
/// the created configuration designates, for the pre-state count.
fn type_iii_step(
    p: &mut Pairing,
    light_stars: &StarSampler,
    all_stars: &StarSampler,
    exact: bool,
    rng: &mut PldRng,
    stats: &mut RunStats,
) -> Result<([u32; 3], [u32; 3]), PhaseError> {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let cand = (light_stars.draw(p, rng), all_stars.draw(p, rng));
        if let (Some((u1, upts)), Some((v1, vpts))) = cand {
            let ul: Vec<u32> = upts.iter().map(|&pt| p.vertex_of(p.mate(pt))).collect();
            let vl: Vec<u32> = vpts.iter().map(|&pt| p.vertex_of(p.mate(pt))).collect();
            let mut verts = vec![u1, v1];
            verts.extend_from_slice(&ul);
            verts.extend_from_slice(&vl);
            let mut all_distinct = true;
            for x in 0..verts.len() {
                for y in (x + 1)..verts.len() {
                    if verts[x] == verts[y] {
                        all_distinct = false;
                    }
                }
            }
            let singles = ul.iter().all(|&x| p.m(u1, x) == 1)
                && vl.iter().all(|&x| p.m(v1, x) == 1);
            let nonadj = p.m(u1, v1) == 0
                && p.m(ul[0], vl[0]) == 0
                && p.m(ul[1], vl[1]) == 0
                && p.m(ul[2], vl[2]) == 0;
            if all_distinct && singles && nonadj {
                let c = upts[2];
                let t = vpts[2];
                let (mc, mt) = (p.mate(c), p.mate(t));
                p.rewire(&[(c, mc), (t, mt)], &[(c, t), (mc, mt)]);
                stats.switch_counts.phase5_type_iii += 1;
                return Ok(([u1, ul[0], ul[1]], [v1, vl[0], vl[1]]));
            }
        }
        if exact {
            return Err(PhaseError::Restart(RestartCause::F));
        }
        if attempts >= RESAMPLE_CAP {
            return Err(PhaseError::Restart(RestartCause::Cap));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree::{derive_params, DegreeSequence};

    fn seq(raw: &[i64]) -> DegreeSequence {
        DegreeSequence::load_and_validate(raw).unwrap()
    }

    #[test]
    fn rho_table_boundary_and_row_sum() {
        let d = seq(&[3, 2, 2, 2, 1]);
        let params = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        let t = compute_rho_table(&params).unwrap();
        assert_eq!(t.x[t.i1], 1.0);
        assert_eq!(t.rho_iii[t.i1], 0.0);
        for i in 0..=t.i1 {
            let s = t.rho_i[i] + t.rho_iii[i] + t.xi_eff;
            assert!((s - 1.0).abs() < 1e-15, "row {i} sums to {s}");
            assert!(t.x[i] >= 1.0);
        }
    }

    #[test]
    fn rho_table_degenerate_single_class() {
        // force i1 = 0 by a sequence with no light second moment
        let d = seq(&[1, 1]);
        let mut params = derive_params(&d, 2.9, 1.0, Some(0.37), true).unwrap();
        params.b_d = 0.0;
        let t = compute_rho_table(&params).unwrap();
        assert_eq!(t.i1, 0);
        assert_eq!(t.x[0], 1.0);
        assert!((t.rho_i[0] - (1.0 - t.xi_eff)).abs() < 1e-15);
    }

    #[test]
    fn doublet_partition_identity_on_cycle() {
        // 6-cycle on six degree-2 vertices, all light.
        let d = seq(&[2, 2, 2, 2, 2, 2]);
        let mut params = derive_params(&d, 2.9, 1.0, Some(0.37), true).unwrap();
        params.h = 0;
        // cycle 0-1-2-3-4-5-0 in points: vertex v has points 2v, 2v+1
        let mate_pairs: Vec<u32> = vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0];
        let p = Pairing::from_matched_points(&d, &mate_pairs);
        p.validate().unwrap();
        let c = doublet_census(&p, &params, false).unwrap();
        let m2l2 = (params.mom.m[2] * params.mom.l[2]) as u64;
        assert_eq!(c.total(), m2l2);
        let lite = doublet_census(&p, &params, true).unwrap();
        assert_eq!(lite.z[0], c.z[0]);
        assert_eq!(lite.z[1], c.z[1]);
    }

    #[test]
    fn census_guard_rejects_loops() {
        let d = seq(&[2, 1, 1]);
        // loop at v0, single 1-2
        let p = Pairing::from_matched_points(&d, &[0, 1, 2, 3]);
        let mut params = derive_params(&d, 2.9, 1.0, Some(0.37), true).unwrap();
        params.h = 0;
        assert_eq!(
            doublet_census(&p, &params, true),
            Err(LightError::CensusPrecondition)
        );
    }
}
