//! The pairing model: vertices are bins of labeled points, a pairing is a
//! perfect matching of the points, and contracting bins yields a multigraph.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::degree::{DegreeSequence, StageParams};

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("pairing projects to a non-simple graph")]
    NotSimple,
}

/// A perfect matching over labeled points with an incrementally maintained
/// vertex-pair multiplicity index. Loops at vertex v are stored at (v, v) and
/// count pairs, so a vertex with one loop has m(v, v) = 1 and uses two points.
#[derive(Debug, Clone)]
pub struct Pairing {
    mate: Vec<u32>,
    vertex_of: Vec<u32>,
    vstart: Vec<u32>,
    mult: HashMap<(u32, u32), u32>,
    n: usize,
}

fn vkey(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Pairing {
    /// Uniformly random pairing: shuffle all points, pair them consecutively.
    pub fn random(d: &DegreeSequence, rng: &mut impl Rng) -> Pairing {
        let total = d.total_points() as usize;
        let mut pts: Vec<u32> = (0..total as u32).collect();
        pts.shuffle(rng);
        Self::from_matched_points(d, &pts)
    }

    /// Build from a list of points where positions (2k, 2k+1) are mates.
    pub fn from_matched_points(d: &DegreeSequence, pts: &[u32]) -> Pairing {
        let total = d.total_points() as usize;
        assert_eq!(pts.len(), total);
        let mut mate = vec![u32::MAX; total];
        for pair in pts.chunks_exact(2) {
            mate[pair[0] as usize] = pair[1];
            mate[pair[1] as usize] = pair[0];
        }
        Self::from_mate_vector(d, mate)
    }

    pub fn from_mate_vector(d: &DegreeSequence, mate: Vec<u32>) -> Pairing {
        let n = d.n();
        let mut vstart = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        vstart.push(0);
        for &deg in d.degrees() {
            acc += deg;
            vstart.push(acc);
        }
        let mut vertex_of = vec![0u32; acc as usize];
        for v in 0..n {
            for p in vstart[v]..vstart[v + 1] {
                vertex_of[p as usize] = v as u32;
            }
        }
        let mut p = Pairing {
            mate,
            vertex_of,
            vstart,
            mult: HashMap::new(),
            n,
        };
        p.mult = p.recount_mult();
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total_points(&self) -> usize {
        self.mate.len()
    }

    pub fn mate(&self, p: u32) -> u32 {
        self.mate[p as usize]
    }

    pub fn vertex_of(&self, p: u32) -> u32 {
        self.vertex_of[p as usize]
    }

    pub fn degree(&self, v: u32) -> u32 {
        self.vstart[v as usize + 1] - self.vstart[v as usize]
    }

    pub fn points_of(&self, v: u32) -> std::ops::Range<u32> {
        self.vstart[v as usize]..self.vstart[v as usize + 1]
    }

    /// Multiplicity of the vertex pair (a, b); loops at (v, v) count pairs.
    pub fn m(&self, a: u32, b: u32) -> u32 {
        *self.mult.get(&vkey(a, b)).unwrap_or(&0)
    }

    pub fn mult_entries(&self) -> impl Iterator<Item = (&(u32, u32), &u32)> {
        self.mult.iter()
    }

    /// Rewires the matching: removes the given pairs and installs the new ones,
    /// updating the multiplicity index incrementally. Point sets must agree.
    pub fn rewire(&mut self, removed: &[(u32, u32)], added: &[(u32, u32)]) {
        debug_assert_eq!(removed.len(), added.len());
        for &(p, q) in removed {
            debug_assert_eq!(self.mate[p as usize], q);
            let key = vkey(self.vertex_of(p), self.vertex_of(q));
            let e = self.mult.get_mut(&key).expect("pair missing from index");
            *e -= 1;
            if *e == 0 {
                self.mult.remove(&key);
            }
        }
        for &(p, q) in added {
            self.mate[p as usize] = q;
            self.mate[q as usize] = p;
            *self
                .mult
                .entry(vkey(self.vertex_of(p), self.vertex_of(q)))
                .or_insert(0) += 1;
        }
    }

    /// Full recount of the multiplicity index; used for cross-checks.
    pub fn recount_mult(&self) -> HashMap<(u32, u32), u32> {
        let mut mult = HashMap::new();
        for p in 0..self.mate.len() as u32 {
            let q = self.mate[p as usize];
            if p < q {
                *mult
                    .entry(vkey(self.vertex_of(p), self.vertex_of(q)))
                    .or_insert(0) += 1;
            }
        }
        mult
    }

    /// Structural integrity check: involution, degree conservation, and the
    /// incremental index against a recount.
    pub fn validate(&self) -> Result<(), String> {
        for p in 0..self.mate.len() as u32 {
            let q = self.mate[p as usize];
            if q == p {
                return Err(format!("fixed point at {p}"));
            }
            if self.mate[q as usize] != p {
                return Err(format!("mate not involutive at {p}"));
            }
        }
        if self.recount_mult() != self.mult {
            return Err("multiplicity index out of sync".into());
        }
        for v in 0..self.n as u32 {
            let mut deg = 0;
            for (&(a, b), &m) in &self.mult {
                if a == v && b == v {
                    deg += 2 * m;
                } else if a == v || b == v {
                    deg += m;
                }
            }
            if deg != self.degree(v) {
                return Err(format!("degree mismatch at vertex {v}"));
            }
        }
        Ok(())
    }

    pub fn is_simple(&self) -> bool {
        self.mult.iter().all(|(&(a, b), &m)| a != b && m == 1)
    }

    /// Canonical key: sorted list of point pairs.
    pub fn canonical_key(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = (0..self.mate.len() as u32)
            .filter(|&p| p < self.mate[p as usize])
            .map(|p| (p, self.mate[p as usize]))
            .collect();
        pairs.sort_unstable();
        pairs
    }

    /// Edge list of the projected graph in original 1-based labels,
    /// lexicographically sorted with u < v per edge.
    pub fn project(&self, d: &DegreeSequence) -> Result<Vec<(u32, u32)>, PairingError> {
        let mut edges = Vec::with_capacity(self.mate.len() / 2);
        for (&(a, b), &m) in &self.mult {
            if a == b || m != 1 {
                return Err(PairingError::NotSimple);
            }
            let la = d.original_label(a as usize);
            let lb = d.original_label(b as usize);
            edges.push((la.min(lb), la.max(lb)));
        }
        edges.sort_unstable();
        Ok(edges)
    }
}

/// Multigraph census relative to a heavy cutoff.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Census {
    /// Light single loops.
    pub l_count: u64,
    /// Light double edges.
    pub d_count: u64,
    /// Light triple edges.
    pub t_count: u64,
    /// Heavy defects: loops at heavy vertices and heavy-heavy multiplicities >= 2.
    pub heavy_multi: Vec<(u32, u32, u32)>,
    /// Light multiplicities >= 4 and light multi-loops.
    pub other_bad: Vec<(u32, u32, u32)>,
}

pub fn census(p: &Pairing, params: &StageParams) -> Census {
    let h = params.h as u32;
    let mut c = Census::default();
    for (&(a, b), &m) in p.mult_entries() {
        let heavy_edge = a < h && b < h;
        if a == b {
            if heavy_edge {
                c.heavy_multi.push((a, b, m));
            } else if m == 1 {
                c.l_count += 1;
            } else {
                c.other_bad.push((a, b, m));
            }
        } else if heavy_edge {
            if m >= 2 {
                c.heavy_multi.push((a, b, m));
            }
        } else {
            match m {
                1 => {}
                2 => c.d_count += 1,
                3 => c.t_count += 1,
                _ => c.other_bad.push((a, b, m)),
            }
        }
    }
    c
}

/// Number of points of heavy vertex `i` lying in heavy loops or heavy
/// multiple edges whose other end is not in `j`.
pub fn w_ij(p: &Pairing, i: u32, j: u32, h: u32) -> u64 {
    let mut w = 0u64;
    for pt in p.points_of(i) {
        let v = p.vertex_of(p.mate(pt));
        if v == i {
            w += 1; // heavy loop point (i is heavy)
        } else if v < h && v != j && p.m(i, v) >= 2 {
            w += 1;
        }
    }
    w
}

/// Number of pairs in heavy non-loop multiple edges with one end in `i`.
pub fn w_i(p: &Pairing, i: u32, h: u32) -> u64 {
    let mut w = 0u64;
    for pt in p.points_of(i) {
        let v = p.vertex_of(p.mate(pt));
        if v != i && v < h && p.m(i, v) >= 2 {
            w += 1;
        }
    }
    w
}

/// Heavy-pair multiplicity record: off-diagonal entries with m >= 2 and
/// diagonal (loop) entries with m >= 1, over heavy vertices only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureMatrix {
    entries: std::collections::BTreeMap<(u32, u32), u32>,
}

impl SignatureMatrix {
    pub fn of(p: &Pairing, h: u32) -> SignatureMatrix {
        let mut entries = std::collections::BTreeMap::new();
        for i in 0..h.min(p.n() as u32) {
            for pt in p.points_of(i) {
                let v = p.vertex_of(p.mate(pt));
                if v >= i && v < h {
                    let m = p.m(i, v);
                    if (v == i && m >= 1) || (v != i && m >= 2) {
                        entries.insert((i, v), m);
                    }
                }
            }
        }
        SignatureMatrix { entries }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(u32, u32), &u32)> {
        self.entries.iter()
    }

    pub fn get(&self, i: u32, j: u32) -> u32 {
        *self.entries.get(&vkey(i, j)).unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// W(i, j) recomputed from the signature alone.
    pub fn w_ij(&self, i: u32, j: u32) -> u64 {
        let mut w = 0u64;
        for (&(a, b), &m) in &self.entries {
            if a == i && b == i {
                w += 2 * m as u64;
            } else if (a == i || b == i) && a != b {
                let other = if a == i { b } else { a };
                if other != j {
                    w += m as u64;
                }
            }
        }
        w
    }

    /// W(i) recomputed from the signature alone (non-loop entries only).
    pub fn w_i(&self, i: u32) -> u64 {
        let mut w = 0u64;
        for (&(a, b), &m) in &self.entries {
            if a != b && (a == i || b == i) {
                w += m as u64;
            }
        }
        w
    }
}

/// Membership in the admissible initial set. When M2 < M1 the admissible set
/// is just the simple pairings.
pub fn membership_phi0(p: &Pairing, params: &StageParams) -> bool {
    let mom = &params.mom;
    if mom.m[2] < mom.m[1] {
        return p.is_simple();
    }
    let h = params.h as u32;
    let sig = SignatureMatrix::of(p, h);
    let m1 = mom.m[1] as f64;
    let m2 = mom.m[2] as f64;
    let mut multi_sum = 0u64;
    let mut loop_sum = 0u64;
    for (&(i, j), &m) in sig.entries() {
        if i == j {
            loop_sum += m as u64;
            let wi = sig.w_i(i);
            if (m as u64 * wi) as f64 > params.eta * p.degree(i) as f64 {
                return false;
            }
        } else {
            multi_sum += m as u64;
            let wij = sig.w_ij(i, j);
            let wji = sig.w_ij(j, i);
            if (m as u64 * wij) as f64 > params.eta * p.degree(i) as f64
                || (m as u64 * wji) as f64 > params.eta * p.degree(j) as f64
            {
                return false;
            }
        }
    }
    if multi_sum as f64 > 4.0 * m2 * m2 / (m1 * m1) {
        return false;
    }
    if loop_sum as f64 > 4.0 * m2 / m1 {
        return false;
    }
    true
}

/// Membership in the bounded-defect set entered after the heavy phases.
pub fn membership_a0(c: &Census, params: &StageParams) -> bool {
    c.heavy_multi.is_empty()
        && c.other_bad.is_empty()
        && (c.l_count as f64) <= params.b_l
        && (c.d_count as f64) <= params.b_d
        && (c.t_count as f64) <= params.b_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree::{derive_params, DegreeSequence};
    use crate::rng::master_rng;
    use std::collections::HashMap as Map;

    fn seq(raw: &[i64]) -> DegreeSequence {
        DegreeSequence::load_and_validate(raw).unwrap()
    }

    #[test]
    fn unique_pairing_for_two_ones() {
        let d = seq(&[1, 1]);
        let mut rng = master_rng(1);
        let p = Pairing::random(&d, &mut rng);
        assert_eq!(p.m(0, 1), 1);
        assert_eq!(p.project(&d).unwrap(), vec![(1, 2)]);
    }

    #[test]
    fn forced_loop_for_single_vertex() {
        let d = seq(&[2]);
        let mut rng = master_rng(2);
        let p = Pairing::random(&d, &mut rng);
        assert_eq!(p.m(0, 0), 1);
        assert_eq!(p.project(&d), Err(PairingError::NotSimple));
    }

    #[test]
    fn four_singletons_uniform_over_three_matchings() {
        let d = seq(&[1, 1, 1, 1]);
        let mut rng = master_rng(3);
        let mut counts: Map<Vec<(u32, u32)>, u64> = Map::new();
        let trials = 300_000;
        for _ in 0..trials {
            let p = Pairing::random(&d, &mut rng);
            *counts.entry(p.canonical_key()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        for &c in counts.values() {
            let f = c as f64 / trials as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn census_classifies_defects() {
        // d = (2, 2): both points of v0 matched into v1 -> one double edge.
        let d = seq(&[2, 2]);
        let p = Pairing::from_matched_points(&d, &[0, 2, 1, 3]);
        let params = derive_params(&d, 2.9, 1.0, Some(0.36), true).unwrap();
        // force an all-light view by building a census at cutoff 0
        let mut pz = params.clone();
        pz.h = 0;
        let c = census(&p, &pz);
        assert_eq!((c.d_count, c.l_count, c.t_count), (1, 0, 0));

        // heavy loop classification: d = (2) with the vertex heavy
        let dl = seq(&[2]);
        let pl = Pairing::from_matched_points(&dl, &[0, 1]);
        let paramsl = derive_params(&dl, 2.9, 1.0, Some(0.36), true).unwrap();
        assert_eq!(paramsl.h, 1);
        let cl = census(&pl, &paramsl);
        assert_eq!(cl.heavy_multi, vec![(0, 0, 1)]);
        assert_eq!(cl.l_count, 0);

        // light triple edge
        let dt = seq(&[3, 3]);
        let pt = Pairing::from_matched_points(&dt, &[0, 3, 1, 4, 2, 5]);
        let mut pzt = derive_params(&dt, 2.9, 1.0, Some(0.36), true).unwrap();
        pzt.h = 0;
        let ct = census(&pt, &pzt);
        assert_eq!(ct.t_count, 1);
    }

    #[test]
    fn projection_of_triangle() {
        let d = seq(&[2, 2, 2]);
        // points: v0 {0,1}, v1 {2,3}, v2 {4,5}; triangle 0-2, 3-4, 5-1
        let p = Pairing::from_matched_points(&d, &[0, 2, 3, 4, 5, 1]);
        assert_eq!(p.project(&d).unwrap(), vec![(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn phi0_simple_pairing_accepted_in_both_regimes() {
        // M2 >= M1 regime
        let d = seq(&[3, 2, 2, 2, 1]);
        let params = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        assert!(params.mom.m[2] >= params.mom.m[1]);
        let mut rng = master_rng(7);
        loop {
            let p = Pairing::random(&d, &mut rng);
            if p.is_simple() {
                assert!(membership_phi0(&p, &params));
                break;
            }
        }
        // M2 < M1 regime: predicate reduces to simplicity
        let d2 = seq(&[2, 2, 2, 1, 1]);
        let params2 = derive_params(&d2, 2.9, 1.0, None, false).unwrap();
        assert!(params2.mom.m[2] < params2.mom.m[1]);
        let mut rng2 = master_rng(8);
        for _ in 0..50 {
            let p = Pairing::random(&d2, &mut rng2);
            assert_eq!(membership_phi0(&p, &params2), p.is_simple());
        }
    }

    #[test]
    fn phi0_w_values_match_brute_force() {
        // d = (4,4,1,1,1,1), heavy = {0,1}: m(0,1) = 2 plus a heavy loop at 0.
        let d = seq(&[4, 4, 1, 1, 1, 1]);
        // v0 points 0..4, v1 points 4..8, then 8..12 singletons.
        // pairs: 0-4, 1-5 (double 0-1), 2-3 (loop at v0), 6-8, 7-9, 10-11
        let p = Pairing::from_matched_points(&d, &[0, 4, 1, 5, 2, 3, 6, 8, 7, 9, 10, 11]);
        p.validate().unwrap();
        let h = 2u32;
        let sig = SignatureMatrix::of(&p, h);
        assert_eq!(sig.get(0, 1), 2);
        assert_eq!(sig.get(0, 0), 1);
        // brute force from the pair list
        for i in 0..h {
            for j in 0..h {
                if i == j {
                    continue;
                }
                assert_eq!(sig.w_ij(i, j), w_ij(&p, i, j, h), "w_ij({i},{j})");
            }
            assert_eq!(sig.w_i(i), w_i(&p, i, h), "w_i({i})");
        }
        // the loop at v0 contributes both its points to W(0, j)
        assert_eq!(w_ij(&p, 0, 1, h), 2);
        // toward a non-neighbor the double edge also counts
        assert_eq!(w_ij(&p, 0, 2, h), 4);
    }

    #[test]
    fn rewire_keeps_index_consistent() {
        let d = seq(&[3, 2, 2, 1]);
        let mut rng = master_rng(11);
        for _ in 0..200 {
            let mut p = Pairing::random(&d, &mut rng);
            // swap two random pairs if distinct
            let a = rng.gen_range(0..p.total_points()) as u32;
            let b = rng.gen_range(0..p.total_points()) as u32;
            let (am, bm) = (p.mate(a), p.mate(b));
            if a != b && am != b && a != bm {
                p.rewire(&[(a, am), (b, bm)], &[(a, b), (am, bm)]);
                p.validate().unwrap();
            }
        }
    }
}
