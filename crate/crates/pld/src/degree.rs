//! Degree-sequence validation, falling-factorial moments, and the derived
//! scalar parameters that drive the sampler stages.

use thiserror::Error;

/// Feasibility threshold for the automatic delta window: `21/10 + sqrt(61)/10`.
pub const GAMMA_THRESHOLD: f64 = 2.881024967590665;

#[derive(Debug, Error, PartialEq)]
pub enum DegreeError {
    #[error("empty degree sequence")]
    Empty,
    #[error("degree sum is odd")]
    OddSum,
    #[error("degree {0} is not positive")]
    NonPositiveDegree(i64),
    #[error("gamma {0} outside (2.5, 3); supply --delta and --override-unsafe to proceed")]
    GammaOutOfRange(f64),
    #[error("delta window for gamma {gamma} is empty; supply --delta and --override-unsafe to proceed")]
    EmptyDeltaWindow { gamma: f64 },
    #[error("delta {delta} lies outside the admissible window ({lo}, {hi})")]
    DeltaOutOfWindow { delta: f64, lo: f64, hi: f64 },
}

/// A validated degree sequence, held in nonincreasing order.
///
/// The permutation back to the caller's vertex order is recorded so emitted
/// graphs use the original labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeSequence {
    degrees: Vec<u32>,
    orig_index: Vec<u32>,
}

impl DegreeSequence {
    pub fn load_and_validate(raw: &[i64]) -> Result<Self, DegreeError> {
        if raw.is_empty() {
            return Err(DegreeError::Empty);
        }
        for &d in raw {
            if d < 1 {
                return Err(DegreeError::NonPositiveDegree(d));
            }
        }
        let sum: i64 = raw.iter().sum();
        if sum % 2 != 0 {
            return Err(DegreeError::OddSum);
        }
        let mut idx: Vec<u32> = (0..raw.len() as u32).collect();
        // Stable order on ties keeps the canonicalization deterministic.
        idx.sort_by_key(|&i| std::cmp::Reverse(raw[i as usize]));
        let degrees = idx.iter().map(|&i| raw[i as usize] as u32).collect();
        Ok(DegreeSequence {
            degrees,
            orig_index: idx,
        })
    }

    /// Parse a whitespace-separated degree file; lines starting with '#' are ignored.
    pub fn parse_text(text: &str) -> Result<Self, DegreeError> {
        let mut raw = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                let v: i64 = tok
                    .parse()
                    .map_err(|_| DegreeError::NonPositiveDegree(-1))?;
                raw.push(v);
            }
        }
        Self::load_and_validate(&raw)
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    /// Maximum degree.
    pub fn delta(&self) -> u32 {
        self.degrees[0]
    }

    /// Degrees in canonical (nonincreasing) order; vertex ids are 0-based ranks.
    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn degree(&self, v: usize) -> u32 {
        self.degrees[v]
    }

    /// 1-based label of canonical vertex `v` in the caller's original order.
    pub fn original_label(&self, v: usize) -> u32 {
        self.orig_index[v] + 1
    }

    /// Total number of points in the pairing model (sum of degrees).
    pub fn total_points(&self) -> u64 {
        self.degrees.iter().map(|&d| d as u64).sum()
    }
}

/// Falling factorial `[x]_k = x (x-1) ... (x-k+1)` in exact integers.
pub fn falling(x: u64, k: u32) -> u128 {
    let mut acc: u128 = 1;
    for t in 0..k as u64 {
        if x < t + 1 {
            return 0;
        }
        acc *= (x - t) as u128;
    }
    acc
}

/// Exact moments `M_k`, split over the heavy prefix into `H_k` and `L_k`,
/// for k = 1..=6 (index 0 unused).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Moments {
    pub m: [u128; 7],
    pub h: [u128; 7],
    pub l: [u128; 7],
}

impl Moments {
    pub fn m1(&self) -> u64 {
        self.m[1] as u64
    }
}

/// `heavy_count` is the size of the heavy prefix of the sorted sequence.
pub fn moments(d: &DegreeSequence, heavy_count: usize) -> Moments {
    let mut m = [0u128; 7];
    let mut h = [0u128; 7];
    for (v, &deg) in d.degrees().iter().enumerate() {
        for k in 1..=6u32 {
            let f = falling(deg as u64, k);
            m[k as usize] += f;
            if v < heavy_count {
                h[k as usize] += f;
            }
        }
    }
    let mut l = [0u128; 7];
    for k in 1..=6 {
        l[k] = m[k] - h[k];
    }
    Moments { m, h, l }
}

/// Outcome of the power-law distribution-bound check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlibReport {
    pub ok: bool,
    /// Smallest i in 1..=Delta violating the tail bound, if any.
    pub first_violation: Option<u32>,
}

/// Checks `#{t : d_t >= i} <= K n i^(1-gamma)` for every i in 1..=Delta.
pub fn plib_check(d: &DegreeSequence, gamma: f64, k_const: f64) -> PlibReport {
    let n = d.n() as f64;
    let degs = d.degrees();
    // degs is nonincreasing, so the count for threshold i is a prefix length.
    let mut count = degs.len();
    let mut i = 1u32;
    let delta = d.delta();
    while i <= delta {
        while count > 0 && degs[count - 1] < i {
            count -= 1;
        }
        let bound = k_const * n * (i as f64).powf(1.0 - gamma);
        if count as f64 > bound {
            return PlibReport {
                ok: false,
                first_violation: Some(i),
            };
        }
        i += 1;
    }
    PlibReport {
        ok: true,
        first_violation: None,
    }
}

/// Admissible open interval for delta at a given gamma in (2.5, 3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaWindow {
    pub lo: f64,
    pub hi: f64,
}

impl DeltaWindow {
    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn contains(&self, delta: f64) -> bool {
        delta > self.lo && delta < self.hi
    }
}

pub fn delta_window(gamma: f64) -> Result<DeltaWindow, DegreeError> {
    if !(2.5..3.0).contains(&gamma) || gamma <= 2.5 {
        return Err(DegreeError::GammaOutOfRange(gamma));
    }
    let g = gamma;
    let lo = [
        (4.0 / (g - 1.0) - 2.0) / (g - 2.0),
        (3.0 - g) / (g - 2.0),
        1.0 / (2.0 * g - 3.0),
    ]
    .into_iter()
    .fold(f64::MIN, f64::max);
    let hi = [
        0.5,
        1.0 - 1.0 / (g - 1.0),
        2.0 / (7.0 - g),
        (2.0 - 2.0 / (g - 1.0) - (2.0 * g - 3.0) / ((g - 1.0) * (g - 1.0))) / (3.0 - g),
        (2.0 - 3.0 / (g - 1.0)) / (4.0 - g),
    ]
    .into_iter()
    .fold(f64::MAX, f64::min);
    Ok(DeltaWindow { lo, hi })
}

/// All scalar parameters derived from (d, gamma, K, delta).
#[derive(Debug, Clone)]
pub struct StageParams {
    pub gamma: f64,
    pub k_const: f64,
    pub delta: f64,
    /// Heavy cutoff: the heavy set is the first `h` vertices in sorted order.
    pub h: usize,
    pub eta: f64,
    /// Structure-count bounds U_k for k = 1..=6 (index 0 unused).
    pub u: [f64; 7],
    pub b_l: f64,
    pub b_d: f64,
    pub b_t: f64,
    pub xi_raw: f64,
    pub xi_eff: f64,
    pub mom: Moments,
    pub n: usize,
    pub d1: u32,
    pub dh: u32,
}

impl StageParams {
    pub fn m1(&self) -> u64 {
        self.mom.m1()
    }

    pub fn is_heavy(&self, v: usize) -> bool {
        v < self.h
    }
}

pub fn derive_params(
    d: &DegreeSequence,
    gamma: f64,
    k_const: f64,
    delta_opt: Option<f64>,
    override_unsafe: bool,
) -> Result<StageParams, DegreeError> {
    let delta = match delta_window(gamma) {
        Ok(w) => match delta_opt {
            Some(dl) if w.contains(dl) => dl,
            Some(dl) if override_unsafe => dl,
            Some(dl) => {
                return Err(DegreeError::DeltaOutOfWindow {
                    delta: dl,
                    lo: w.lo,
                    hi: w.hi,
                })
            }
            None if !w.is_empty() => w.lo + 0.05 * (w.hi - w.lo),
            None => return Err(DegreeError::EmptyDeltaWindow { gamma }),
        },
        Err(e) => match delta_opt {
            Some(dl) if override_unsafe => dl,
            _ => return Err(e),
        },
    };

    let n = d.n();
    let nf = n as f64;
    let h_raw = nf.powf(1.0 - delta * (gamma - 1.0));
    let h = (h_raw.ceil() as usize).clamp(1, n);
    let mom = moments(d, h);
    let m1 = mom.m[1] as f64;
    let m2 = mom.m[2] as f64;
    let h1 = mom.h[1] as f64;
    let eta = (m2 * m2 * h1 / (m1 * m1 * m1)).sqrt();

    let mut u = [0.0f64; 7];
    u[1] = (k_const * nf).powf((2.0 * gamma - 3.0) / ((gamma - 1.0) * (gamma - 1.0)));
    for k in 2..=6 {
        let kf = k as f64;
        u[k] = gamma * k_const.powf(kf / (gamma - 1.0)) / (kf + 1.0 - gamma)
            * nf.powf(1.0 - delta * (gamma - kf - 1.0));
    }

    let l2 = mom.l[2] as f64;
    let l3 = mom.l[3] as f64;
    let m3 = mom.m[3] as f64;
    let b_l = 4.0 * l2 / m1;
    let b_d = 4.0 * l2 * m2 / (m1 * m1);
    let b_t = 2.0 * l3 * m3 / (m1 * m1 * m1);
    let xi_raw = 32.0 * m2 * m2 / (m1 * m1 * m1);
    let xi_eff = xi_raw.min(0.5);

    Ok(StageParams {
        gamma,
        k_const,
        delta,
        h,
        eta,
        u,
        b_l,
        b_d,
        b_t,
        xi_raw,
        xi_eff,
        mom,
        n,
        d1: d.delta(),
        dh: d.degree(h - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_minimal() {
        let d = DegreeSequence::load_and_validate(&[1, 1]).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.delta(), 1);
        assert_eq!(d.total_points(), 2);
    }

    #[test]
    fn load_sorts_and_records_permutation() {
        let d = DegreeSequence::load_and_validate(&[2, 1, 3, 2]).unwrap();
        assert_eq!(d.degrees(), &[3, 2, 2, 1]);
        assert_eq!(d.original_label(0), 3); // the 3 came from raw position 2
        assert_eq!(d.original_label(1), 1);
        assert_eq!(d.original_label(2), 4);
        assert_eq!(d.original_label(3), 2);
    }

    #[test]
    fn load_rejects_bad_input() {
        assert_eq!(
            DegreeSequence::load_and_validate(&[3, 1, 1]),
            Err(DegreeError::OddSum)
        );
        assert_eq!(
            DegreeSequence::load_and_validate(&[]),
            Err(DegreeError::Empty)
        );
        assert_eq!(
            DegreeSequence::load_and_validate(&[2, 0]),
            Err(DegreeError::NonPositiveDegree(0))
        );
    }

    #[test]
    fn parse_text_skips_comments() {
        let d = DegreeSequence::parse_text("# header\n3 2\n2 1\n").unwrap();
        assert_eq!(d.degrees(), &[3, 2, 2, 1]);
    }

    #[test]
    fn moments_examples() {
        let d = DegreeSequence::load_and_validate(&[3, 2, 2, 1]).unwrap();
        let m0 = moments(&d, 0);
        assert_eq!(m0.m[1], 8);
        assert_eq!(m0.m[2], 10);
        assert_eq!(m0.m[3], 6);
        assert_eq!(m0.l, m0.m);

        let m1 = moments(&d, 1);
        assert_eq!(m1.h[1], 3);
        assert_eq!(m1.h[2], 6);
        assert_eq!(m1.l[1], 5);
        assert_eq!(m1.l[2], 4);

        let ones = DegreeSequence::load_and_validate(&[1, 1]).unwrap();
        assert_eq!(moments(&ones, 0).m[2], 0);
    }

    #[test]
    fn plib_examples() {
        let d = DegreeSequence::load_and_validate(&[3, 2, 2, 1, 1, 1]).unwrap();
        assert!(plib_check(&d, 2.9, 2.0).ok);

        let flat = DegreeSequence::load_and_validate(&[1; 10].map(|x: i32| x as i64)).unwrap();
        assert!(plib_check(&flat, 2.9, 1.0).ok);

        // 4 vertices of degree >= 2 already exceeds 4 * 2^(1-2.9) ~ 1.07.
        let spike = DegreeSequence::load_and_validate(&[5, 5, 5, 5]).unwrap();
        let rep = plib_check(&spike, 2.9, 1.0);
        assert!(!rep.ok);
        assert_eq!(rep.first_violation, Some(2));
    }

    #[test]
    fn plib_monotone_in_k() {
        let d = DegreeSequence::load_and_validate(&[4, 3, 2, 2, 1, 1, 1, 1, 1]).unwrap();
        for k in [0.5, 1.0, 1.5, 2.0, 4.0] {
            if plib_check(&d, 2.9, k).ok {
                assert!(plib_check(&d, 2.9, k * 2.0).ok);
            }
        }
    }

    #[test]
    fn delta_window_values() {
        let w = delta_window(2.9).unwrap();
        assert!((w.lo - 0.357143).abs() < 1e-6);
        assert!((w.hi - 0.382775).abs() < 1e-6);
        assert!(!w.is_empty());

        let w28 = delta_window(2.8).unwrap();
        assert!((w28.lo - 1.0 / 2.6).abs() < 1e-6);
        assert!(w28.is_empty());

        let wb = delta_window(GAMMA_THRESHOLD).unwrap();
        assert!((wb.hi - wb.lo).abs() < 1e-6);
    }

    #[test]
    fn delta_window_threshold_scan() {
        let mut g = 2.5001;
        while g < 2.9999 {
            let w = delta_window(g).unwrap();
            if g > GAMMA_THRESHOLD + 1e-9 {
                assert!(!w.is_empty(), "window empty at gamma={g}");
            }
            if g < GAMMA_THRESHOLD - 1e-9 {
                assert!(w.is_empty(), "window nonempty at gamma={g}");
            }
            g += 1e-4;
        }
    }

    #[test]
    fn derive_params_defaults() {
        let raw: Vec<i64> = (0..1000).map(|i| if i < 10 { 5 } else { 1 }).collect();
        let mut raw = raw;
        if raw.iter().sum::<i64>() % 2 != 0 {
            raw[999] = 2;
        }
        let d = DegreeSequence::load_and_validate(&raw).unwrap();
        let p = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        assert!((p.delta - 0.358424).abs() < 1e-5);
        let expect_h = (1000f64.powf(1.0 - p.delta * 1.9)).ceil() as usize;
        assert_eq!(p.h, expect_h);
        assert!(p.h <= d.n());
    }

    #[test]
    fn xi_clamp_example() {
        let d = DegreeSequence::load_and_validate(&[2, 2, 2]).unwrap();
        let p = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        assert!((p.xi_raw - 16.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.xi_eff, 0.5);
    }

    #[test]
    fn eta_zero_when_no_heavy_mass() {
        let d = DegreeSequence::load_and_validate(&[1, 1, 1, 1]).unwrap();
        let mom = moments(&d, 0);
        let eta = ((mom.m[2] * mom.m[2] * mom.h[1]) as f64
            / (mom.m[1] * mom.m[1] * mom.m[1]) as f64)
            .sqrt();
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn derive_params_window_errors() {
        let d = DegreeSequence::load_and_validate(&[2, 2, 2, 1, 1]).unwrap();
        match derive_params(&d, 2.8, 1.0, None, false) {
            Err(DegreeError::EmptyDeltaWindow { .. }) => {}
            other => panic!("expected EmptyDeltaWindow, got {other:?}"),
        }
        // Explicit delta plus override proceeds even for an empty window.
        assert!(derive_params(&d, 2.8, 1.0, Some(0.36), true).is_ok());
        match derive_params(&d, 2.9, 1.0, Some(0.9), false) {
            Err(DegreeError::DeltaOutOfWindow { .. }) => {}
            other => panic!("expected DeltaOutOfWindow, got {other:?}"),
        }
        match derive_params(&d, 3.5, 1.0, None, false) {
            Err(DegreeError::GammaOutOfRange(_)) => {}
            other => panic!("expected GammaOutOfRange, got {other:?}"),
        }
        assert!(derive_params(&d, 3.5, 1.0, Some(0.3), true).is_ok());
    }

    #[test]
    fn derive_params_deterministic() {
        let d = DegreeSequence::load_and_validate(&[4, 3, 2, 2, 1, 1, 1]).unwrap();
        let a = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        let b = derive_params(&d, 2.9, 1.0, None, false).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.h, b.h);
        assert_eq!(a.eta, b.eta);
        assert_eq!(a.u, b.u);
    }
}
