//! Beamformer recovery from a relaxed covariance.

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PSD_FLOOR, TIGHTNESS_THRESHOLD};
use crate::error::{domain, Result};
use crate::linalg::{herm_eigen, quad_form, trace_re, CMatrix, CVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionPath {
    Principal,
    Randomized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub w: CVector,
    pub path: ExtractionPath,
    /// `λ₂/λ₁` of the input.
    pub tightness: f64,
}

/// Ranks randomized candidates. `rescale` maps a raw draw onto the feasible
/// set and `score` is maximized.
pub trait BeamformerCandidateScore {
    fn rescale(&self, w: CVector) -> CVector;
    fn score(&self, w: &CVector) -> f64;
}

/// Default scorer: candidates are scaled to the power `tr(M)` and ranked by
/// how much of `M` they capture, `wᴴ·M·w`.
#[derive(Clone, Debug)]
pub struct PowerScaledScore {
    target: CMatrix,
    power: f64,
}

impl PowerScaledScore {
    pub fn new(m: &CMatrix) -> Self {
        Self { target: m.clone(), power: trace_re(m).max(0.0) }
    }
}

impl BeamformerCandidateScore for PowerScaledScore {
    fn rescale(&self, w: CVector) -> CVector {
        let norm2 = w.norm_squared();
        if norm2 > 0.0 { w * C64::new((self.power / norm2).sqrt(), 0.0) } else { w }
    }

    fn score(&self, w: &CVector) -> f64 {
        quad_form(&self.target, w)
    }
}

/// Rotates `w` so its largest entry is real and positive.
fn fix_phase(mut w: CVector) -> CVector {
    if let Some(big) = w.iter().copied().max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr())) {
        if big.norm() > 0.0 {
            let rot = big.conj() / big.norm();
            w *= rot;
        }
    }
    w
}

/// Principal eigenvector when `m` is numerically rank one, otherwise the
/// best of `candidates` Gaussian draws `ξ ~ CN(0, M)`.
pub fn extract_beamformer<R: Rng + ?Sized, S: BeamformerCandidateScore + ?Sized>(
    m: &CMatrix,
    candidates: usize,
    rng: &mut R,
    scorer: &S,
) -> Result<Extraction> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(domain("beamformer extraction needs a non-empty square matrix"));
    }
    let (vals, vecs) = herm_eigen(m);
    let scale = vals[n - 1].abs().max(1.0);
    if vals[0] < PSD_FLOOR * scale {
        return Err(domain(format!("matrix is not PSD (min eigenvalue {:.3e})", vals[0])));
    }
    let l1 = vals[n - 1].max(0.0);
    let l2 = if n > 1 { vals[n - 2].max(0.0) } else { 0.0 };
    let tightness = if l1 > 0.0 { l2 / l1 } else { 0.0 };
    if tightness <= TIGHTNESS_THRESHOLD {
        let w = vecs.column(n - 1) * C64::new(l1.sqrt(), 0.0);
        return Ok(Extraction { w: fix_phase(w), path: ExtractionPath::Principal, tightness });
    }

    let mut best: Option<(f64, CVector)> = None;
    for _ in 0..candidates.max(1) {
        let mut xi = CVector::zeros(n);
        for (k, &lam) in vals.iter().enumerate() {
            if lam <= 0.0 {
                continue;
            }
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = C64::new(re, im) * (lam / 2.0).sqrt();
            xi += vecs.column(k) * z;
        }
        let w = scorer.rescale(xi);
        let s = scorer.score(&w);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, w));
        }
    }
    let (_, w) = best.expect("at least one candidate");
    Ok(Extraction { w: fix_phase(w), path: ExtractionPath::Randomized, tightness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::outer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_input_returns_its_vector() {
        let v = CVector::from_vec(vec![C64::new(0.3, -0.2), C64::new(1.1, 0.4), C64::new(-0.5, 0.0)]);
        let m = outer(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = extract_beamformer(&m, 10, &mut rng, &PowerScaledScore::new(&m)).unwrap();
        assert_eq!(ex.path, ExtractionPath::Principal);
        assert!(ex.tightness <= 1e-12);
        assert!((outer(&ex.w) - &m).norm() / m.norm() < 1e-10);
    }

    #[test]
    fn identity_takes_the_randomized_path() {
        let m = CMatrix::identity(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = extract_beamformer(&m, 20, &mut rng, &PowerScaledScore::new(&m)).unwrap();
        assert_eq!(ex.path, ExtractionPath::Randomized);
        assert!(ex.w.norm_squared() <= 2.0 + 1e-12);
    }

    #[test]
    fn indefinite_input_is_rejected() {
        let mut m = CMatrix::identity(2, 2);
        m[(1, 1)] = C64::new(-0.1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(extract_beamformer(&m, 1, &mut rng, &PowerScaledScore::new(&m)).is_err());
    }
}
