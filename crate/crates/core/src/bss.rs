//! Projection-based source separation scores.
//!
//! All signals are mean-removed first, so the components add up to the
//! centered estimate. The target part is the projection onto the matching
//! reference alone; no distortion filter is allowed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::extended_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssComponents {
    pub s_target: Vec<f64>,
    pub e_interference: Vec<f64>,
    /// Always zero: no noise references exist.
    pub e_noise: Vec<f64>,
    pub e_artifact: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BssScores {
    #[serde(with = "extended_f64")]
    pub sdr_db: f64,
    #[serde(with = "extended_f64")]
    pub sir_db: f64,
    #[serde(with = "extended_f64")]
    pub sar_db: f64,
}

/// Relative residual below which a reference counts as dependent on the
/// ones before it.
const DEPENDENCE_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn energy(x: &[f64]) -> f64 {
    dot(x, x)
}

/// Error energy at or below this fraction of the estimate's energy is
/// projection rounding and counts as zero (about 240 dB).
const ZERO_ENERGY_REL: f64 = 1e-24;

/// `10 log10(num / den)` with `+inf` whenever the denominator vanishes.
fn ratio_db(num: f64, den: f64, floor: f64) -> f64 {
    if den <= floor {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Orthonormal basis of the references by modified Gram-Schmidt.
fn orthonormal_basis(refs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(refs.len());
    for r in refs {
        let norm0 = energy(r).sqrt();
        let mut v = r.clone();
        // Two passes keep the basis orthogonal to rounding level.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let norm = energy(&v).sqrt();
        if norm0 == 0.0 || norm <= DEPENDENCE_TOL * norm0 {
            return Err(Error::DependentReferences);
        }
        v.iter_mut().for_each(|vi| *vi /= norm);
        basis.push(v);
    }
    Ok(basis)
}

fn check_inputs(estimate: &[f64], references: &[Vec<f64>], target: usize) -> Result<()> {
    if estimate.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "signals need at least 2 samples, got {}",
            estimate.len()
        )));
    }
    if references.is_empty() || target >= references.len() {
        return Err(Error::InvalidInput(format!(
            "target index {target} out of range for {} references",
            references.len()
        )));
    }
    if let Some(r) = references.iter().find(|r| r.len() != estimate.len()) {
        return Err(Error::Dimension(format!(
            "reference of length {} against estimate of length {}",
            r.len(),
            estimate.len()
        )));
    }
    let all_finite = estimate
        .iter()
        .chain(references.iter().flatten())
        .all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::NonFinite("signal contains NaN or infinity".into()));
    }
    Ok(())
}

pub fn decompose(estimate: &[f64], references: &[Vec<f64>], target: usize) -> Result<BssComponents> {
    check_inputs(estimate, references, target)?;
    let est = centered(estimate);
    let refs: Vec<Vec<f64>> = references.iter().map(|r| centered(r)).collect();
    let rt = &refs[target];
    let rt_energy = energy(rt);
    if rt_energy == 0.0 {
        return Err(Error::Degenerate("target reference is zero after mean removal".into()));
    }
    let basis = orthonormal_basis(&refs)?;

    let n = est.len();
    let c = dot(&est, rt) / rt_energy;
    let s_target: Vec<f64> = rt.iter().map(|v| c * v).collect();
    let mut p_all = vec![0.0; n];
    for q in &basis {
        let k = dot(&est, q);
        p_all.iter_mut().zip(q).for_each(|(p, qi)| *p += k * qi);
    }
    let e_interference = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artifact = est.iter().zip(&p_all).map(|(e, p)| e - p).collect();
    Ok(BssComponents {
        s_target,
        e_interference,
        e_noise: vec![0.0; n],
        e_artifact,
    })
}

impl BssComponents {
    pub fn scores(&self) -> BssScores {
        let sum3 = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<f64> {
            a.iter().zip(b).zip(c).map(|((x, y), z)| x + y + z).collect()
        };
        let target = energy(&self.s_target);
        let distortion = energy(&sum3(&self.e_interference, &self.e_noise, &self.e_artifact));
        let kept = energy(&sum3(&self.s_target, &self.e_interference, &self.e_noise));
        let total: f64 = (0..self.s_target.len())
            .map(|i| {
                let v = self.s_target[i] + self.e_interference[i] + self.e_noise[i] + self.e_artifact[i];
                v * v
            })
            .sum();
        let floor = ZERO_ENERGY_REL * total;
        BssScores {
            sdr_db: ratio_db(target, distortion, floor),
            sir_db: ratio_db(target, energy(&self.e_interference), floor),
            sar_db: ratio_db(kept, energy(&self.e_artifact), floor),
        }
    }
}

pub fn bss_eval(estimate: &[f64], references: &[Vec<f64>], target: usize) -> Result<BssScores> {
    Ok(decompose(estimate, references, target)?.scores())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = energy(v).sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn refs() -> Vec<Vec<f64>> {
        vec![unit(&[1.0, -1.0, 0.0, 0.0]), unit(&[0.0, 0.0, 1.0, -1.0])]
    }

    #[test]
    fn perfect_estimate() {
        let r = refs();
        let c = decompose(&r[0], &r, 0).unwrap();
        assert!(c.e_interference.iter().chain(&c.e_artifact).all(|v| v.abs() < 1e-15));
        let s = c.scores();
        assert_eq!(s.sdr_db, f64::INFINITY);
        assert_eq!(s.sir_db, f64::INFINITY);
        assert_eq!(s.sar_db, f64::INFINITY);
    }

    #[test]
    fn interference_only() {
        let r = refs();
        let est: Vec<f64> = r[0].iter().zip(&r[1]).map(|(a, b)| a + b).collect();
        let c = decompose(&est, &r, 0).unwrap();
        for (s, want) in c.s_target.iter().zip(&r[0]) {
            assert!((s - want).abs() < 1e-15);
        }
        let s = c.scores();
        assert!(s.sir_db.abs() < 1e-12);
        assert!(s.sdr_db.abs() < 1e-12);
        assert_eq!(s.sar_db, f64::INFINITY);
    }

    #[test]
    fn artifact_only() {
        let s1 = vec![1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        let s2 = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, -1.0];
        // Orthogonal to s1, s2 and to constants.
        let n0 = vec![1.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        let scale = (energy(&s1) / 10.0 / energy(&n0)).sqrt();
        let est: Vec<f64> = s1.iter().zip(&n0).map(|(a, b)| a + scale * b).collect();
        let s = bss_eval(&est, &[s1, s2], 0).unwrap();
        assert_eq!(s.sir_db, f64::INFINITY);
        assert!((s.sdr_db - 10.0).abs() < 1e-12);
        assert!((s.sar_db - 10.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_estimate_is_artifact() {
        let r = refs();
        let est = vec![1.0, 1.0, -1.0, -1.0];
        let c = decompose(&est, &r, 0).unwrap();
        assert!(c.s_target.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(c.e_artifact, est);
    }

    #[test]
    fn rejects_bad_references() {
        let r = refs();
        let dup = vec![r[0].clone(), r[0].iter().map(|v| 2.0 * v).collect()];
        assert!(matches!(decompose(&r[0], &dup, 0), Err(Error::DependentReferences)));
        let zero = vec![vec![3.0; 4], r[1].clone()];
        assert!(matches!(decompose(&r[0], &zero, 0), Err(Error::Degenerate(_))));
        assert!(decompose(&r[0], &r, 2).is_err());
        assert!(decompose(&[1.0, 2.0, 3.0], &r, 0).is_err());
    }
}
