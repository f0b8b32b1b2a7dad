//! Input uncertainty regions: an axis-aligned box intersected with
//! closed half-spaces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::linalg::{dot, norm2};
use crate::lp::{LpProblem, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutSense {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=", alias = "<")]
    Le,
}

impl CutSense {
    pub fn flipped(self) -> Self {
        match self {
            CutSense::Ge => CutSense::Le,
            CutSense::Le => CutSense::Ge,
        }
    }

    pub(crate) fn lp_sense(self) -> Sense {
        match self {
            CutSense::Ge => Sense::Ge,
            CutSense::Le => Sense::Le,
        }
    }
}

/// The half-space `{x : normalᵀx (sense) offset}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub sense: CutSense,
}

impl Cut {
    pub fn satisfied_by(&self, x: &[f64], tol: f64) -> bool {
        let v = dot(&self.normal, x) - self.offset;
        match self.sense {
            CutSense::Ge => v >= -tol,
            CutSense::Le => v <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cuts: Vec<Cut>,
}

impl InputRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(CertError::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if !lower.iter().chain(&upper).all(|v| v.is_finite()) {
            return Err(CertError::NonFinite("region box".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(CertError::InvalidArgument("region lower exceeds upper".into()));
        }
        Ok(Self {
            lower,
            upper,
            cuts: Vec::new(),
        })
    }

    /// The ℓ∞ ball of radius `epsilon` around `center`.
    pub fn box_from_center(center: &[f64], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(CertError::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Self::new(
            center.iter().map(|c| c - epsilon).collect(),
            center.iter().map(|c| c + epsilon).collect(),
        )
    }

    /// Returns this region intersected with `normalᵀx (sense) offset`.
    pub fn add_halfspace(&self, normal: Vec<f64>, offset: f64, sense: CutSense) -> Result<Self> {
        if normal.len() != self.dim() {
            return Err(CertError::Dimension(format!(
                "cut normal has length {}, region has dimension {}",
                normal.len(),
                self.dim()
            )));
        }
        if !offset.is_finite() || !normal.iter().all(|v| v.is_finite()) {
            return Err(CertError::NonFinite("cut".into()));
        }
        if normal.iter().all(|v| *v == 0.0) {
            return Err(CertError::InvalidArgument("cut normal is zero".into()));
        }
        let mut next = self.clone();
        next.cuts.push(Cut {
            normal,
            offset,
            sense,
        });
        Ok(next)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    pub fn is_pure_box(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            && self.cuts.iter().all(|c| c.satisfied_by(x, tol))
    }

    /// Euclidean diameter of the bounding box. Exact for pure boxes and an
    /// upper bound once cuts are present.
    pub fn diameter(&self) -> f64 {
        let span: Vec<f64> = self
            .upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .collect();
        norm2(&span)
    }

    /// Uniform sample from the box.
    pub fn sample_box<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| if l < u { rng.gen_range(l..=u) } else { l })
            .collect()
    }

    /// Rejection sample satisfying all cuts, or `None` after `max_tries` misses.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_tries: usize) -> Option<Vec<f64>> {
        (0..max_tries)
            .map(|_| self.sample_box(rng))
            .find(|x| self.cuts.iter().all(|c| c.satisfied_by(x, 0.0)))
    }

    /// Adds the box and cut constraints on variables `first..first + dim`.
    pub(crate) fn encode(&self, lp: &mut LpProblem, first: usize) {
        for j in 0..self.dim() {
            lp.set_bounds(first + j, self.lower[j], self.upper[j]);
        }
        for cut in &self.cuts {
            let mut row = vec![0.0; lp.num_vars()];
            row[first..first + self.dim()].copy_from_slice(&cut.normal);
            lp.add_constraint(row, cut.sense.lp_sense(), cut.offset);
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RegionDoc = serde_json::from_str(text).map_err(|source| CertError::Parse {
            what: "region",
            source,
        })?;
        let mut region = match doc {
            RegionDoc {
                center: Some(c),
                epsilon: Some(e),
                lower: None,
                upper: None,
                ..
            } => Self::box_from_center(&c, e)?,
            RegionDoc {
                center: None,
                epsilon: None,
                lower: Some(l),
                upper: Some(u),
                ..
            } => Self::new(l, u)?,
            _ => {
                return Err(CertError::InvalidArgument(
                    "region needs either center+epsilon or lower+upper".into(),
                ))
            }
        };
        for cut in doc.cuts {
            region = region.add_halfspace(cut.normal, cut.offset, cut.sense)?;
        }
        Ok(region)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("region serializes")
    }
}

impl Serialize for InputRegion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RegionDoc {
            center: None,
            epsilon: None,
            lower: Some(self.lower.clone()),
            upper: Some(self.upper.clone()),
            cuts: self.cuts.clone(),
        }
        .serialize(s)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cuts: Vec<Cut>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_from_center_examples() {
        let r = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(r.lower(), &[-1.0, -1.0]);
        assert_eq!(r.upper(), &[1.0, 1.0]);
        assert!(r.is_pure_box());
        let r = InputRegion::box_from_center(&[1.0, 2.0], 0.5).unwrap();
        assert_eq!(r.lower(), &[0.5, 1.5]);
        assert_eq!(r.upper(), &[1.5, 2.5]);
        assert!(InputRegion::box_from_center(&[0.0], 0.0).is_err());
        assert!(InputRegion::box_from_center(&[0.0], -1.0).is_err());
    }

    #[test]
    fn halfspace_membership() {
        let b = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
        let r = b.add_halfspace(vec![1.0, 1.0], 0.0, CutSense::Ge).unwrap();
        assert!(r.contains(&[1.0, 0.0], 0.0));
        assert!(!r.contains(&[-1.0, -0.5], 0.0));
        // the original is untouched
        assert!(b.contains(&[-1.0, -0.5], 0.0));
        assert!(b.add_halfspace(vec![0.0, 0.0], 0.0, CutSense::Ge).is_err());
        assert!(b.add_halfspace(vec![1.0], 0.0, CutSense::Ge).is_err());
    }

    #[test]
    fn implied_cut_keeps_membership() {
        let b = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
        let r = b.add_halfspace(vec![1.0, 1.0], -2.0, CutSense::Ge).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.5..1.5)).collect();
            assert_eq!(b.contains(&x, 0.0), r.contains(&x, 0.0));
        }
    }

    #[test]
    fn diameter_examples() {
        let r = InputRegion::box_from_center(&[0.0, 0.0], 1.0).unwrap();
        assert!((r.diameter() - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let r = InputRegion::new(vec![0.3, 0.1], vec![0.3, 0.1]).unwrap();
        assert_eq!(r.diameter(), 0.0);
        let r = InputRegion::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!((r.diameter() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn json_forms() {
        let r = InputRegion::from_json(r#"{"center":[1,2],"epsilon":0.5}"#).unwrap();
        assert_eq!(r.lower(), &[0.5, 1.5]);
        let r = InputRegion::from_json(
            r#"{"lower":[-1,-1],"upper":[1,1],"cuts":[{"normal":[1,1],"offset":0,"sense":">="}]}"#,
        )
        .unwrap();
        assert_eq!(r.cuts().len(), 1);
        assert_eq!(InputRegion::from_json(&r.to_json()).unwrap(), r);
        assert!(InputRegion::from_json(r#"{"center":[1,2]}"#).is_err());
        assert!(InputRegion::from_json(r#"{"lower":[1],"upper":[0]}"#).is_err());
    }
}
