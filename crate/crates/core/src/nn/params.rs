//! Flat parameter views with per-parameter role tags.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamRole {
    pub(crate) fn to_u8(self) -> u8 {
        match self {
            ParamRole::Weight => 0,
            ParamRole::Bias => 1,
            ParamRole::NormScale => 2,
            ParamRole::NormShift => 3,
        }
    }

    pub(crate) fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => ParamRole::Weight,
            1 => ParamRole::Bias,
            2 => ParamRole::NormScale,
            3 => ParamRole::NormShift,
            _ => {
                return Err(Error::InvalidParam(format!("unknown parameter role {v}")));
            }
        })
    }

    pub fn is_norm(self) -> bool {
        matches!(self, ParamRole::NormScale | ParamRole::NormShift)
    }
}

/// A contiguous run of parameters sharing one role within one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
    pub role: ParamRole,
    pub layer_index: usize,
}

/// Flat model parameters theta in R^k. Segments partition `[0, k)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut sorted = segments.clone();
        sorted.sort_by_key(|s| s.offset);
        let mut cursor = 0usize;
        for s in &sorted {
            if s.offset != cursor {
                return Err(Error::InvalidParam(format!(
                    "segments must partition parameters: gap or overlap at {}",
                    s.offset
                )));
            }
            cursor += s.len;
        }
        if cursor != values.len() {
            return Err(Error::InvalidParam(format!(
                "segments cover {cursor} of {} parameters",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector { values, segments })
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Role of every coordinate, in offset order.
    pub fn role_per_coordinate(&self) -> Vec<ParamRole> {
        let mut roles = vec![ParamRole::Weight; self.values.len()];
        for s in &self.segments {
            for r in roles.iter_mut().skip(s.offset).take(s.len) {
                *r = s.role;
            }
        }
        roles
    }

    /// Coordinate indices carrying normalization roles, ascending.
    pub fn norm_indices(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        for s in &self.segments {
            if s.role.is_norm() {
                idx.extend(s.offset..s.offset + s.len);
            }
        }
        idx.sort_unstable();
        idx
    }

    pub fn slice(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.offset..seg.offset + seg.len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(offset: usize, len: usize, role: ParamRole) -> Segment {
        Segment {
            offset,
            len,
            role,
            layer_index: 0,
        }
    }

    #[test]
    fn rejects_gap() {
        let segs = vec![seg(0, 2, ParamRole::Weight), seg(3, 1, ParamRole::Bias)];
        assert!(ParamVector::new(vec![0.0; 4], segs).is_err());
    }

    #[test]
    fn rejects_overlap() {
        let segs = vec![seg(0, 3, ParamRole::Weight), seg(2, 2, ParamRole::Bias)];
        assert!(ParamVector::new(vec![0.0; 4], segs).is_err());
    }

    #[test]
    fn rejects_partial_cover() {
        let segs = vec![seg(0, 2, ParamRole::Weight)];
        assert!(ParamVector::new(vec![0.0; 4], segs).is_err());
    }

    #[test]
    fn roles_and_norm_indices() {
        let segs = vec![
            seg(0, 2, ParamRole::Weight),
            seg(2, 1, ParamRole::NormScale),
            seg(3, 1, ParamRole::NormShift),
        ];
        let pv = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0], segs).unwrap();
        assert_eq!(pv.norm_indices(), vec![2, 3]);
        let roles = pv.role_per_coordinate();
        assert_eq!(roles[0], ParamRole::Weight);
        assert_eq!(roles[2], ParamRole::NormScale);
    }

    #[test]
    fn set_values_checks_length_and_finiteness() {
        let segs = vec![seg(0, 2, ParamRole::Weight)];
        let mut pv = ParamVector::new(vec![1.0, 2.0], segs).unwrap();
        assert!(pv.set_values(&[1.0]).is_err());
        assert!(pv.set_values(&[1.0, f64::NAN]).is_err());
        pv.set_values(&[5.0, 6.0]).unwrap();
        assert_eq!(pv.values(), &[5.0, 6.0]);
    }
}
