//! Base losses and their gradients with respect to the prediction.
//!
//! Losses are summed over output dimensions, never averaged; batch averaging is the
//! trainer's job.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default Tukey constant (95% asymptotic efficiency under Gaussian noise).
pub const TUKEY_DEFAULT_C: f64 = 4.685;

/// Supervision for one sample: a regression vector or a class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Vector(Vec<f64>),
    Class(usize),
}

impl Target {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Target::Vector(v) => Some(v),
            Target::Class(_) => None,
        }
    }

    pub fn as_class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Vector(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `0.5 * ||u - v||^2`
    L2,
    /// `-log softmax(logits)[target]`
    CrossEntropy,
    /// Tukey's bi-weight, summed elementwise over residuals.
    TukeyBiweight { c: f64 },
}

impl LossKind {
    pub fn tukey(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("tukey constant must be > 0, got {c}")));
        }
        Ok(LossKind::TukeyBiweight { c })
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, LossKind::CrossEntropy)
    }

    pub fn loss(&self, prediction: &[f64], target: &Target) -> Result<f64> {
        match (self, target) {
            (LossKind::CrossEntropy, Target::Class(k)) => {
                check_class(prediction, *k)?;
                Ok(log_sum_exp(prediction) - prediction[*k])
            }
            (_, Target::Vector(v)) => self.vector_loss(prediction, v),
            _ => Err(mismatched_target(self)),
        }
    }

    /// Loss against a vector target, without wrapping it in [`Target`].
    pub fn vector_loss(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_dims(u, v)?;
        match self {
            LossKind::L2 => Ok(0.5 * u.iter().zip(v).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()),
            LossKind::TukeyBiweight { c } => Ok(u.iter().zip(v).map(|(u, v)| tukey_rho(u - v, *c)).sum()),
            LossKind::CrossEntropy => Err(mismatched_target(self)),
        }
    }

    /// Gradient of [`LossKind::loss`] with respect to the prediction.
    pub fn loss_grad(&self, prediction: &[f64], target: &Target) -> Result<Vec<f64>> {
        let mut out = vec![0.0; prediction.len()];
        self.loss_grad_into(prediction, target, &mut out)?;
        Ok(out)
    }

    pub fn loss_grad_into(&self, prediction: &[f64], target: &Target, out: &mut [f64]) -> Result<()> {
        if out.len() != prediction.len() {
            return Err(Error::shape("gradient buffer length differs from prediction"));
        }
        match (self, target) {
            (LossKind::L2, Target::Vector(v)) => {
                check_dims(prediction, v)?;
                for ((o, u), v) in out.iter_mut().zip(prediction).zip(v) {
                    *o = u - v;
                }
            }
            (LossKind::TukeyBiweight { c }, Target::Vector(v)) => {
                check_dims(prediction, v)?;
                for ((o, u), v) in out.iter_mut().zip(prediction).zip(v) {
                    *o = tukey_psi(u - v, *c);
                }
            }
            (LossKind::CrossEntropy, Target::Class(k)) => {
                check_class(prediction, *k)?;
                softmax_into(prediction, out);
                out[*k] -= 1.0;
            }
            _ => return Err(mismatched_target(self)),
        }
        Ok(())
    }
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "prediction has {} dims, target has {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

fn check_class(logits: &[f64], k: usize) -> Result<()> {
    if k >= logits.len() {
        return Err(Error::invalid(format!(
            "class index {k} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

fn mismatched_target(kind: &LossKind) -> Error {
    if kind.is_classification() {
        Error::invalid("cross_entropy needs a class-index target")
    } else {
        Error::invalid(format!("{kind} needs a vector target"))
    }
}

/// `rho_c(r) = c^2/6 * (1 - (1 - (r/c)^2)^3)` inside `|r| <= c`, `c^2/6` outside.
pub fn tukey_rho(r: f64, c: f64) -> f64 {
    let sat = c * c / 6.0;
    if r.abs() <= c {
        let q = 1.0 - (r / c) * (r / c);
        sat * (1.0 - q * q * q)
    } else {
        sat
    }
}

/// Derivative of [`tukey_rho`]; exactly zero once saturated.
pub fn tukey_psi(r: f64, c: f64) -> f64 {
    if r.abs() <= c {
        let q = 1.0 - (r / c) * (r / c);
        r * q * q
    } else {
        0.0
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    softmax_into(x, &mut out);
    out
}

fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::L2 => write!(f, "l2"),
            LossKind::CrossEntropy => write!(f, "cross_entropy"),
            LossKind::TukeyBiweight { c } => write!(f, "tukey:{c}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "tukey" => LossKind::tukey(TUKEY_DEFAULT_C),
            other => match other.strip_prefix("tukey:") {
                Some(c) => {
                    let c: f64 = c
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad tukey constant in {other:?}")))?;
                    LossKind::tukey(c)
                }
                None => Err(Error::invalid(format!(
                    "unknown loss {other:?} (expected l2, cross_entropy or tukey:<c>)"
                ))),
            },
        }
    }
}

impl Serialize for LossKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vt(v: &[f64]) -> Target {
        Target::Vector(v.to_vec())
    }

    #[test]
    fn l2_values() {
        assert_eq!(LossKind::L2.loss(&[0.3, -1.0], &vt(&[0.3, -1.0])).unwrap(), 0.0);
        assert_eq!(LossKind::L2.loss(&[1.0, 0.0], &vt(&[0.0, 0.0])).unwrap(), 0.5);
        assert_eq!(
            LossKind::L2.loss_grad(&[2.0, 1.0], &vt(&[2.0, 1.0])).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let l = LossKind::CrossEntropy.loss(&[0.7; 4], &Target::Class(2)).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_grad_sums_to_zero() {
        let g = LossKind::CrossEntropy
            .loss_grad(&[0.1, -2.0, 3.0, 0.5], &Target::Class(1))
            .unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_does_not_overflow() {
        let l = LossKind::CrossEntropy.loss(&[1000.0, 0.0], &Target::Class(1)).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn tukey_values() {
        let k = LossKind::tukey(4.685).unwrap();
        assert_eq!(k.loss(&[1.0], &vt(&[1.0])).unwrap(), 0.0);
        let sat = k.loss(&[10.0], &vt(&[0.0])).unwrap();
        assert!((sat - 4.685 * 4.685 / 6.0).abs() < 1e-12);
        assert!((sat - 3.658).abs() < 1e-3);
        assert_eq!(k.loss_grad(&[10.0, -7.0], &vt(&[0.0, 0.0])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            LossKind::L2.loss(&[1.0], &vt(&[1.0, 2.0])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            LossKind::CrossEntropy.loss(&[1.0, 2.0], &Target::Class(2)),
            Err(Error::Validation(_))
        ));
        assert!(LossKind::L2.loss(&[1.0], &Target::Class(0)).is_err());
        assert!(LossKind::tukey(0.0).is_err());
        assert!(LossKind::tukey(-1.0).is_err());
    }

    #[test]
    fn parse_and_print() {
        assert_eq!("l2".parse::<LossKind>().unwrap(), LossKind::L2);
        assert_eq!("cross_entropy".parse::<LossKind>().unwrap(), LossKind::CrossEntropy);
        assert_eq!(
            "tukey:4.685".parse::<LossKind>().unwrap(),
            LossKind::TukeyBiweight { c: 4.685 }
        );
        assert!("tukey:-2".parse::<LossKind>().is_err());
        assert!("huber".parse::<LossKind>().is_err());
        let k = LossKind::TukeyBiweight { c: 2.5 };
        assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, "\"tukey:2.5\"");
    }

    proptest! {
        #[test]
        fn nonnegative(u in prop::collection::vec(-20.0..20.0f64, 3), v in prop::collection::vec(-20.0..20.0f64, 3), k in 0usize..3) {
            prop_assert!(LossKind::L2.loss(&u, &vt(&v)).unwrap() >= 0.0);
            prop_assert!(LossKind::tukey(4.685).unwrap().loss(&u, &vt(&v)).unwrap() >= 0.0);
            prop_assert!(LossKind::CrossEntropy.loss(&u, &Target::Class(k)).unwrap() >= 0.0);
        }

        #[test]
        fn cross_entropy_shift_invariant(u in prop::collection::vec(-10.0..10.0f64, 5), shift in -50.0..50.0f64, k in 0usize..5) {
            let shifted: Vec<f64> = u.iter().map(|x| x + shift).collect();
            let a = LossKind::CrossEntropy.loss(&u, &Target::Class(k)).unwrap();
            let b = LossKind::CrossEntropy.loss(&shifted, &Target::Class(k)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn tukey_saturates(r in 4.685..100.0f64, sign in prop::bool::ANY) {
            let r = if sign { r } else { -r };
            prop_assert_eq!(tukey_rho(r, 4.685), 4.685 * 4.685 / 6.0);
            prop_assert_eq!(tukey_psi(r, 4.685), 0.0);
        }
    }
}
