use std::fmt;
use std::str::FromStr;

use crate::encoder::IntrinsicEmbeddingBank;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationSpace {
    /// Blend bank vectors, then run the connector once.
    Bank,
    /// Run the connector on both neighbors, then blend its outputs.
    PostConnector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extrapolation {
    /// Weights may leave `[0, 1]` outside the seen range.
    Linear,
    /// Weights are clipped to `[0, 1]`.
    Clamp,
}

impl FromStr for InterpolationSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bank" => Ok(Self::Bank),
            "post-connector" => Ok(Self::PostConnector),
            _ => Err(Error::Config(format!("unknown interpolation space '{s}' (bank|post-connector)"))),
        }
    }
}

impl fmt::Display for InterpolationSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bank => "bank",
            Self::PostConnector => "post-connector",
        })
    }
}

impl FromStr for Extrapolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "clamp" => Ok(Self::Clamp),
            _ => Err(Error::Config(format!("unknown extrapolation '{s}' (linear|clamp)"))),
        }
    }
}

impl fmt::Display for Extrapolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Clamp => "clamp",
        })
    }
}

/// Test-time rule for focals that may not be in the bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationPolicy {
    /// Largest gap, in nominal pixels, at which the nearest entry is reused.
    pub threshold: f64,
    pub space: InterpolationSpace,
    pub extrapolation: Extrapolation,
}

impl Default for InterpolationPolicy {
    fn default() -> Self {
        Self {
            threshold: 32.0,
            space: InterpolationSpace::Bank,
            extrapolation: Extrapolation::Linear,
        }
    }
}

impl InterpolationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0 && self.threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("interpolation threshold must be positive, got {}", self.threshold)))
        }
    }
}

/// Where an embedding came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    /// A bank entry reused as is.
    Exact { focal: f64 },
    /// `weight·bank[near] + (1 − weight)·bank[far]`.
    Interpolated { near: f64, far: f64, weight: f64 },
    /// The raw focal fed to a trainable encoder.
    Direct,
    /// Intrinsic-blind model.
    None,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Exact { .. } => "exact",
            Self::Interpolated { .. } => "interpolated",
            Self::Direct => "direct",
            Self::None => "none",
        }
    }
}

/// Applies the nearest/interpolate rule to sorted or unsorted seen focals.
pub fn select_neighbors(f_test: f64, seen: &[f64], policy: &InterpolationPolicy) -> Result<Provenance> {
    policy.validate()?;
    if !f_test.is_finite() {
        return Err(Error::Domain(format!("test focal must be finite, got {f_test}")));
    }
    let mut order: Vec<f64> = seen.to_vec();
    order.sort_by(|a, b| (a - f_test).abs().total_cmp(&(b - f_test).abs()).then(a.total_cmp(b)));
    let Some(&near) = order.first() else {
        return Err(Error::Config("embedding bank is empty".into()));
    };
    if (f_test - near).abs() <= policy.threshold {
        return Ok(Provenance::Exact { focal: near });
    }
    let Some(&far) = order.get(1) else {
        return Err(Error::Config(format!(
            "focal {f_test} is more than {} px from the only bank entry {near}",
            policy.threshold
        )));
    };
    let mut weight = (far - f_test) / (far - near);
    if policy.extrapolation == Extrapolation::Clamp {
        weight = weight.clamp(0.0, 1.0);
    }
    Ok(Provenance::Interpolated { near, far, weight })
}

/// Blends two vectors as `w·a + (1 − w)·b`.
pub fn blend(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| w * x + (1.0 - w) * y).collect()
}

/// The bank-space vector the rule selects for `f_test`.
pub fn bank_space_vector(
    f_test: f64,
    bank: &IntrinsicEmbeddingBank<f64>,
    policy: &InterpolationPolicy,
) -> Result<(Vec<f64>, Provenance)> {
    let prov = select_neighbors(f_test, &bank.focals(), policy)?;
    let get = |f: f64| bank.get(f).expect("selected focal is in the bank");
    let v = match prov {
        Provenance::Exact { focal } => get(focal).to_vec(),
        Provenance::Interpolated { near, far, weight } => blend(get(near), get(far), weight),
        _ => unreachable!(),
    };
    Ok((v, prov))
}

/// Embedding handed to the detector for one test focal.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedEmbedding {
    pub t_intr: Vec<f64>,
    pub source_focal: f64,
    pub provenance: Provenance,
}

/// Maps a test focal to `t_intr` through the bank and `connector`.
pub fn select_embedding<F>(
    f_test: f64,
    bank: &IntrinsicEmbeddingBank<f64>,
    connector: F,
    policy: &InterpolationPolicy,
) -> Result<AdaptedEmbedding>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let prov = select_neighbors(f_test, &bank.focals(), policy)?;
    let get = |f: f64| bank.get(f).expect("selected focal is in the bank");
    let t_intr = match (prov, policy.space) {
        (Provenance::Exact { focal }, _) => connector(get(focal))?,
        (Provenance::Interpolated { near, far, weight }, InterpolationSpace::Bank) => {
            connector(&blend(get(near), get(far), weight))?
        }
        (Provenance::Interpolated { near, far, weight }, InterpolationSpace::PostConnector) => {
            blend(&connector(get(near))?, &connector(get(far))?, weight)
        }
        _ => unreachable!(),
    };
    Ok(AdaptedEmbedding {
        t_intr,
        source_focal: f_test,
        provenance: prov,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::encoder::{build_bank, describe_focal, ReferenceEncoder};

    fn bank(focals: &[f64]) -> IntrinsicEmbeddingBank<f64> {
        let sets: Vec<_> = focals.iter().map(|&f| describe_focal(f, 1280.0)).collect();
        let mut b = build_bank(&sets, &ReferenceEncoder::new(16).unwrap()).unwrap();
        b.freeze();
        b
    }

    const SEEN: [f64; 4] = [700.0, 900.0, 1100.0, 1300.0];

    fn identity(v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }

    #[test]
    fn worked_cases() {
        let b = bank(&SEEN);
        let p = InterpolationPolicy::default();
        let e = select_embedding(910.0, &b, identity, &p).unwrap();
        assert_eq!(e.provenance, Provenance::Exact { focal: 900.0 });
        assert_eq!(e.t_intr, b.get(900.0).unwrap());
        assert_eq!(e.source_focal, 910.0);

        let e = select_embedding(1000.0, &b, identity, &p).unwrap();
        assert_eq!(
            e.provenance,
            Provenance::Interpolated {
                near: 900.0,
                far: 1100.0,
                weight: 0.5
            }
        );
        for (i, v) in e.t_intr.iter().enumerate() {
            let want = 0.5 * b.get(900.0).unwrap()[i] + 0.5 * b.get(1100.0).unwrap()[i];
            assert!((v - want).abs() < 1e-15);
        }

        assert_eq!(select_embedding(900.0, &b, identity, &p).unwrap().t_intr, b.get(900.0).unwrap());

        let e = select_embedding(600.0, &b, identity, &p).unwrap();
        assert_eq!(
            e.provenance,
            Provenance::Interpolated {
                near: 700.0,
                far: 900.0,
                weight: 1.5
            }
        );
        for (i, v) in e.t_intr.iter().enumerate() {
            let want = 1.5 * b.get(700.0).unwrap()[i] - 0.5 * b.get(900.0).unwrap()[i];
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_stays_inside_the_seen_range() {
        let b = bank(&SEEN);
        let p = InterpolationPolicy {
            extrapolation: Extrapolation::Clamp,
            ..Default::default()
        };
        let e = select_embedding(600.0, &b, identity, &p).unwrap();
        assert_eq!(e.t_intr, b.get(700.0).unwrap());
        let e = select_embedding(1450.0, &b, identity, &p).unwrap();
        assert_eq!(e.t_intr, b.get(1300.0).unwrap());
    }

    #[test]
    fn degenerate_banks() {
        let p = InterpolationPolicy::default();
        let empty = IntrinsicEmbeddingBank::<f64>::new(16, "reference");
        assert!(matches!(select_embedding(900.0, &empty, identity, &p), Err(Error::Config(_))));
        let one = bank(&[900.0]);
        assert!(select_embedding(920.0, &one, identity, &p).is_ok());
        assert!(matches!(select_embedding(1000.0, &one, identity, &p), Err(Error::Config(_))));
        let bad = InterpolationPolicy {
            threshold: 0.0,
            ..Default::default()
        };
        assert!(matches!(select_neighbors(900.0, &SEEN, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn near_ties_go_to_the_smaller_focal() {
        let p = InterpolationPolicy::default();
        assert_eq!(select_neighbors(1000.0, &[1020.0, 980.0], &p).unwrap(), Provenance::Exact { focal: 980.0 });
        assert_eq!(
            select_neighbors(1000.0, &[1100.0, 900.0, 700.0], &p).unwrap(),
            Provenance::Interpolated {
                near: 900.0,
                far: 1100.0,
                weight: 0.5
            }
        );
    }

    #[test]
    fn two_nearest_need_not_bracket() {
        let p = InterpolationPolicy::default();
        // 1150: nearest 1100 (50), then 1300 (150) rather than 900 (250)
        let prov = select_neighbors(1150.0, &SEEN, &p).unwrap();
        assert_eq!(
            prov,
            Provenance::Interpolated {
                near: 1100.0,
                far: 1300.0,
                weight: 0.75
            }
        );
    }

    #[test]
    fn spaces_agree_for_affine_connectors() {
        let b = bank(&SEEN);
        let affine = |v: &[f64]| -> Result<Vec<f64>> {
            Ok((0..8).map(|j| v.iter().enumerate().map(|(i, x)| x * ((i * 8 + j) as f64).cos()).sum::<f64>() + j as f64).collect())
        };
        let nonlinear = |v: &[f64]| -> Result<Vec<f64>> { Ok(v.iter().map(|x| x.tanh() * 3.0).collect()) };
        for f in [650.0, 800.0, 1000.0, 1234.0, 1400.0] {
            let bank_p = InterpolationPolicy::default();
            let post_p = InterpolationPolicy {
                space: InterpolationSpace::PostConnector,
                ..Default::default()
            };
            let a = select_embedding(f, &b, affine, &bank_p).unwrap();
            let c = select_embedding(f, &b, affine, &post_p).unwrap();
            for (x, y) in a.t_intr.iter().zip(&c.t_intr) {
                assert!((x - y).abs() < 1e-9);
            }
            let n1 = select_embedding(f, &b, nonlinear, &bank_p).unwrap();
            let n2 = select_embedding(f, &b, nonlinear, &post_p).unwrap();
            assert_ne!(n1.t_intr, n2.t_intr);
        }
    }

    #[test]
    fn sweep_is_piecewise_constant_then_affine() {
        let b = bank(&SEEN);
        let p = InterpolationPolicy::default();
        let sweep: Vec<(f64, Vec<f64>, Provenance)> = (650..=1350)
            .map(|f| {
                let (v, prov) = bank_space_vector(f as f64, &b, &p).unwrap();
                (f as f64, v, prov)
            })
            .collect();
        for (f, v, prov) in &sweep {
            if let Some(&s) = SEEN.iter().find(|s| (f - *s).abs() <= 32.0) {
                assert_eq!(*prov, Provenance::Exact { focal: s });
                assert_eq!(v.as_slice(), b.get(s).unwrap());
            }
        }
        let same_pair = |a: &Provenance, c: &Provenance| match (a, c) {
            (Provenance::Interpolated { near: n1, far: f1, .. }, Provenance::Interpolated { near: n2, far: f2, .. }) => {
                n1 == n2 && f1 == f2
            }
            _ => false,
        };
        let mut affine_triples = 0;
        for w in sweep.windows(3) {
            if same_pair(&w[0].2, &w[1].2) && same_pair(&w[1].2, &w[2].2) {
                affine_triples += 1;
                for i in 0..w[0].1.len() {
                    let d2 = w[0].1[i] - 2.0 * w[1].1[i] + w[2].1[i];
                    assert!(d2.abs() < 1e-12, "second difference {d2} at {}", w[1].0);
                }
            }
        }
        assert!(affine_triples > 300);
    }

    proptest! {
        #[test]
        fn midpoints_blend_evenly(lo in 500u32..1500, half in 33u32..300) {
            let (lo, hi) = (lo as f64, (lo + 2 * half) as f64);
            let prov = select_neighbors((lo + hi) / 2.0, &[hi, lo], &InterpolationPolicy::default()).unwrap();
            prop_assert_eq!(prov, Provenance::Interpolated { near: lo, far: hi, weight: 0.5 });
        }

        #[test]
        fn selection_is_deterministic(f in 550.0f64..1450.0) {
            let b = bank(&SEEN);
            let p = InterpolationPolicy::default();
            let a = select_embedding(f, &b, identity, &p).unwrap();
            let c = select_embedding(f, &b, identity, &p).unwrap();
            prop_assert_eq!(a, c);
        }

        #[test]
        fn seen_focals_are_returned_bitwise(i in 0usize..4, thr in 1.0f64..90.0) {
            let b = bank(&SEEN);
            let p = InterpolationPolicy { threshold: thr, ..Default::default() };
            let e = select_embedding(SEEN[i], &b, identity, &p).unwrap();
            prop_assert_eq!(e.t_intr.as_slice(), b.get(SEEN[i]).unwrap());
        }
    }
}
