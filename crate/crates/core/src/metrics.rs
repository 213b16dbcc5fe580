//! Overlap and volume metrics between a prediction `P` and a reference `Q`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Mask;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("reference mask is empty; relative volume metrics are undefined")]
    EmptyReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub pred: usize,
    pub reference: usize,
    pub intersection: usize,
}

impl Counts {
    pub fn union(&self) -> usize {
        self.pred + self.reference - self.intersection
    }
}

pub fn counts(p: &Mask, q: &Mask) -> Result<Counts, MetricError> {
    if p.dims() != q.dims() {
        return Err(MetricError::DimsMismatch(p.dims().as_array(), q.dims().as_array()));
    }
    let mut c = Counts { pred: 0, reference: 0, intersection: 0 };
    for (&a, &b) in p.data().iter().zip(q.data()) {
        c.pred += a as usize;
        c.reference += b as usize;
        c.intersection += (a && b) as usize;
    }
    Ok(c)
}

/// Dice similarity; 1.0 when both masks are empty.
pub fn dsc(p: &Mask, q: &Mask) -> Result<f64, MetricError> {
    let c = counts(p, q)?;
    Ok(dsc_from(&c))
}

fn dsc_from(c: &Counts) -> f64 {
    if c.pred + c.reference == 0 {
        1.0
    } else {
        2.0 * c.intersection as f64 / (c.pred + c.reference) as f64
    }
}

/// Volumetric overlap error; 0.0 when both masks are empty.
pub fn voe(p: &Mask, q: &Mask) -> Result<f64, MetricError> {
    let c = counts(p, q)?;
    Ok(voe_from(&c))
}

fn voe_from(c: &Counts) -> f64 {
    if c.union() == 0 {
        0.0
    } else {
        1.0 - c.intersection as f64 / c.union() as f64
    }
}

/// Absolute relative volume difference `abs(|P|−|Q|)/|Q|`.
pub fn arvd(p: &Mask, q: &Mask) -> Result<f64, MetricError> {
    let c = counts(p, q)?;
    if c.reference == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(c.pred.abs_diff(c.reference) as f64 / c.reference as f64)
}

/// Signed voxel-count difference `|P|−|Q|`.
pub fn vd(p: &Mask, q: &Mask) -> Result<i64, MetricError> {
    let c = counts(p, q)?;
    Ok(c.pred as i64 - c.reference as i64)
}

/// Relative volume difference `2·abs(|P|−|Q|)/(|P|+|Q|)`.
pub fn rvd(p: &Mask, q: &Mask) -> Result<f64, MetricError> {
    let c = counts(p, q)?;
    if c.reference == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(2.0 * c.pred.abs_diff(c.reference) as f64 / (c.pred + c.reference) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dsc: f64,
    pub voe: f64,
    /// `None` when the reference is empty.
    pub arvd: Option<f64>,
    pub vd: i64,
    pub rvd: Option<f64>,
    pub clicks_fg: usize,
    pub clicks_bg: usize,
}

impl MetricReport {
    pub fn compute(p: &Mask, q: &Mask, clicks_fg: usize, clicks_bg: usize) -> Result<Self, MetricError> {
        let c = counts(p, q)?;
        let rel = |num: f64, den: usize| (c.reference > 0).then(|| num / den as f64);
        Ok(Self {
            dsc: dsc_from(&c),
            voe: voe_from(&c),
            arvd: rel(c.pred.abs_diff(c.reference) as f64, c.reference),
            vd: c.pred as i64 - c.reference as i64,
            rvd: rel(2.0 * c.pred.abs_diff(c.reference) as f64, c.pred + c.reference),
            clicks_fg,
            clicks_bg,
        })
    }

    pub const CSV_HEADER: &'static str = "case,dsc,voe,arvd,vd,rvd,clicks_fg,clicks_bg";

    pub fn csv_row(&self, case: &str) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{case},{:.6},{:.6},{},{},{},{},{}",
            self.dsc,
            self.voe,
            opt(self.arvd),
            self.vd,
            opt(self.rvd),
            self.clicks_fg,
            self.clicks_bg
        )
    }
}

/// One header line, then one row per `(case, report)`.
pub fn write_reports_csv<W: Write>(mut out: W, rows: &[(String, MetricReport)]) -> std::io::Result<()> {
    writeln!(out, "{}", MetricReport::CSV_HEADER)?;
    for (case, r) in rows {
        writeln!(out, "{}", r.csv_row(case))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};
    use proptest::prelude::*;

    fn mask(bits: &[bool]) -> Mask {
        Mask::from_vec(Dims::new(1, 1, bits.len()), Spacing::UNIT, bits.to_vec()).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let p = mask(&[true, true, false, false]);
        assert_eq!(dsc(&p, &p).unwrap(), 1.0);
        assert_eq!(dsc(&p, &mask(&[false, false, true, true])).unwrap(), 0.0);
        // |P| = 3, |Q| = 4, |P∩Q| = 2
        let p = mask(&[true, true, true, false, false, false]);
        let q = mask(&[false, true, true, true, true, false]);
        assert!((dsc(&p, &q).unwrap() - 4.0 / 7.0).abs() < 1e-12);
        assert!((voe(&p, &q).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let e = mask(&[false; 4]);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(voe(&e, &e).unwrap(), 0.0);
        assert!(matches!(arvd(&e, &e), Err(MetricError::EmptyReference)));
        assert!(matches!(rvd(&e, &e), Err(MetricError::EmptyReference)));
        let r = MetricReport::compute(&e, &e, 0, 0).unwrap();
        assert_eq!(r.arvd, None);
    }

    #[test]
    fn volume_differences() {
        let q = mask(&[true, true, true, true, false, false, false, false]);
        assert_eq!(arvd(&q, &q).unwrap(), 0.0);
        assert_eq!(vd(&q, &q).unwrap(), 0);
        let p = mask(&[true, true, true, true, true, true, false, false]);
        assert_eq!(arvd(&p, &q).unwrap(), 0.5);
        assert_eq!(vd(&p, &q).unwrap(), 2);
        assert_eq!(vd(&q, &p).unwrap(), -2);
        assert!((rvd(&p, &q).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dims_mismatch() {
        assert!(dsc(&mask(&[true]), &mask(&[true, false])).is_err());
    }

    #[test]
    fn csv_output() {
        let q = mask(&[true, true, false]);
        let r = MetricReport::compute(&q, &q, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[("case_000".into(), r)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "case,dsc,voe,arvd,vd,rvd,clicks_fg,clicks_bg\ncase_000,1.000000,0.000000,0.000000,0,0.000000,2,1\n"
        );
    }

    proptest! {
        #[test]
        fn identities_and_oracle(
            a in proptest::collection::vec(any::<bool>(), 512),
            b in proptest::collection::vec(any::<bool>(), 512),
        ) {
            let dims = Dims::new(8, 8, 8);
            let p = Mask::from_vec(dims, Spacing::UNIT, a.clone()).unwrap();
            let q = Mask::from_vec(dims, Spacing::UNIT, b.clone()).unwrap();
            let d = dsc(&p, &q).unwrap();
            let v = voe(&p, &q).unwrap();
            prop_assert!((d - 2.0 * (1.0 - v) / (2.0 - v)).abs() < 1e-6);
            prop_assert_eq!(d, dsc(&q, &p).unwrap());
            prop_assert_eq!(v, voe(&q, &p).unwrap());
            let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as f64;
            let np = a.iter().filter(|x| **x).count() as f64;
            let nq = b.iter().filter(|x| **x).count() as f64;
            prop_assert!((d - 2.0 * inter / (np + nq)).abs() < 1e-12);
            prop_assert!((v - (1.0 - inter / (np + nq - inter))).abs() < 1e-12);
            prop_assert!((arvd(&p, &q).unwrap() - (np - nq).abs() / nq).abs() < 1e-12);
        }
    }
}
