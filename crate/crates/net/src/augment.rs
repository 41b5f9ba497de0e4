//! Symmetries of the square that map problem instances to problem instances.
//! Reflections commute with every operator here; the transpose only with
//! the isotropic ones.

use iuzawa_core::grf::{DatasetRecord, ExperimentKind};
use iuzawa_core::GridField;

/// Transpose of the last two axes, followed by optional flips of each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Symmetry {
    pub transpose: bool,
    pub flip_rows: bool,
    pub flip_cols: bool,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        transpose: false,
        flip_rows: false,
        flip_cols: false,
    };

    /// The symmetries that leave instances of `kind` well posed with the same solution map.
    pub fn group(kind: ExperimentKind) -> Vec<Symmetry> {
        let transposes: &[bool] = match kind {
            ExperimentKind::EllipticAniso => &[false],
            ExperimentKind::EllipticIso | ExperimentKind::Parabolic => &[false, true],
        };
        let mut out = Vec::new();
        for &transpose in transposes {
            for flip_rows in [false, true] {
                for flip_cols in [false, true] {
                    out.push(Symmetry {
                        transpose,
                        flip_rows,
                        flip_cols,
                    });
                }
            }
        }
        out
    }

    pub fn apply(&self, f: &GridField) -> GridField {
        let shape = f.domain().shape();
        let d = shape.len();
        let (rows, cols) = (shape[d - 2], shape[d - 1]);
        assert!(!self.transpose || rows == cols, "transpose needs a square grid");
        let plane = rows * cols;
        let src = f.values();
        let mut out = vec![0.0; src.len()];
        for (o, block) in out.chunks_mut(plane).enumerate() {
            let base = o * plane;
            for i in 0..rows {
                for j in 0..cols {
                    let (mut a, mut b) = if self.transpose { (j, i) } else { (i, j) };
                    if self.flip_rows {
                        a = rows - 1 - a;
                    }
                    if self.flip_cols {
                        b = cols - 1 - b;
                    }
                    block[i * cols + j] = src[base + a * cols + b];
                }
            }
        }
        GridField::new(f.domain().clone(), out).expect("same domain")
    }

    pub fn apply_record(&self, r: &DatasetRecord) -> DatasetRecord {
        DatasetRecord {
            y_d: self.apply(&r.y_d),
            f: self.apply(&r.f),
            u_a: self.apply(&r.u_a),
            u_b: self.apply(&r.u_b),
            u_star: self.apply(&r.u_star),
            residual: r.residual,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use iuzawa_core::grf::{gen_dataset, verify_dataset, Dataset, REFERENCE_TOL};

    #[test]
    fn group_elements_are_distinct_permutations() {
        let d = iuzawa_core::Domain::square(5).unwrap();
        let f = GridField::from_fn(&d, |x| x[0] + 10.0 * x[1]);
        let g = Symmetry::group(ExperimentKind::EllipticIso);
        assert_eq!(g.len(), 8);
        let images: Vec<GridField> = g.iter().map(|s| s.apply(&f)).collect();
        for (a, ia) in images.iter().enumerate() {
            let mut sorted = ia.values().to_vec();
            let mut orig = f.values().to_vec();
            sorted.sort_by(f64::total_cmp);
            orig.sort_by(f64::total_cmp);
            assert_eq!(sorted, orig);
            for ib in &images[a + 1..] {
                assert_ne!(ia, ib);
            }
        }
        assert_eq!(Symmetry::IDENTITY.apply(&f), f);
        assert_eq!(Symmetry::group(ExperimentKind::EllipticAniso).len(), 4);
    }

    #[test]
    fn transformed_references_remain_optimal() {
        for (kind, m) in [
            (ExperimentKind::EllipticIso, 12),
            (ExperimentKind::EllipticAniso, 12),
            (ExperimentKind::Parabolic, 6),
        ] {
            let ds = gen_dataset(kind, 1, m, 9).unwrap();
            for s in Symmetry::group(kind) {
                let t = Dataset {
                    kind,
                    domain: ds.domain.clone(),
                    records: vec![s.apply_record(&ds.records[0])],
                };
                let r = verify_dataset(&t).unwrap()[0];
                assert!(r <= 10.0 * REFERENCE_TOL, "{kind:?} {s:?}: residual {r}");
            }
        }
    }
}
