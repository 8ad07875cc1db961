use crate::cones::Cone;
use crate::sparse::CscMatrix;
use crate::{ConicError, Real};
use serde::{Deserialize, Serialize};

/// Standard-form cone program
///
/// ```text
/// minimize    cᵀx
/// subject to  A x = b
///             G x + s = h,  s ∈ K = K_1 × … × K_p
/// ```
///
/// The cone list partitions the rows of `G` (the slack vector `s`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram<T> {
    pub c: Vec<T>,
    pub a: CscMatrix<T>,
    pub b: Vec<T>,
    pub g: CscMatrix<T>,
    pub h: Vec<T>,
    pub cones: Vec<Cone>,
}

impl<T: Real> ConicProgram<T> {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.c.len();
        let bad = |m: String| Err(ConicError::Malformed(m));
        if self.a.ncols != n || self.g.ncols != n {
            return bad(format!("A has {} cols, G has {} cols, c has {}", self.a.ncols, self.g.ncols, n));
        }
        if self.a.nrows != self.b.len() {
            return bad(format!("A has {} rows but b has {}", self.a.nrows, self.b.len()));
        }
        if self.g.nrows != self.h.len() {
            return bad(format!("G has {} rows but h has {}", self.g.nrows, self.h.len()));
        }
        let k: usize = self.cones.iter().map(|c| c.dim()).sum();
        if k != self.h.len() {
            return bad(format!("cone dimensions sum to {k} but G has {} rows", self.h.len()));
        }
        if self.cones.iter().any(|c| c.dim() == 0) {
            return bad("empty cone block".into());
        }
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite_val());
        if !finite(&self.c) || !finite(&self.b) || !finite(&self.h) || !finite(&self.a.nzval) || !finite(&self.g.nzval) {
            return bad("non-finite data".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProgramFile::from_program(self)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self, ConicError> {
        let f: ProgramFile = serde_json::from_str(s).map_err(|e| ConicError::Malformed(e.to_string()))?;
        let p = f.into_program()?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    nrows: usize,
    ncols: usize,
    /// (row, col, value)
    triplets: Vec<(usize, usize, f64)>,
}

/// On-disk JSON layout for program dumps.
#[derive(Serialize, Deserialize)]
struct ProgramFile {
    c: Vec<f64>,
    a: MatrixFile,
    b: Vec<f64>,
    g: MatrixFile,
    h: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProgramFile {
    fn from_program<T: Real>(p: &ConicProgram<T>) -> Self {
        let mf = |m: &CscMatrix<T>| MatrixFile {
            nrows: m.nrows,
            ncols: m.ncols,
            triplets: m.triplets().into_iter().map(|(r, c, v)| (r, c, v.to_f())).collect(),
        };
        let v = |x: &[T]| x.iter().map(|v| v.to_f()).collect();
        ProgramFile { c: v(&p.c), a: mf(&p.a), b: v(&p.b), g: mf(&p.g), h: v(&p.h), cones: p.cones.clone() }
    }

    fn into_program<T: Real>(self) -> Result<ConicProgram<T>, ConicError> {
        let mf = |m: MatrixFile| {
            if let Some((r, c, _)) = m.triplets.iter().find(|(r, c, _)| *r >= m.nrows || *c >= m.ncols) {
                return Err(ConicError::Malformed(format!("triplet ({r},{c}) outside {}x{}", m.nrows, m.ncols)));
            }
            let t: Vec<(usize, usize, T)> = m.triplets.into_iter().map(|(r, c, v)| (r, c, T::lit(v))).collect();
            Ok(CscMatrix::from_triplets(m.nrows, m.ncols, &t))
        };
        let v = |x: Vec<f64>| x.into_iter().map(T::lit).collect();
        Ok(ConicProgram { c: v(self.c), a: mf(self.a)?, b: v(self.b), g: mf(self.g)?, h: v(self.h), cones: self.cones })
    }
}
