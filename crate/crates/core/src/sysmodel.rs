//! Nominal plant data model: the nine-matrix discrete-time LTI system that
//! sits in feedback with a repeated ReLU, plus transfer-function realization
//! and well-posedness checks for the implicit loop equation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Channel dimensions of a [`StateSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_v: usize,
    pub n_w: usize,
    pub n_d: usize,
    pub n_e: usize,
}

/// Raw, possibly incomplete plant matrices. Missing blocks are zero-filled by
/// [`StateSpace::new`] once every dimension has been inferred.
#[derive(Debug, Clone, Default)]
pub struct PlantMatrices {
    pub a: Option<DMatrix<f64>>,
    pub b1: Option<DMatrix<f64>>,
    pub b2: Option<DMatrix<f64>>,
    pub c1: Option<DMatrix<f64>>,
    pub c2: Option<DMatrix<f64>>,
    pub d11: Option<DMatrix<f64>>,
    pub d12: Option<DMatrix<f64>>,
    pub d21: Option<DMatrix<f64>>,
    pub d22: Option<DMatrix<f64>>,
}

/// Nominal plant
///
/// ```text
/// x(k+1) = A x(k)  + B1 w(k)  + B2 d(k)
/// v(k)   = C1 x(k) + D11 w(k) + D12 d(k)
/// e(k)   = C2 x(k) + D21 w(k) + D22 d(k)
/// ```
///
/// closed through `w = relu(v)`. Immutable once built; all shapes are
/// consistent and all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
    c1: DMatrix<f64>,
    c2: DMatrix<f64>,
    d11: DMatrix<f64>,
    d12: DMatrix<f64>,
    d21: DMatrix<f64>,
    d22: DMatrix<f64>,
    dims: Dims,
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    V,
    W,
    D,
    E,
}

const MATRIX_AXES: [(&str, Axis, Axis); 9] = [
    ("A", Axis::X, Axis::X),
    ("B1", Axis::X, Axis::W),
    ("B2", Axis::X, Axis::D),
    ("C1", Axis::V, Axis::X),
    ("C2", Axis::E, Axis::X),
    ("D11", Axis::V, Axis::W),
    ("D12", Axis::V, Axis::D),
    ("D21", Axis::E, Axis::W),
    ("D22", Axis::E, Axis::D),
];

impl PlantMatrices {
    fn slots(&self) -> [&Option<DMatrix<f64>>; 9] {
        [
            &self.a, &self.b1, &self.b2, &self.c1, &self.c2, &self.d11, &self.d12, &self.d21,
            &self.d22,
        ]
    }
}

impl StateSpace {
    /// Validate and assemble a plant. Dimensions are inferred from whichever
    /// blocks are present; absent blocks become zero matrices.
    pub fn new(m: PlantMatrices) -> Result<Self> {
        let mut known: [Option<(usize, &str)>; 5] = [None; 5];
        let mut assign = |axis: Axis, size: usize, name: &'static str| -> Result<()> {
            let slot = &mut known[axis as usize];
            match *slot {
                Some((prev, prev_name)) if prev != size => Err(Error::DimensionMismatch(format!(
                    "{name} implies dimension {size} but {prev_name} implies {prev}"
                ))),
                Some(_) => Ok(()),
                None => {
                    *slot = Some((size, name));
                    Ok(())
                }
            }
        };
        for ((name, rows, cols), mat) in MATRIX_AXES.iter().zip(m.slots()) {
            if let Some(mat) = mat {
                assign(*rows, mat.nrows(), name)?;
                assign(*cols, mat.ncols(), name)?;
            }
        }
        let get = |axis: Axis| known[axis as usize].map(|(n, _)| n);
        let (n_v, n_w) = match (get(Axis::V), get(Axis::W)) {
            (Some(v), Some(w)) if v != w => return Err(Error::ChannelMismatch { n_v: v, n_w: w }),
            (Some(v), _) | (None, Some(v)) => (v, v),
            (None, None) => (0, 0),
        };
        let dims = Dims {
            n_x: get(Axis::X).unwrap_or(0),
            n_v,
            n_w,
            n_d: get(Axis::D).unwrap_or(0),
            n_e: get(Axis::E).unwrap_or(0),
        };
        let size = |axis: Axis| match axis {
            Axis::X => dims.n_x,
            Axis::V => dims.n_v,
            Axis::W => dims.n_w,
            Axis::D => dims.n_d,
            Axis::E => dims.n_e,
        };
        let mut filled: Vec<DMatrix<f64>> = Vec::with_capacity(9);
        for ((name, rows, cols), mat) in MATRIX_AXES.iter().zip(m.slots()) {
            let mat = mat
                .clone()
                .unwrap_or_else(|| DMatrix::zeros(size(*rows), size(*cols)));
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite((*name).to_string()));
            }
            filled.push(mat);
        }
        let mut it = filled.into_iter();
        let mut next = || it.next().expect("nine blocks");
        Ok(Self {
            a: next(),
            b1: next(),
            b2: next(),
            c1: next(),
            c2: next(),
            d11: next(),
            d12: next(),
            d21: next(),
            d22: next(),
            dims,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }
    pub fn b2(&self) -> &DMatrix<f64> {
        &self.b2
    }
    pub fn c1(&self) -> &DMatrix<f64> {
        &self.c1
    }
    pub fn c2(&self) -> &DMatrix<f64> {
        &self.c2
    }
    pub fn d11(&self) -> &DMatrix<f64> {
        &self.d11
    }
    pub fn d12(&self) -> &DMatrix<f64> {
        &self.d12
    }
    pub fn d21(&self) -> &DMatrix<f64> {
        &self.d21
    }
    pub fn d22(&self) -> &DMatrix<f64> {
        &self.d22
    }

    /// Blocks in the canonical order `A, B1, B2, C1, C2, D11, D12, D21, D22`,
    /// paired with their names.
    pub fn blocks(&self) -> [(&'static str, &DMatrix<f64>); 9] {
        [
            ("A", &self.a),
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("C1", &self.c1),
            ("C2", &self.c2),
            ("D11", &self.d11),
            ("D12", &self.d12),
            ("D21", &self.d21),
            ("D22", &self.d22),
        ]
    }

    /// All blocks as optional inputs again, e.g. for editing a copy.
    pub fn to_matrices(&self) -> PlantMatrices {
        PlantMatrices {
            a: Some(self.a.clone()),
            b1: Some(self.b1.clone()),
            b2: Some(self.b2.clone()),
            c1: Some(self.c1.clone()),
            c2: Some(self.c2.clone()),
            d11: Some(self.d11.clone()),
            d12: Some(self.d12.clone()),
            d21: Some(self.d21.clone()),
            d22: Some(self.d22.clone()),
        }
    }
}

/// SISO transfer function in descending powers of `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunctionSiso {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

/// `(A, B, C)` with `C (zI - A)^{-1} B` equal to the source transfer function.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

fn strip_leading_zeros(c: &[f64]) -> &[f64] {
    let first = c.iter().position(|&x| x != 0.0).unwrap_or(c.len());
    &c[first..]
}

/// Controllable canonical realization of a strictly proper SISO transfer
/// function. For `den = z^n + a1 z^{n-1} + ... + an` (after normalizing the
/// leading coefficient), `A` is the companion matrix with first row
/// `(-a1, ..., -an)`, `B = e1`, and `C` holds the numerator coefficients
/// right-aligned to length `n`.
pub fn tf_to_ss(tf: &TransferFunctionSiso) -> Result<Realization> {
    if tf.num.iter().chain(&tf.den).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("transfer function".into()));
    }
    let den = strip_leading_zeros(&tf.den);
    if den.is_empty() {
        return Err(Error::ZeroDenominator);
    }
    let num = strip_leading_zeros(&tf.num);
    let n = den.len() - 1;
    if !num.is_empty() && num.len() - 1 >= n {
        return Err(Error::NotStrictlyProper);
    }
    let lead = den[0];
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(0, j)] = -den[j + 1] / lead;
    }
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DMatrix::zeros(n, 1);
    if n > 0 {
        b[(0, 0)] = 1.0;
    }
    let mut c = DMatrix::zeros(1, n);
    let offset = n - num.len();
    for (j, &coef) in num.iter().enumerate() {
        c[(0, offset + j)] = coef / lead;
    }
    Ok(Realization { a, b, c })
}

/// Numerator and denominator of the Lurye benchmark loop transfer function
/// `G11(z) = (2z + 0.92) / (z^2 - 0.5z)`.
pub fn lurye_g11() -> TransferFunctionSiso {
    TransferFunctionSiso {
        num: vec![2.0, 0.92],
        den: vec![1.0, -0.5, 0.0],
    }
}

/// Lurye benchmark in LFT form: `v = -alpha G11 w + d`, `e = w`.
pub fn build_lurye(alpha: f64) -> Result<StateSpace> {
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha".into()));
    }
    if alpha < 0.0 {
        return Err(Error::NegativeAlpha(alpha));
    }
    let r = tf_to_ss(&lurye_g11())?;
    let n_x = r.a.nrows();
    StateSpace::new(PlantMatrices {
        a: Some(r.a),
        b1: Some(r.b),
        b2: Some(DMatrix::zeros(n_x, 1)),
        c1: Some(r.c * -alpha),
        c2: Some(DMatrix::zeros(1, n_x)),
        d11: Some(DMatrix::zeros(1, 1)),
        d12: Some(DMatrix::from_element(1, 1, 1.0)),
        d21: Some(DMatrix::from_element(1, 1, 1.0)),
        d22: Some(DMatrix::zeros(1, 1)),
    })
}

/// Four-state, two-ReLU RNN used as the gain benchmark. Feedthrough blocks
/// are zero.
pub fn gain_example() -> StateSpace {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.84, -0.17,  0.10, -0.04,
        0.17,  0.80, -0.11, -0.04,
        0.05, -0.11,  0.90, -0.08,
       -0.04,  0.18,  0.01,  0.74,
    ]);
    #[rustfmt::skip]
    let b1 = DMatrix::from_row_slice(4, 2, &[
        -0.08, -0.18,
        -0.11,  0.11,
        -0.01, -0.05,
        -0.04,  0.03,
    ]);
    #[rustfmt::skip]
    let b2 = DMatrix::from_row_slice(4, 3, &[
        -0.04,  0.11,  0.14,
        -0.06,  0.03, -0.02,
         0.02, -0.03,  0.01,
         0.04, -0.08,  0.20,
    ]);
    #[rustfmt::skip]
    let c1 = DMatrix::from_row_slice(2, 4, &[
        -0.35, -0.40, -1.04,  1.36,
         0.90,  0.55,  1.13, -0.46,
    ]);
    #[rustfmt::skip]
    let c2 = DMatrix::from_row_slice(3, 4, &[
         0.79, -0.62, -1.87, -0.09,
        -0.67, -1.05,  1.80, -0.06,
         2.25, -1.08, -0.36,  1.08,
    ]);
    StateSpace::new(PlantMatrices {
        a: Some(a),
        b1: Some(b1),
        b2: Some(b2),
        c1: Some(c1),
        c2: Some(c2),
        ..Default::default()
    })
    .expect("benchmark data is consistent")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WellPosedStatus {
    ProvenWellPosed,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub status: WellPosedStatus,
    pub reason: String,
}

/// Sufficient checks for unique solvability of `v = C1 x + D11 relu(v) + D12 d`.
/// Never concludes ill-posedness.
pub fn check_well_posed(ss: &StateSpace) -> WellPosedness {
    let d11 = ss.d11();
    if d11.iter().all(|&x| x == 0.0) {
        return WellPosedness {
            status: WellPosedStatus::ProvenWellPosed,
            reason: "D11 = 0: loop equation is explicit".into(),
        };
    }
    let norm = linalg::spectral_norm(d11);
    if norm < 1.0 {
        WellPosedness {
            status: WellPosedStatus::ProvenWellPosed,
            reason: format!("||D11||_2 = {norm:.6} < 1: loop map is a contraction"),
        }
    } else {
        WellPosedness {
            status: WellPosedStatus::Unknown,
            reason: format!(
                "||D11||_2 = {norm:.6} >= 1: neither D11 = 0 nor the contraction test applies"
            ),
        }
    }
}
