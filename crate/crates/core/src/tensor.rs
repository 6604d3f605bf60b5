//! Algebra on symmetric traceless tensors: the bulk potential, its gradient
//! and the spectral decompositions used by the diagnostics.
//!
//! A 3×3 tensor is stored by its coefficients in the basis
//!
//! ```text
//! E1 = (e1⊗e1 − e2⊗e2)/√2        E3 = (e1⊗e2 + e2⊗e1)/√2
//! E2 = (e1⊗e1 + e2⊗e2 − 2 e3⊗e3)/√6
//! E4 = (e1⊗e3 + e3⊗e1)/√2        E5 = (e2⊗e3 + e3⊗e2)/√2
//! ```
//!
//! which is orthonormal under `tr(AB)`. Symmetry and tracelessness therefore
//! hold by construction and `|Q|² = Σ cᵢ²`. Coefficient files written by this
//! crate use this basis and order.
//!
//! A planar (2×2) tensor is stored as `(Q₁₁, Q₁₂)` with `Q₂₂ = −Q₁₁`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT6: f64 = 0.408_248_290_463_863_f64;
const TWO_INV_SQRT6: f64 = 0.816_496_580_927_726_f64;

/// Default relative tolerance on `R_L / |Q|` below which a tensor is uniaxial.
pub const UNIAXIAL_TOL: f64 = 1e-8;

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn trace_of_product(a: &Mat3, b: &Mat3) -> f64 {
    let mut t = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            t += a[i][j] * b[j][i];
        }
    }
    t
}

/// Symmetric traceless 3×3 tensor in the orthonormal five-coefficient basis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QTensor3 {
    pub coeffs: [f64; 5],
}

impl QTensor3 {
    pub const ZERO: QTensor3 = QTensor3 { coeffs: [0.0; 5] };

    pub fn new(coeffs: [f64; 5]) -> Self {
        QTensor3 { coeffs }
    }

    /// Projects an arbitrary 3×3 matrix onto its symmetric traceless part.
    pub fn from_matrix(m: &Mat3) -> Self {
        QTensor3 {
            coeffs: [
                (m[0][0] - m[1][1]) * INV_SQRT2,
                (m[0][0] + m[1][1] - 2.0 * m[2][2]) * INV_SQRT6,
                (m[0][1] + m[1][0]) * INV_SQRT2,
                (m[0][2] + m[2][0]) * INV_SQRT2,
                (m[1][2] + m[2][1]) * INV_SQRT2,
            ],
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [c1, c2, c3, c4, c5] = self.coeffs;
        let d1 = c1 * INV_SQRT2;
        let d2 = c2 * INV_SQRT6;
        let o12 = c3 * INV_SQRT2;
        let o13 = c4 * INV_SQRT2;
        let o23 = c5 * INV_SQRT2;
        [
            [d1 + d2, o12, o13],
            [o12, -d1 + d2, o23],
            [o13, o23, -c2 * TWO_INV_SQRT6],
        ]
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &QTensor3) -> f64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn tr_cube(&self) -> f64 {
        let m = self.to_matrix();
        trace_of_product(&matmul(&m, &m), &m)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

macro_rules! impl_linear_ops {
    ($t:ty, $n:expr, $field:ident) => {
        impl Add for $t {
            type Output = $t;
            fn add(mut self, rhs: $t) -> $t {
                for i in 0..$n {
                    self.$field[i] += rhs.$field[i];
                }
                self
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(mut self, rhs: $t) -> $t {
                for i in 0..$n {
                    self.$field[i] -= rhs.$field[i];
                }
                self
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(mut self) -> $t {
                for i in 0..$n {
                    self.$field[i] = -self.$field[i];
                }
                self
            }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(mut self, rhs: f64) -> $t {
                for i in 0..$n {
                    self.$field[i] *= rhs;
                }
                self
            }
        }
        impl AddAssign for $t {
            fn add_assign(&mut self, rhs: $t) {
                for i in 0..$n {
                    self.$field[i] += rhs.$field[i];
                }
            }
        }
        impl SubAssign for $t {
            fn sub_assign(&mut self, rhs: $t) {
                for i in 0..$n {
                    self.$field[i] -= rhs.$field[i];
                }
            }
        }
    };
}

impl_linear_ops!(QTensor3, 5, coeffs);

/// Symmetric traceless 2×2 tensor `[[q1, q2], [q2, −q1]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QTensor2 {
    pub q: [f64; 2],
}

impl_linear_ops!(QTensor2, 2, q);

impl QTensor2 {
    pub const ZERO: QTensor2 = QTensor2 { q: [0.0; 2] };

    pub fn new(q1: f64, q2: f64) -> Self {
        QTensor2 { q: [q1, q2] }
    }

    pub fn to_matrix(&self) -> [[f64; 2]; 2] {
        [[self.q[0], self.q[1]], [self.q[1], -self.q[0]]]
    }

    /// `|Q|² = 2(q1² + q2²) = 2λ²`.
    pub fn norm_sq(&self) -> f64 {
        2.0 * (self.q[0] * self.q[0] + self.q[1] * self.q[1])
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `tr Q³` computed from the matrix entries. It vanishes identically for
    /// 2×2 traceless matrices and the summation below makes it exactly zero in
    /// floating point as well.
    pub fn tr_cube(&self) -> f64 {
        let m = self.to_matrix();
        let sq = square2(&m);
        let mut t = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                t += sq[i][j] * m[j][i];
            }
        }
        t
    }

    /// Planar uniaxial tensor `s (n⊗n − I/2)` for a director angle `phi`.
    pub fn from_director_angle(s: f64, phi: f64) -> Self {
        let (sin2, cos2) = (2.0 * phi).sin_cos();
        QTensor2::new(0.5 * s * cos2, 0.5 * s * sin2)
    }

    /// Angle of `(q1, q2)`; twice the director angle.
    pub fn phase(&self) -> f64 {
        self.q[1].atan2(self.q[0])
    }

    /// Scalar order parameter `s` of the planar representation `s(n⊗n − I/2)`.
    pub fn order(&self) -> f64 {
        2.0 * self.q[0].hypot(self.q[1])
    }
}

fn square2(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[i][0] * m[0][j] + m[i][1] * m[1][j];
        }
    }
    out
}

/// The two real roots of `2c²s² − b²s − 3a² = 0`, returned as `(s₊, s₋)`.
pub fn s_roots(a2: f64, b2: f64, c2: f64) -> (f64, f64) {
    let disc = (b2 * b2 + 24.0 * a2 * c2).sqrt();
    ((b2 + disc) / (4.0 * c2), (b2 - disc) / (4.0 * c2))
}

/// Bulk coefficients, elastic constant and the constants derived from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub l: f64,
    pub s_plus: f64,
    pub s_minus: f64,
    /// Additive constant that makes `min f_B = 0` for 3×3 tensors.
    pub gauge_c: f64,
}

impl MaterialParams {
    /// `a2`, `c2` and `l` must be positive; `b2` must be non-negative.
    pub fn new(a2: f64, b2: f64, c2: f64, l: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(a2) || !ok(c2) || !ok(l) || !(b2.is_finite() && b2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "material parameters must satisfy a2, c2, L > 0 and b2 >= 0 \
                 (got a2={a2}, b2={b2}, c2={c2}, L={l})"
            )));
        }
        let (s_plus, s_minus) = s_roots(a2, b2, c2);
        let gauge_c = a2 * s_plus * s_plus / 3.0 + 2.0 * b2 * s_plus.powi(3) / 27.0
            - c2 * s_plus.powi(4) / 9.0;
        Ok(MaterialParams {
            a2,
            b2,
            c2,
            l,
            s_plus,
            s_minus,
            gauge_c,
        })
    }

    pub fn with_l(&self, l: f64) -> Result<Self> {
        MaterialParams::new(self.a2, self.b2, self.c2, l)
    }

    /// `√(b⁴ + 24a²c²)`.
    pub fn root_discriminant(&self) -> f64 {
        (self.b2 * self.b2 + 24.0 * self.a2 * self.c2).sqrt()
    }

    /// Order parameter of the planar well `|Q|² = a²/c²` in the representation
    /// `s(n⊗n − I/2)`.
    pub fn planar_s_plus(&self) -> f64 {
        (2.0 * self.a2 / self.c2).sqrt()
    }

    /// Additive constant making the planar potential vanish on its well.
    pub fn planar_gauge(&self) -> f64 {
        self.a2 * self.a2 / (4.0 * self.c2)
    }

    /// `f_B(s(n⊗n − I/3))`.
    pub fn uniaxial_bulk(&self, s: f64) -> f64 {
        let s2 = s * s;
        -self.a2 * s2 / 3.0 - 2.0 * self.b2 * s2 * s / 27.0 + self.c2 * s2 * s2 / 9.0
            + self.gauge_c
    }

    /// `d/ds f_B(s(n⊗n − I/3)) = (2s/9)(2c²s² − b²s − 3a²)`.
    pub fn uniaxial_bulk_derivative(&self, s: f64) -> f64 {
        2.0 * s / 9.0 * (2.0 * self.c2 * s * s - self.b2 * s - 3.0 * self.a2)
    }

    /// Upper estimate of the bulk curvature near the minimizing set, used to
    /// scale pseudo-time steps.
    pub fn bulk_stiffness(&self) -> f64 {
        2.0 * (self.a2 + self.b2 * self.s_plus + self.c2 * self.s_plus * self.s_plus)
    }
}

/// `s(n⊗n − I/3)`; `n` must be a unit vector.
pub fn make_uniaxial(s: f64, n: &Vec3) -> Result<QTensor3> {
    let norm = norm3(n);
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotUnit { norm });
    }
    Ok(uniaxial_unchecked(s, n))
}

pub(crate) fn uniaxial_unchecked(s: f64, n: &Vec3) -> QTensor3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = s * n[i] * n[j];
        }
        m[i][i] -= s / 3.0;
    }
    QTensor3::from_matrix(&m)
}

/// `−(a²/2)trQ² − (b²/3)trQ³ + (c²/4)(trQ²)² + C`.
pub fn bulk_energy(q: &QTensor3, p: &MaterialParams) -> f64 {
    let t2 = q.norm_sq();
    -0.5 * p.a2 * t2 - p.b2 / 3.0 * q.tr_cube() + 0.25 * p.c2 * t2 * t2 + p.gauge_c
}

/// Gradient of [`bulk_energy`] with respect to the basis coefficients:
/// `−a²Q − b²(Q² − (trQ²/3)I) + c²Q trQ²`.
pub fn bulk_gradient(q: &QTensor3, p: &MaterialParams) -> QTensor3 {
    let m = q.to_matrix();
    let t2 = q.norm_sq();
    let sq = QTensor3::from_matrix(&matmul(&m, &m));
    *q * (-p.a2 + p.c2 * t2) - sq * p.b2
}

/// Uniaxial and biaxial parts of the Euler-Lagrange right-hand side,
/// `(−a² − b²|Q|/√6 + c²|Q|²)Q` and `b²(|Q|Q/√6 − Q² + |Q|²I/3)`.
/// Their sum equals [`bulk_gradient`]; the biaxial part vanishes on uniaxial
/// tensors with positive order parameter.
pub fn split_bulk_gradient(q: &QTensor3, p: &MaterialParams) -> (QTensor3, QTensor3) {
    let norm = q.norm();
    let m = q.to_matrix();
    let sq = QTensor3::from_matrix(&matmul(&m, &m));
    let uni = *q * (-p.a2 - p.b2 * norm * INV_SQRT6 + p.c2 * norm * norm);
    let biax = (*q * (norm * INV_SQRT6) - sq) * p.b2;
    (uni, biax)
}

/// Planar bulk potential `−(a²/2)trQ² − (b²/3)trQ³ + (c²/4)(trQ²)² + a⁴/4c²`.
/// The cubic term is evaluated but is exactly zero.
pub fn bulk_energy_planar(q: &QTensor2, p: &MaterialParams) -> f64 {
    let t2 = q.norm_sq();
    -0.5 * p.a2 * t2 - p.b2 / 3.0 * q.tr_cube() + 0.25 * p.c2 * t2 * t2 + p.planar_gauge()
}

/// Gradient of [`bulk_energy_planar`] with respect to `(q1, q2)`.
pub fn bulk_gradient_planar(q: &QTensor2, p: &MaterialParams) -> QTensor2 {
    let m = q.to_matrix();
    let t2 = q.norm_sq();
    let sq = square2(&m);
    let half_tr = 0.5 * (sq[0][0] + sq[1][1]);
    // traceless part of Q²; identically zero in two dimensions
    let cubic = QTensor2::new(sq[0][0] - half_tr, sq[0][1]);
    let g = *q * (-p.a2 + p.c2 * t2) - cubic * p.b2;
    // d/dq1 = G11 − G22 = 2 G11, d/dq2 = 2 G12
    g * 2.0
}

/// β² = 1 − 6(trQ³)²/|Q|⁶, clamped to [0, 1].
pub fn biaxiality(q: &QTensor3) -> Result<f64> {
    let t2 = q.norm_sq();
    if !(t2 > 0.0) {
        return Err(Error::Undefined("biaxiality of the zero tensor"));
    }
    let t3 = q.tr_cube();
    Ok((1.0 - 6.0 * t3 * t3 / (t2 * t2 * t2)).clamp(0.0, 1.0))
}

/// Full spectral data of a Q-tensor together with the amplitudes of the
/// representation `Q = S(n⊗n − I/3) + R(m⊗m − p⊗p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralDecomp {
    /// λ₁ ≥ λ₂ ≥ λ₃.
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors matching `eigenvalues`.
    pub eigenvectors: [Vec3; 3],
    /// Eigenvector of the distinct eigenvalue.
    pub n: Vec3,
    pub m: Vec3,
    pub p: Vec3,
    pub s_l: f64,
    /// Half the smaller eigenvalue gap; non-negative.
    pub r_l: f64,
    pub uniaxial: bool,
    pub isotropic: bool,
}

impl SpectralDecomp {
    pub fn reconstruct(&self) -> QTensor3 {
        let mut mat = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                mat[i][j] = self.s_l * self.n[i] * self.n[j]
                    + self.r_l * (self.m[i] * self.m[j] - self.p[i] * self.p[j]);
            }
            mat[i][i] -= self.s_l / 3.0;
        }
        QTensor3::from_matrix(&mat)
    }
}

/// Eigendecomposition with the deterministic tie-breaking used throughout
/// the crate. `tol` is the uniaxiality threshold on `R_L / |Q|`.
pub fn decompose(q: &QTensor3, tol: f64) -> SpectralDecomp {
    let norm = q.norm();
    if norm == 0.0 {
        let frame = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        return SpectralDecomp {
            eigenvalues: [0.0; 3],
            eigenvectors: frame,
            n: frame[0],
            m: frame[1],
            p: frame[2],
            s_l: 0.0,
            r_l: 0.0,
            uniaxial: false,
            isotropic: true,
        };
    }
    let (vals, vecs) = symmetric_eigen(&q.to_matrix());
    let (vals, vecs) = canonical_frame(vals, vecs, norm);
    let gap_top = vals[0] - vals[1];
    let gap_bottom = vals[1] - vals[2];
    let (n, m, p, s_l, r_l) = if gap_top >= gap_bottom {
        (vecs[0], vecs[1], vecs[2], 1.5 * vals[0], 0.5 * gap_bottom)
    } else {
        (vecs[2], vecs[0], vecs[1], 1.5 * vals[2], 0.5 * gap_top)
    };
    SpectralDecomp {
        eigenvalues: vals,
        eigenvectors: vecs,
        n,
        m,
        p,
        s_l,
        r_l,
        uniaxial: r_l <= tol * norm,
        isotropic: false,
    }
}

fn fix_sign(v: Vec3) -> Vec3 {
    for c in v {
        if c.abs() > 1e-14 {
            return if c < 0.0 { [-v[0], -v[1], -v[2]] } else { v };
        }
    }
    v
}

fn normalized(v: Vec3) -> Vec3 {
    let n = norm3(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Gram-Schmidt against the reference axes inside degenerate eigenspaces and
/// first-nonzero-component-positive sign convention.
fn canonical_frame(vals: [f64; 3], mut vecs: [Vec3; 3], scale: f64) -> ([f64; 3], [Vec3; 3]) {
    let deg_tol = 1e-12 * scale;
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let pair = if vals[0] - vals[1] <= deg_tol {
        Some((0, 1, 2))
    } else if vals[1] - vals[2] <= deg_tol {
        Some((1, 2, 0))
    } else {
        None
    };
    if let Some((i, j, k)) = pair {
        let distinct = vecs[k];
        let mut first = None;
        for axis in axes.iter() {
            let proj = dot3(axis, &distinct);
            let cand = [
                axis[0] - proj * distinct[0],
                axis[1] - proj * distinct[1],
                axis[2] - proj * distinct[2],
            ];
            if norm3(&cand) > 1e-6 {
                first = Some(normalized(cand));
                break;
            }
        }
        let u = fix_sign(first.expect("some reference axis leaves the complement"));
        let w = fix_sign(normalized(cross3(&distinct, &u)));
        vecs[i] = u;
        vecs[j] = w;
    }
    for v in vecs.iter_mut() {
        *v = fix_sign(*v);
    }
    (vals, vecs)
}

/// Cyclic Jacobi eigensolver for a symmetric 3×3 matrix. Eigenvalues are
/// returned in descending order with matching unit eigenvectors.
pub fn symmetric_eigen(m: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return ([0.0; 3], v);
    }
    let thresh = f64::EPSILON * 1e-3 * scale;
    for _ in 0..64 {
        if a[0][1].abs() <= thresh && a[0][2].abs() <= thresh && a[1][2].abs() <= thresh {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() <= thresh {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for row in a.iter_mut() {
                let (akp, akq) = (row[p], row[q]);
                row[p] = c * akp - s * akq;
                row[q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vkp, vkq) = (row[p], row[q]);
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let col = |c: usize| [v[0][c], v[1][c], v[2][c]];
    (vals, [col(order[0]), col(order[1]), col(order[2])])
}

/// Common interface for the two tensor representations stored in fields.
pub trait OrderTensor: Copy + Send + Sync + 'static {
    const DOFS: usize;
    /// Scale between squared coefficient distance and `|ΔQ|²`.
    const METRIC: f64;
    fn read(values: &[f64]) -> Self;
    fn write(&self, out: &mut [f64]);
    fn norm_sq(&self) -> f64;
    fn bulk(&self, p: &MaterialParams) -> f64;
    fn bulk_coeff_gradient(&self, p: &MaterialParams) -> Self;
    fn component(&self, i: usize) -> f64;
}

impl OrderTensor for QTensor3 {
    const DOFS: usize = 5;
    const METRIC: f64 = 1.0;
    fn read(values: &[f64]) -> Self {
        QTensor3::new([values[0], values[1], values[2], values[3], values[4]])
    }
    fn write(&self, out: &mut [f64]) {
        out[..5].copy_from_slice(&self.coeffs);
    }
    fn norm_sq(&self) -> f64 {
        QTensor3::norm_sq(self)
    }
    fn bulk(&self, p: &MaterialParams) -> f64 {
        bulk_energy(self, p)
    }
    fn bulk_coeff_gradient(&self, p: &MaterialParams) -> Self {
        bulk_gradient(self, p)
    }
    fn component(&self, i: usize) -> f64 {
        self.coeffs[i]
    }
}

impl OrderTensor for QTensor2 {
    const DOFS: usize = 2;
    const METRIC: f64 = 2.0;
    fn read(values: &[f64]) -> Self {
        QTensor2::new(values[0], values[1])
    }
    fn write(&self, out: &mut [f64]) {
        out[..2].copy_from_slice(&self.q);
    }
    fn norm_sq(&self) -> f64 {
        QTensor2::norm_sq(self)
    }
    fn bulk(&self, p: &MaterialParams) -> f64 {
        bulk_energy_planar(self, p)
    }
    fn bulk_coeff_gradient(&self, p: &MaterialParams) -> Self {
        bulk_gradient_planar(self, p)
    }
    fn component(&self, i: usize) -> f64 {
        self.q[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn mat_close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let k = normalized(axis);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [c + k[0] * k[0] * t, k[0] * k[1] * t - k[2] * s, k[0] * k[2] * t + k[1] * s],
            [k[1] * k[0] * t + k[2] * s, c + k[1] * k[1] * t, k[1] * k[2] * t - k[0] * s],
            [k[2] * k[0] * t - k[1] * s, k[2] * k[1] * t + k[0] * s, c + k[2] * k[2] * t],
        ]
    }

    fn transpose(m: &Mat3) -> Mat3 {
        let mut t = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = m[j][i];
            }
        }
        t
    }

    #[test]
    fn basis_reconstruction_is_symmetric_and_traceless() {
        let q = QTensor3::new([0.3, -1.2, 0.7, 0.1, -0.4]);
        let m = q.to_matrix();
        assert!((m[0][0] + m[1][1] + m[2][2]).abs() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        let frob: f64 = m.iter().flatten().map(|x| x * x).sum();
        assert!((frob - q.norm_sq()).abs() < 1e-14);
        let back = QTensor3::from_matrix(&m);
        for (a, b) in back.coeffs.iter().zip(q.coeffs.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn make_uniaxial_examples() {
        let z = make_uniaxial(0.0, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(z.norm_sq(), 0.0);
        let q = make_uniaxial(1.0, &[0.0, 0.0, 1.0]).unwrap();
        let expect = [[-1.0 / 3.0, 0.0, 0.0], [0.0, -1.0 / 3.0, 0.0], [0.0, 0.0, 2.0 / 3.0]];
        assert!(mat_close(&q.to_matrix(), &expect, 1e-15));
        let q = make_uniaxial(1.5, &[1.0, 0.0, 0.0]).unwrap();
        assert!((q.norm_sq() - 1.5).abs() < 1e-14);
        assert!(matches!(
            make_uniaxial(1.0, &[1.0, 1.0, 0.0]),
            Err(Error::NotUnit { .. })
        ));
    }

    #[test]
    fn s_roots_examples() {
        let (sp, sm) = s_roots(1.0, 1.0, 1.0);
        assert_eq!(sp, 1.5);
        assert_eq!(sm, -1.0);
        let (sp, sm) = s_roots(1.0, 0.0, 1.0);
        assert!((sp - 1.5f64.sqrt()).abs() < 1e-15);
        assert!((sm + 1.5f64.sqrt()).abs() < 1e-15);
        let p = params();
        let n = normalized([0.3, -0.2, 0.9]);
        let q = make_uniaxial(p.s_plus, &n).unwrap();
        assert!(bulk_energy(&q, &p).abs() < 1e-14);
        assert!(p.uniaxial_bulk_derivative(p.s_plus).abs() < 1e-14);
        let eps = 1e-6;
        let fd = (p.uniaxial_bulk(p.s_plus + eps) - p.uniaxial_bulk(p.s_plus - eps)) / (2.0 * eps);
        assert!(fd.abs() < 1e-9);
    }

    #[test]
    fn gauge_constant_for_unit_coefficients() {
        let p = params();
        assert!((p.gauge_c - 0.4375).abs() < 1e-15);
        assert!((bulk_energy(&QTensor3::ZERO, &p) - 0.4375).abs() < 1e-15);
    }

    #[test]
    fn uniaxial_restriction_matches_tensor_potential() {
        let p = MaterialParams::new(0.7, 1.3, 0.9, 1.0).unwrap();
        let n = normalized([1.0, 2.0, -0.5]);
        for s in [-0.8, 0.0, 0.4, 1.1, 2.0] {
            let q = make_uniaxial(s, &n).unwrap();
            assert!((bulk_energy(&q, &p) - p.uniaxial_bulk(s)).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_vanishes_on_minimizers_and_zero() {
        let p = params();
        let q = make_uniaxial(p.s_plus, &normalized([0.1, 0.5, -0.3])).unwrap();
        assert!(bulk_gradient(&q, &p).norm() < 1e-14);
        assert_eq!(bulk_gradient(&QTensor3::ZERO, &p).norm(), 0.0);
    }

    #[test]
    fn decompose_examples() {
        let q = make_uniaxial(1.2, &[0.0, 0.0, 1.0]).unwrap();
        let d = decompose(&q, UNIAXIAL_TOL);
        assert!((d.s_l - 1.2).abs() < 1e-14);
        assert!(d.r_l.abs() < 1e-14);
        assert!(d.uniaxial && !d.isotropic);
        assert_eq!(d.n, [0.0, 0.0, 1.0]);
        // degenerate pair resolved against e1 then e2
        assert_eq!(d.m, [1.0, 0.0, 0.0]);
        assert_eq!(d.p, [0.0, 1.0, 0.0]);

        let d = decompose(&QTensor3::ZERO, UNIAXIAL_TOL);
        assert!(d.isotropic && d.s_l == 0.0 && d.r_l == 0.0);

        let lam = 0.8;
        let q = QTensor3::from_matrix(&[[lam, 0.0, 0.0], [0.0, -lam, 0.0], [0.0, 0.0, 0.0]]);
        assert!(q.tr_cube().abs() < 1e-15);
        let d = decompose(&q, UNIAXIAL_TOL);
        assert!(!d.uniaxial);
        assert!((d.r_l - 0.5 * lam).abs() < 1e-14);
        assert!((biaxiality(&q).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn oblate_uniaxial_uses_lowest_eigenvalue() {
        let q = make_uniaxial(-1.0, &[0.0, 1.0, 0.0]).unwrap();
        let d = decompose(&q, UNIAXIAL_TOL);
        assert!(d.uniaxial);
        assert!((d.s_l + 1.0).abs() < 1e-14);
        assert!((d.n[1].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn biaxiality_examples() {
        let q = make_uniaxial(0.9, &normalized([1.0, 1.0, 1.0])).unwrap();
        assert!(biaxiality(&q).unwrap() < 1e-12);
        for s in [-2.0, 0.01, 3.0] {
            let q = make_uniaxial(s, &[0.0, 1.0, 0.0]).unwrap();
            assert!(biaxiality(&q).unwrap() < 1e-12);
        }
        assert!(biaxiality(&QTensor3::ZERO).is_err());
    }

    #[test]
    fn split_sums_to_gradient_and_biaxial_part_vanishes_on_prolate() {
        let p = params();
        let q = QTensor3::new([0.2, -0.5, 0.3, 0.9, 0.1]);
        let (u, b) = split_bulk_gradient(&q, &p);
        let g = bulk_gradient(&q, &p);
        assert!((u + b - g).norm() < 1e-13);
        let q = make_uniaxial(0.7, &normalized([0.2, 0.4, 1.0])).unwrap();
        let (_, b) = split_bulk_gradient(&q, &p);
        assert!(b.norm() < 1e-14);
        // Q² − (trQ²/3)I = (s/3)Q for uniaxial Q
        let m = q.to_matrix();
        let sq = QTensor3::from_matrix(&matmul(&m, &m));
        assert!((sq - q * (0.7 / 3.0)).norm() < 1e-14);
    }

    #[test]
    fn planar_cubic_term_is_exactly_zero() {
        let p = MaterialParams::new(1.0, 2.5, 1.0, 1.0).unwrap();
        let p0 = MaterialParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let q = QTensor2::new(0.37, -1.91);
        assert_eq!(q.tr_cube(), 0.0);
        assert_eq!(bulk_energy_planar(&q, &p), bulk_energy_planar(&q, &p0));
        assert_eq!(bulk_gradient_planar(&q, &p), bulk_gradient_planar(&q, &p0));
        assert_eq!(q.norm_sq(), 2.0 * (0.37f64 * 0.37 + 1.91 * 1.91));
    }

    #[test]
    fn planar_gradient_matches_finite_differences() {
        let p = params();
        let q = QTensor2::new(0.4, 0.25);
        let g = bulk_gradient_planar(&q, &p);
        let eps = 1e-6;
        for i in 0..2 {
            let mut hi = q;
            let mut lo = q;
            hi.q[i] += eps;
            lo.q[i] -= eps;
            let fd = (bulk_energy_planar(&hi, &p) - bulk_energy_planar(&lo, &p)) / (2.0 * eps);
            assert!((fd - g.q[i]).abs() < 1e-8 * (1.0 + fd.abs()));
        }
    }

    fn arb_tensor() -> impl Strategy<Value = QTensor3> {
        proptest::array::uniform5(-2.0f64..2.0).prop_map(QTensor3::new)
    }

    proptest! {
        #[test]
        fn bulk_energy_is_rotation_invariant(q in arb_tensor(), ax in proptest::array::uniform3(-1.0f64..1.0), ang in 0.0f64..6.28) {
            prop_assume!(norm3(&ax) > 1e-3);
            let p = MaterialParams::new(0.8, 1.4, 1.1, 1.0).unwrap();
            let r = rotation(ax, ang);
            let rq = QTensor3::from_matrix(&matmul(&matmul(&r, &q.to_matrix()), &transpose(&r)));
            let e0 = bulk_energy(&q, &p);
            let e1 = bulk_energy(&rq, &p);
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0.abs().max(1.0));
        }

        #[test]
        fn bulk_energy_is_nonnegative(q in arb_tensor()) {
            let p = MaterialParams::new(0.8, 1.4, 1.1, 1.0).unwrap();
            prop_assert!(bulk_energy(&q, &p) >= -1e-12);
        }

        #[test]
        fn decompose_reconstructs(q in arb_tensor()) {
            let d = decompose(&q, UNIAXIAL_TOL);
            prop_assert!((d.reconstruct() - q).norm() <= 1e-10 * q.norm().max(1e-300));
            prop_assert!(d.eigenvalues.iter().sum::<f64>().abs() <= 1e-12 * q.norm());
            prop_assert!(d.eigenvalues[0] >= d.eigenvalues[1] && d.eigenvalues[1] >= d.eigenvalues[2]);
        }

        #[test]
        fn biaxiality_in_unit_interval_and_zero_iff_uniaxial(q in arb_tensor(), s in -2.0f64..2.0, n in proptest::array::uniform3(-1.0f64..1.0)) {
            prop_assume!(q.norm() > 1e-6 && norm3(&n) > 1e-3 && s.abs() > 1e-3);
            let b = biaxiality(&q).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            let u = make_uniaxial(s, &normalized(n)).unwrap();
            let d = decompose(&u, UNIAXIAL_TOL);
            prop_assert!(d.uniaxial);
            prop_assert!(biaxiality(&u).unwrap() < 1e-12);
            if s > 0.0 {
                prop_assert!((d.eigenvalues[0] - 2.0 * s / 3.0).abs() < 1e-12);
            }
        }
    }
}
