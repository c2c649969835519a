//! Dense and matrix-free linear algebra used by the operators: determinants
//! and eigenvalues through `faer`, power iteration, and a restarted Arnoldi
//! solver for the dominant eigenvalue of an operator given only by its action.

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;

pub type C64 = Complex64;

#[inline]
fn to_faer(z: C64) -> c64 {
    c64::new(z.re, z.im)
}

#[inline]
fn from_faer(z: c64) -> C64 {
    C64::new(z.re, z.im)
}

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<C64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.n + j] = v;
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply_transpose(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (i, xi) in x.iter().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            for (yj, a) in y.iter_mut().zip(row) {
                *yj += a * xi;
            }
        }
    }

    fn to_faer(&self) -> Mat<c64> {
        Mat::from_fn(self.n, self.n, |i, j| to_faer(self.get(i, j)))
    }

    /// `det(I - self)`.
    pub fn det_one_minus(&self) -> C64 {
        let m = Mat::from_fn(self.n, self.n, |i, j| {
            let v = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            to_faer(v - self.get(i, j))
        });
        from_faer(m.determinant())
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        self.to_faer().complex_eigenvalues().into_iter().map(from_faer).collect()
    }
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigenvalues of a real symmetric matrix given row-major.
pub fn symmetric_eigenvalues(n: usize, data: &[f64]) -> Vec<f64> {
    let m = Mat::<f64>::from_fn(n, n, |i, j| data[i * n + j]);
    let mut v = m.selfadjoint_eigenvalues(faer::Side::Lower);
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian
/// matrix given row-major; vector `k` is column `k` of the column-major
/// output.
pub fn hermitian_eigen(n: usize, data: &[C64]) -> (Vec<f64>, Vec<C64>) {
    let m = Mat::<c64>::from_fn(n, n, |i, j| to_faer(data[i * n + j]));
    let e = m.selfadjoint_eigendecomposition(faer::Side::Lower);
    let values = (0..n).map(|k| e.s().column_vector().read(k).re).collect();
    let u = e.u();
    let vectors = (0..n).flat_map(|k| (0..n).map(move |i| from_faer(u.read(i, k)))).collect();
    (values, vectors)
}

/// Eigenvalues of a real matrix given row-major.
pub fn real_eigenvalues(n: usize, data: &[f64]) -> Vec<C64> {
    let m = Mat::<f64>::from_fn(n, n, |i, j| data[i * n + j]);
    m.eigenvalues::<c64>().into_iter().map(from_faer).collect()
}

/// Outcome of a dominant-eigenvalue iteration.
#[derive(Clone, Debug)]
pub struct Dominant {
    pub value: C64,
    pub vector: Vec<C64>,
    pub residual: f64,
    pub matvecs: usize,
}

/// Restarted Arnoldi for the eigenvalue of largest modulus of `op`.
///
/// `op(x, y)` writes the image of `x` into `y`; `project`, when given, is
/// applied to every Krylov vector so the iteration stays in an invariant
/// subspace. Restarts from the leading Ritz vector until the relative Ritz
/// residual drops below `tol`.
pub fn arnoldi_dominant<F, P>(
    mut op: F,
    mut project: P,
    start: Vec<C64>,
    krylov: usize,
    max_restarts: usize,
    tol: f64,
) -> Dominant
where
    F: FnMut(&[C64], &mut [C64]),
    P: FnMut(&mut [C64]),
{
    let n = start.len();
    let mut v0 = start;
    project(&mut v0);
    let mut matvecs = 0;
    let mut best = Dominant {
        value: C64::new(0.0, 0.0),
        vector: v0.clone(),
        residual: f64::INFINITY,
        matvecs: 0,
    };
    let m = krylov.min(n).max(1);
    for _ in 0..max_restarts.max(1) {
        let nv = norm(&v0);
        if nv == 0.0 {
            break;
        }
        let mut basis: Vec<Vec<C64>> = vec![v0.iter().map(|z| z / nv).collect()];
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut dim = m;
        for j in 0..m {
            let mut w = vec![C64::new(0.0, 0.0); n];
            op(&basis[j], &mut w);
            matvecs += 1;
            project(&mut w);
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    h[i][j] += c;
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = C64::new(hn, 0.0);
            if hn < 1e-14 * h.iter().take(j + 1).map(|r| r[j].norm()).fold(0.0, f64::max).max(1e-300) {
                dim = j + 1;
                break;
            }
            basis.push(w.iter().map(|z| z / hn).collect());
        }
        let hm = DenseMatrix {
            n: dim,
            data: (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| h[i][j]).collect(),
        };
        let eig = Mat::from_fn(dim, dim, |i, j| to_faer(hm.get(i, j))).complex_eigendecomposition();
        let s = eig.s().column_vector();
        let u = eig.u();
        let mut k = 0;
        for i in 1..dim {
            if s.read(i).abs() > s.read(k).abs() {
                k = i;
            }
        }
        let theta = from_faer(s.read(k));
        let y: Vec<C64> = (0..dim).map(|i| from_faer(u.read(i, k))).collect();
        let ritz_res = h[dim.min(m)][dim - 1].norm() * y[dim - 1].norm() / theta.norm().max(1e-300);
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (yi, b) in y.iter().zip(&basis) {
            x.iter_mut().zip(b).for_each(|(a, bb)| *a += yi * bb);
        }
        let residual = if dim < m { 0.0 } else { ritz_res };
        best = Dominant {
            value: theta,
            vector: x.clone(),
            residual,
            matvecs,
        };
        if residual < tol {
            break;
        }
        v0 = x;
        project(&mut v0);
    }
    best
}
