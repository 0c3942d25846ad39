//! Nonlinear flux functions `A(x, u, grad u)`, their linearizations and a
//! sampling probe for the monotonicity and Lipschitz constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LodError, Result};
use crate::fem::MatrixField;
use crate::mesh::TriMesh;
use crate::scalar::{dot2, spectral_norm2, Mat2, Scalar, Vec2};

/// A flux `A(x, u, xi)`. Most coefficients ignore `u`; quasilinear ones
/// report `depends_on_value() == true` and provide `value_derivative`.
pub trait Nonlinearity<T: Scalar>: Send + Sync {
    fn flux(&self, x: Vec2<T>, u: T, xi: Vec2<T>) -> Vec2<T>;

    /// `D_xi A(x, u, xi)`.
    fn jacobian(&self, x: Vec2<T>, u: T, xi: Vec2<T>) -> Mat2<T>;

    /// `d/du A(x, u, xi)`.
    fn value_derivative(&self, _x: Vec2<T>, _u: T, _xi: Vec2<T>) -> Vec2<T> {
        [T::zero(); 2]
    }

    fn depends_on_value(&self) -> bool {
        false
    }

    /// Scalar `alpha` with `A = alpha * xi`, when the flux has that form.
    fn kacanov_factor(&self, _x: Vec2<T>, _u: T, _xi: Vec2<T>) -> Option<T> {
        None
    }

    fn name(&self) -> String;
}

/// `A(x, xi) = xi`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCoefficient;

impl<T: Scalar> Nonlinearity<T> for IdentityCoefficient {
    fn flux(&self, _x: Vec2<T>, _u: T, xi: Vec2<T>) -> Vec2<T> {
        xi
    }

    fn jacobian(&self, _x: Vec2<T>, _u: T, _xi: Vec2<T>) -> Mat2<T> {
        crate::scalar::identity2()
    }

    fn kacanov_factor(&self, _x: Vec2<T>, _u: T, _xi: Vec2<T>) -> Option<T> {
        Some(T::one())
    }

    fn name(&self) -> String {
        "identity".into()
    }
}

/// Oscillating spatial factor times `(1 + (1 + |xi|^2)^(-1/2)) xi`. The
/// oscillation runs in the `x_1` direction with period `epsilon`.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicCoefficient<T> {
    pub epsilon: T,
}

impl<T: Scalar> PeriodicCoefficient<T> {
    pub fn new(epsilon: T) -> Self {
        Self { epsilon }
    }

    pub fn spatial(&self, x: Vec2<T>) -> T {
        let s = (T::lit(2.0) * T::PI() * x[0] / self.epsilon).sin();
        let c = T::lit(1.1);
        T::one() + x[0] * x[1] + (c + T::PI() / T::lit(3.0) + s) / (c + s)
    }

    fn gradient_factor(t: T) -> T {
        T::one() + T::one() / (T::one() + t).sqrt()
    }
}

impl<T: Scalar> Nonlinearity<T> for PeriodicCoefficient<T> {
    fn flux(&self, x: Vec2<T>, _u: T, xi: Vec2<T>) -> Vec2<T> {
        let a = self.spatial(x) * Self::gradient_factor(dot2(xi, xi));
        [a * xi[0], a * xi[1]]
    }

    fn jacobian(&self, x: Vec2<T>, _u: T, xi: Vec2<T>) -> Mat2<T> {
        let s = self.spatial(x);
        let t = dot2(xi, xi);
        let g = Self::gradient_factor(t);
        // d/dxi [g(|xi|^2) xi] = g I + 2 g'(|xi|^2) xi xi^T, 2 g' = -(1+t)^(-3/2)
        let w = -(T::one() + t).powf(T::lit(-1.5));
        [
            [s * (g + w * xi[0] * xi[0]), s * w * xi[0] * xi[1]],
            [s * w * xi[1] * xi[0], s * (g + w * xi[1] * xi[1])],
        ]
    }

    fn kacanov_factor(&self, x: Vec2<T>, _u: T, xi: Vec2<T>) -> Option<T> {
        Some(self.spatial(x) * Self::gradient_factor(dot2(xi, xi)))
    }

    fn name(&self) -> String {
        format!("periodic(eps={})", self.epsilon)
    }
}

/// `c(x) (xi_1 + xi_1^3/3, xi_2 + xi_2^3/3)` with `c` constant on the cells of
/// an `epsilon` grid.
///
/// Cell values are i.i.d. uniform on `[0.1, 1]`, drawn from `ChaCha8Rng`
/// seeded with `seed`, in row-major cell order (`x_1` fastest).
#[derive(Debug, Clone)]
pub struct RandomCheckerboard<T> {
    cells_per_side: usize,
    values: Vec<T>,
    seed: u64,
}

impl<T: Scalar> RandomCheckerboard<T> {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        let cells = (1.0 / epsilon).round();
        if !(cells >= 1.0) || ((1.0 / epsilon) - cells).abs() > 1e-9 {
            return Err(LodError::Config(format!("checkerboard scale {epsilon} is not 1/n")));
        }
        let n = cells as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * n).map(|_| T::lit(rng.gen_range(0.1..=1.0))).collect();
        Ok(Self { cells_per_side: n, values, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cell_values(&self) -> &[T] {
        &self.values
    }

    pub fn spatial(&self, x: Vec2<T>) -> T {
        let n = self.cells_per_side;
        let idx = |v: T| -> usize {
            let k = (v * T::from_usize_lossy(n)).floor().to_isize().unwrap_or(0);
            k.clamp(0, n as isize - 1) as usize
        };
        self.values[idx(x[1]) * n + idx(x[0])]
    }
}

impl<T: Scalar> Nonlinearity<T> for RandomCheckerboard<T> {
    fn flux(&self, x: Vec2<T>, _u: T, xi: Vec2<T>) -> Vec2<T> {
        let c = self.spatial(x);
        let third = T::one() / T::lit(3.0);
        [c * (xi[0] + third * xi[0].powi(3)), c * (xi[1] + third * xi[1].powi(3))]
    }

    fn jacobian(&self, x: Vec2<T>, _u: T, xi: Vec2<T>) -> Mat2<T> {
        let c = self.spatial(x);
        [[c * (T::one() + xi[0] * xi[0]), T::zero()], [T::zero(), c * (T::one() + xi[1] * xi[1])]]
    }

    fn name(&self) -> String {
        format!("random_checkerboard(cells={}, seed={})", self.cells_per_side, self.seed)
    }
}

/// Geometry of the high-conductivity channel in the Richards coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelGeometry {
    /// Coefficient value inside the channel relative to the unit background level.
    pub contrast: f64,
    /// Channel width; a non-positive value means twice the oscillation period.
    pub width: f64,
    /// Height of the channel centre line.
    pub center: f64,
}

impl Default for ChannelGeometry {
    fn default() -> Self {
        Self { contrast: 100.0, width: 0.0, center: 0.5 }
    }
}

/// Van Genuchten conductivity `k(s)` with parameter `alpha`.
pub fn van_genuchten<T: Scalar>(alpha: T, s: T) -> T {
    let t = alpha * s.abs();
    let q = T::one() + t * t;
    let g = T::one() - t / q.sqrt();
    g * g / q
}

/// `dk/ds` of [`van_genuchten`]; zero at `s = 0` where `k` has a kink.
pub fn van_genuchten_derivative<T: Scalar>(alpha: T, s: T) -> T {
    if s == T::zero() {
        return T::zero();
    }
    let t = alpha * s.abs();
    let q = T::one() + t * t;
    let g = T::one() - t / q.sqrt();
    let dg = -q.powf(T::lit(-1.5));
    let dk_dt = T::lit(2.0) * g * dg / q - T::lit(2.0) * t * g * g / (q * q);
    dk_dt * alpha * s.signum()
}

/// `A(x, u, xi) = c(x) k(u) xi` with a channelized multiscale `c`.
#[derive(Debug, Clone)]
pub struct QuasilinearCoefficient<T> {
    /// Period of the background oscillation.
    pub epsilon: f64,
    pub geometry: ChannelGeometry,
    pub alpha: T,
}

impl<T: Scalar> QuasilinearCoefficient<T> {
    pub fn richards(epsilon: f64, geometry: ChannelGeometry) -> Result<Self> {
        if !(geometry.contrast > 0.0) || !(epsilon > 0.0) {
            return Err(LodError::Config("channel contrast and epsilon must be positive".into()));
        }
        Ok(Self { epsilon, geometry, alpha: T::lit(0.005) })
    }

    /// Spatial factor: `1 + sin(2 pi x_1/eps) sin(2 pi x_2/eps) / 2` outside the
    /// channel, `contrast` inside.
    pub fn spatial(&self, x: Vec2<T>) -> T {
        let g = &self.geometry;
        let width = if g.width > 0.0 { g.width } else { 2.0 * self.epsilon };
        if (x[1] - T::lit(g.center)).abs() < T::lit(0.5 * width) {
            return T::lit(g.contrast);
        }
        let w = T::lit(2.0) * T::PI() / T::lit(self.epsilon);
        T::one() + T::lit(0.5) * (w * x[0]).sin() * (w * x[1]).sin()
    }

    pub fn conductivity(&self, u: T) -> T {
        van_genuchten(self.alpha, u)
    }
}

impl<T: Scalar> Nonlinearity<T> for QuasilinearCoefficient<T> {
    fn flux(&self, x: Vec2<T>, u: T, xi: Vec2<T>) -> Vec2<T> {
        let a = self.spatial(x) * self.conductivity(u);
        [a * xi[0], a * xi[1]]
    }

    fn jacobian(&self, x: Vec2<T>, u: T, _xi: Vec2<T>) -> Mat2<T> {
        let a = self.spatial(x) * self.conductivity(u);
        [[a, T::zero()], [T::zero(), a]]
    }

    fn value_derivative(&self, x: Vec2<T>, u: T, xi: Vec2<T>) -> Vec2<T> {
        let d = self.spatial(x) * van_genuchten_derivative(self.alpha, u);
        [d * xi[0], d * xi[1]]
    }

    fn depends_on_value(&self) -> bool {
        true
    }

    fn kacanov_factor(&self, x: Vec2<T>, u: T, _xi: Vec2<T>) -> Option<T> {
        Some(self.spatial(x) * self.conductivity(u))
    }

    fn name(&self) -> String {
        format!("richards(contrast={}, eps={})", self.geometry.contrast, self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationModel {
    Newton,
    Kacanov,
}

/// Frozen linear model at a linearization point: `A_L(xi) = matrix xi + offset`
/// per fine element.
#[derive(Debug, Clone)]
pub struct Linearization<T> {
    pub matrix: MatrixField<T>,
    pub offset: Vec<Vec2<T>>,
}

/// Linearizes `coefficient` at the fine node vector `u_star`.
///
/// Newton: `D_xi A(x, grad u*)` and `A - D_xi A grad u*`. Kacanov:
/// `alpha(x, |grad u*|^2) Id` and zero offset. Values of `u*` enter through the
/// barycenter average for quasilinear coefficients.
pub fn linearize<T: Scalar, N: Nonlinearity<T> + ?Sized>(
    coefficient: &N,
    model: LinearizationModel,
    mesh: &TriMesh<T>,
    u_star: &[T],
) -> Result<Linearization<T>> {
    if u_star.len() != mesh.num_nodes() {
        return Err(LodError::DimensionMismatch(format!(
            "linearization point of length {} on mesh with {} nodes",
            u_star.len(),
            mesh.num_nodes()
        )));
    }
    let third = T::one() / T::lit(3.0);
    let mut matrix = Vec::with_capacity(mesh.num_elements());
    let mut offset = Vec::with_capacity(mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let x = mesh.barycenter(e);
        let xi = mesh.gradient(e, u_star);
        let u = mesh.element(e).iter().map(|&n| u_star[n]).sum::<T>() * third;
        match model {
            LinearizationModel::Newton => {
                let d = coefficient.jacobian(x, u, xi);
                let a = coefficient.flux(x, u, xi);
                let dx = crate::scalar::mat_vec2(&d, xi);
                matrix.push(d);
                offset.push([a[0] - dx[0], a[1] - dx[1]]);
            }
            LinearizationModel::Kacanov => {
                let alpha = coefficient.kacanov_factor(x, u, xi).ok_or(LodError::KacanovUnsupported)?;
                matrix.push([[alpha, T::zero()], [T::zero(), alpha]]);
                offset.push([T::zero(); 2]);
            }
        }
    }
    let matrix = MatrixField::new(matrix);
    matrix.validate()?;
    Ok(Linearization { matrix, offset })
}

/// Sampled assumption constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Smallest `(A(xi1) - A(xi2)).(xi1 - xi2) / |xi1 - xi2|^2`.
    pub lambda: f64,
    /// Largest `|A(xi1) - A(xi2)| / |xi1 - xi2|`.
    pub big_lambda: f64,
    /// Largest `|A(x, 0)|`.
    pub c0: f64,
    /// Largest `|D A(xi1) - D A(xi2)| / |xi1 - xi2|` (spectral norm).
    pub jacobian_lipschitz: f64,
    pub pass: bool,
}

/// Samples `samples` triples `(x, xi1, xi2)` with `x` uniform in the unit
/// square and `xi` uniform in the disk of radius `gradient_cap`.
pub fn monotonicity_probe<T: Scalar, N: Nonlinearity<T> + ?Sized>(
    coefficient: &N,
    samples: usize,
    gradient_cap: f64,
    seed: u64,
) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disk = |rng: &mut ChaCha8Rng| -> Vec2<T> {
        let r = gradient_cap * rng.gen::<f64>().sqrt();
        let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        [T::lit(r * phi.cos()), T::lit(r * phi.sin())]
    };
    let mut lambda = f64::INFINITY;
    let mut big_lambda = 0.0_f64;
    let mut c0 = 0.0_f64;
    let mut lip = 0.0_f64;
    let u = T::zero();
    for _ in 0..samples.max(1) {
        let x = [T::lit(rng.gen::<f64>()), T::lit(rng.gen::<f64>())];
        let a = disk(&mut rng);
        let b = disk(&mut rng);
        let d = [a[0] - b[0], a[1] - b[1]];
        let dd = dot2(d, d).to_f64_lossy();
        let a0 = coefficient.flux(x, u, [T::zero(); 2]);
        c0 = c0.max(dot2(a0, a0).sqrt().to_f64_lossy());
        if dd == 0.0 {
            continue;
        }
        let fa = coefficient.flux(x, u, a);
        let fb = coefficient.flux(x, u, b);
        let df = [fa[0] - fb[0], fa[1] - fb[1]];
        lambda = lambda.min(dot2(df, d).to_f64_lossy() / dd);
        big_lambda = big_lambda.max(dot2(df, df).sqrt().to_f64_lossy() / dd.sqrt());
        let ja = coefficient.jacobian(x, u, a);
        let jb = coefficient.jacobian(x, u, b);
        let dj = [[ja[0][0] - jb[0][0], ja[0][1] - jb[0][1]], [ja[1][0] - jb[1][0], ja[1][1] - jb[1][1]]];
        lip = lip.max(spectral_norm2(&dj).to_f64_lossy() / dd.sqrt());
    }
    let pass = lambda > 0.0 && [lambda, big_lambda, c0, lip].iter().all(|v| v.is_finite());
    MonotonicityReport { lambda, big_lambda, c0, jacobian_lipschitz: lip, pass }
}
