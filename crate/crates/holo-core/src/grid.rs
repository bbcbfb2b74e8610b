//! Complex field grids over a square box.
//!
//! A superpotential sample is a complex-valued function W(z) tabulated on
//! an n-by-n grid covering the square (-z, z) x (-z, z), stored as two
//! real channels u = Re W and v = Im W. Holomorphicity is checked with
//! lattice-scaled finite-difference residuals of the Cauchy-Riemann
//! equations, and the scalar potential is |dW/dz|^2 built from the same
//! stencils.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("box half-width must be positive and finite, got {0}")]
    BadHalfWidth(f64),
    #[error("grid needs at least 3 points per axis, got {0}")]
    TooFewPoints(usize),
    #[error("channel length {got} does not match {n}x{n} grid")]
    ShapeMismatch { got: usize, n: usize },
    #[error("non-finite value in channel {channel} at index {index}")]
    NonFinite { channel: char, index: usize },
    #[error("empty coefficient list")]
    EmptyCoefficients,
    #[error("grid is identically zero, cannot normalize")]
    DegenerateGrid,
}

/// Square box (-half_width, half_width)^2 discretized with n points per
/// axis, endpoints included. Lattice spacing is 2*half_width / (n - 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    half_width: f64,
    n: usize,
}

impl BoxDomain {
    pub fn new(half_width: f64, n: usize) -> Result<Self, GridError> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(GridError::BadHalfWidth(half_width));
        }
        if n < 3 {
            return Err(GridError::TooFewPoints(n));
        }
        Ok(BoxDomain { half_width, n })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Lattice spacing delta_z.
    pub fn delta(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    /// x coordinate of row j.
    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.delta()
    }

    /// y coordinate of column k.
    pub fn y(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.delta()
    }

    /// Grid point (j, k) as the complex number x_j + i y_k.
    pub fn z(&self, j: usize, k: usize) -> Complex64 {
        Complex64::new(self.x(j), self.y(k))
    }
}

/// Two-channel field sample: u = Re W, v = Im W, each n*n row-major with
/// row index j along x and column index k along y.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    domain: BoxDomain,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl ComplexGrid {
    pub fn from_channels(domain: BoxDomain, u: Vec<f64>, v: Vec<f64>) -> Result<Self, GridError> {
        let n = domain.n();
        for (channel, data) in [('u', &u), ('v', &v)] {
            if data.len() != n * n {
                return Err(GridError::ShapeMismatch { got: data.len(), n });
            }
            if let Some(index) = data.iter().position(|x| !x.is_finite()) {
                return Err(GridError::NonFinite { channel, index });
            }
        }
        Ok(ComplexGrid { domain, u, v })
    }

    pub fn domain(&self) -> BoxDomain {
        self.domain
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, j: usize, k: usize) -> Complex64 {
        let idx = j * self.n() + k;
        Complex64::new(self.u[idx], self.v[idx])
    }

    /// Largest absolute value over both channels.
    pub fn max_abs_channel(&self) -> f64 {
        self.u
            .iter()
            .chain(self.v.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Evaluates W(z) = sum_n coeffs[n] z^n on every grid point.
pub fn eval_polynomial_on_grid(
    coeffs: &[Complex64],
    domain: BoxDomain,
) -> Result<ComplexGrid, GridError> {
    if coeffs.is_empty() {
        return Err(GridError::EmptyCoefficients);
    }
    let n = domain.n();
    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let z = domain.z(j, k);
            // Horner evaluation in double precision.
            let mut w = coeffs[coeffs.len() - 1];
            for &c in coeffs[..coeffs.len() - 1].iter().rev() {
                w = w * z + c;
            }
            u[j * n + k] = w.re;
            v[j * n + k] = w.im;
        }
    }
    ComplexGrid::from_channels(domain, u, v)
}

/// Divides both channels by their joint maximum absolute value so that
/// max(max|u|, max|v|) becomes 1. A single joint factor keeps the field
/// holomorphic. Returns the normalized grid and the factor.
pub fn normalize(grid: &ComplexGrid) -> Result<(ComplexGrid, f64), GridError> {
    let scale = grid.max_abs_channel();
    if scale == 0.0 {
        return Err(GridError::DegenerateGrid);
    }
    let u = grid.u.iter().map(|x| x / scale).collect();
    let v = grid.v.iter().map(|x| x / scale).collect();
    Ok((
        ComplexGrid {
            domain: grid.domain,
            u,
            v,
        },
        scale,
    ))
}

/// d/dx along rows (index j, stride n): central differences inside,
/// second-order one-sided 3-point stencils on the first and last row.
fn ddx(field: &[f64], n: usize, delta: f64, out: &mut [f64]) {
    let inv2h = 1.0 / (2.0 * delta);
    for k in 0..n {
        out[k] = (-3.0 * field[k] + 4.0 * field[n + k] - field[2 * n + k]) * inv2h;
        let last = (n - 1) * n + k;
        out[last] = (3.0 * field[last] - 4.0 * field[last - n] + field[last - 2 * n]) * inv2h;
    }
    for j in 1..n - 1 {
        for k in 0..n {
            let idx = j * n + k;
            out[idx] = (field[idx + n] - field[idx - n]) * inv2h;
        }
    }
}

/// d/dy along columns (index k, stride 1), same stencils as `ddx`.
fn ddy(field: &[f64], n: usize, delta: f64, out: &mut [f64]) {
    let inv2h = 1.0 / (2.0 * delta);
    for j in 0..n {
        let row = j * n;
        out[row] = (-3.0 * field[row] + 4.0 * field[row + 1] - field[row + 2]) * inv2h;
        let last = row + n - 1;
        out[last] = (3.0 * field[last] - 4.0 * field[last - 1] + field[last - 2]) * inv2h;
        for k in 1..n - 1 {
            let idx = row + k;
            out[idx] = (field[idx + 1] - field[idx - 1]) * inv2h;
        }
    }
}

/// Cauchy-Riemann residuals scaled by the lattice spacing:
/// e1 = delta_z (du/dx - dv/dy), e2 = delta_z (du/dy + dv/dx).
pub fn cr_residuals(grid: &ComplexGrid) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n();
    let delta = grid.domain.delta();
    let mut ux = vec![0.0; n * n];
    let mut uy = vec![0.0; n * n];
    let mut vx = vec![0.0; n * n];
    let mut vy = vec![0.0; n * n];
    ddx(&grid.u, n, delta, &mut ux);
    ddy(&grid.u, n, delta, &mut uy);
    ddx(&grid.v, n, delta, &mut vx);
    ddy(&grid.v, n, delta, &mut vy);
    let e1 = ux
        .iter()
        .zip(&vy)
        .map(|(ux, vy)| delta * (ux - vy))
        .collect();
    let e2 = uy
        .iter()
        .zip(&vx)
        .map(|(uy, vx)| delta * (uy + vx))
        .collect();
    (e1, e2)
}

/// Scalar potential V = |dW/dz|^2 with dW/dz approximated as
/// du/dx + i dv/dx using the same stencils as `cr_residuals`.
pub fn scalar_potential(grid: &ComplexGrid) -> Vec<f64> {
    let n = grid.n();
    let delta = grid.domain.delta();
    let mut ux = vec![0.0; n * n];
    let mut vx = vec![0.0; n * n];
    ddx(&grid.u, n, delta, &mut ux);
    ddx(&grid.v, n, delta, &mut vx);
    ux.iter().zip(&vx).map(|(a, b)| a * a + b * b).collect()
}

/// Summary statistics of the residual distribution and the field scale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ResidualStats {
    /// Mean of sqrt(u^2 + v^2) over the grid.
    pub mean_abs_w: f64,
    pub mean_e1: f64,
    pub mean_e2: f64,
    pub p95_e1: f64,
    pub p95_e2: f64,
}

/// Nearest-rank 95th percentile of absolute values: the ceil(0.95 N)-th
/// smallest entry.
pub fn percentile95_abs(values: &[f64]) -> f64 {
    let mut abs: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.95 * abs.len() as f64).ceil() as usize).max(1);
    abs[rank - 1]
}

fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|x| x.abs()).sum::<f64>() / values.len() as f64
}

pub fn residual_stats(grid: &ComplexGrid) -> ResidualStats {
    let (e1, e2) = cr_residuals(grid);
    let mean_abs_w = grid
        .u
        .iter()
        .zip(&grid.v)
        .map(|(u, v)| (u * u + v * v).sqrt())
        .sum::<f64>()
        / (grid.n() * grid.n()) as f64;
    ResidualStats {
        mean_abs_w,
        mean_e1: mean_abs(&e1),
        mean_e2: mean_abs(&e2),
        p95_e1: percentile95_abs(&e1),
        p95_e2: percentile95_abs(&e2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(coeffs: &[Complex64], half_width: f64, n: usize) -> ComplexGrid {
        eval_polynomial_on_grid(coeffs, BoxDomain::new(half_width, n).unwrap()).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn domain_rejects_bad_inputs() {
        assert!(matches!(
            BoxDomain::new(0.0, 64),
            Err(GridError::BadHalfWidth(_))
        ));
        assert!(matches!(
            BoxDomain::new(-1.0, 64),
            Err(GridError::BadHalfWidth(_))
        ));
        assert!(matches!(
            BoxDomain::new(2.0, 2),
            Err(GridError::TooFewPoints(2))
        ));
    }

    #[test]
    fn lattice_spacing_and_coordinates() {
        let d = BoxDomain::new(2.0, 5).unwrap();
        assert_eq!(d.delta(), 1.0);
        assert_eq!(d.x(0), -2.0);
        assert_eq!(d.x(4), 2.0);
        assert_eq!(d.y(2), 0.0);
    }

    #[test]
    fn identity_polynomial_at_corner() {
        // W = z on box(2, 3): corner (j=2, k=2) is z = 2 + 2i.
        let g = grid_of(&[c(0.0, 0.0), c(1.0, 0.0)], 2.0, 3);
        let w = g.at(2, 2);
        assert_eq!(w.re, 2.0);
        assert_eq!(w.im, 2.0);
    }

    #[test]
    fn constant_polynomial_fills_channels() {
        let g = grid_of(&[c(1.0, 0.0)], 2.0, 8);
        assert!(g.u().iter().all(|&x| x == 1.0));
        assert!(g.v().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn square_polynomial_at_one_plus_i() {
        // W = z^2 at z = 1 + i is 2i; box(2, 5) has that point at (3, 3).
        let g = grid_of(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], 2.0, 5);
        let w = g.at(3, 3);
        assert!((w.re - 0.0).abs() < 1e-15);
        assert!((w.im - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_coefficients_rejected() {
        let d = BoxDomain::new(2.0, 4).unwrap();
        assert_eq!(
            eval_polynomial_on_grid(&[], d),
            Err(GridError::EmptyCoefficients)
        );
    }

    #[test]
    fn normalize_identity_scale_is_half_width() {
        // W = z on box(2): max|Re| = max|Im| = 2 on the edges.
        let g = grid_of(&[c(0.0, 0.0), c(1.0, 0.0)], 2.0, 9);
        let (norm, scale) = normalize(&g).unwrap();
        assert_eq!(scale, 2.0);
        assert!((norm.max_abs_channel() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_square_scale_brute_force() {
        // W = z^2 on box(2, 64): Im W = 2xy peaks at the corners with
        // value 8. Cross-check the closed form against a full grid scan.
        let g = grid_of(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], 2.0, 64);
        let brute = g.max_abs_channel();
        let (_, scale) = normalize(&g).unwrap();
        assert_eq!(scale, brute);
        assert!((scale - 8.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let g = grid_of(&[c(0.3, -1.2), c(0.5, 0.1), c(-0.7, 0.4)], 2.0, 16);
        let (once, _) = normalize(&g).unwrap();
        let (twice, scale) = normalize(&once).unwrap();
        assert!((scale - 1.0).abs() < 1e-12);
        for (a, b) in once.u().iter().zip(twice.u()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_grid() {
        let d = BoxDomain::new(2.0, 4).unwrap();
        let g = ComplexGrid::from_channels(d, vec![0.0; 16], vec![0.0; 16]).unwrap();
        assert_eq!(normalize(&g), Err(GridError::DegenerateGrid));
    }

    #[test]
    fn from_channels_rejects_nan() {
        let d = BoxDomain::new(2.0, 3).unwrap();
        let mut u = vec![0.0; 9];
        u[4] = f64::NAN;
        assert_eq!(
            ComplexGrid::from_channels(d, u, vec![0.0; 9]),
            Err(GridError::NonFinite {
                channel: 'u',
                index: 4
            })
        );
    }

    #[test]
    fn residuals_vanish_for_affine_field() {
        let g = grid_of(&[c(0.4, -0.2), c(1.0, 0.5)], 2.0, 17);
        let (e1, e2) = cr_residuals(&g);
        assert!(e1.iter().all(|&x| x.abs() < 1e-14));
        assert!(e2.iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn conjugate_field_has_constant_e1() {
        // f = conj(z): u = x, v = -y, so du/dx - dv/dy = 2 exactly.
        let d = BoxDomain::new(2.0, 9).unwrap();
        let n = d.n();
        let mut u = vec![0.0; n * n];
        let mut v = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                u[j * n + k] = d.x(j);
                v[j * n + k] = -d.y(k);
            }
        }
        let g = ComplexGrid::from_channels(d, u, v).unwrap();
        let (e1, e2) = cr_residuals(&g);
        let expect = 2.0 * d.delta();
        assert!(e1.iter().all(|&x| (x - expect).abs() < 1e-13));
        assert!(e2.iter().all(|&x| x.abs() < 1e-13));
    }

    #[test]
    fn residuals_vanish_for_quadratic_within_rounding() {
        // Second-order stencils (central and one-sided) differentiate
        // quadratics exactly; residuals are pure rounding noise.
        let g = grid_of(&[c(0.1, 0.9), c(-0.4, 0.3), c(0.8, -0.6)], 2.0, 33);
        let (e1, e2) = cr_residuals(&g);
        assert!(e1.iter().all(|&x| x.abs() < 1e-13));
        assert!(e2.iter().all(|&x| x.abs() < 1e-13));
    }

    #[test]
    fn potential_of_identity_is_one() {
        let g = grid_of(&[c(0.0, 0.0), c(1.0, 0.0)], 2.0, 12);
        for x in scalar_potential(&g) {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_of_square_at_one_plus_i() {
        // W = z^2: V = |2z|^2 = 8 at z = 1 + i (grid point (3,3) on box(2,5)).
        let g = grid_of(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], 2.0, 5);
        let v = scalar_potential(&g);
        assert!((v[3 * 5 + 3] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn potential_of_constant_is_zero() {
        let g = grid_of(&[c(3.0, -1.0)], 2.0, 8);
        assert!(scalar_potential(&g).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn potential_is_nonnegative_for_rough_data() {
        let d = BoxDomain::new(1.0, 16).unwrap();
        let mut s = crate::rng::Stream::new(77);
        let u: Vec<f64> = (0..256).map(|_| s.next_symmetric(1.0)).collect();
        let v: Vec<f64> = (0..256).map(|_| s.next_symmetric(1.0)).collect();
        let g = ComplexGrid::from_channels(d, u, v).unwrap();
        assert!(scalar_potential(&g).iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn stats_of_zero_field_are_zero() {
        let d = BoxDomain::new(2.0, 8).unwrap();
        let g = ComplexGrid::from_channels(d, vec![0.0; 64], vec![0.0; 64]).unwrap();
        let s = residual_stats(&g);
        assert_eq!(s.mean_abs_w, 0.0);
        assert_eq!(s.mean_e1, 0.0);
        assert_eq!(s.p95_e1, 0.0);
    }

    #[test]
    fn constant_residual_mean_equals_percentile() {
        // f = conj(z) gives |e1| = 2*delta everywhere.
        let d = BoxDomain::new(2.0, 9).unwrap();
        let n = d.n();
        let mut u = vec![0.0; n * n];
        let mut v = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                u[j * n + k] = d.x(j);
                v[j * n + k] = -d.y(k);
            }
        }
        let g = ComplexGrid::from_channels(d, u, v).unwrap();
        let s = residual_stats(&g);
        let expect = 2.0 * d.delta();
        assert!((s.mean_e1 - expect).abs() < 1e-13);
        assert!((s.p95_e1 - expect).abs() < 1e-13);
    }

    #[test]
    fn percentile_nearest_rank_oracle() {
        // 100 equally spaced values 0.00..0.99: rank ceil(0.95*100) = 95,
        // i.e. the 95th smallest, which is 0.94. Brute-force sort oracle.
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = sorted[94];
        assert_eq!(percentile95_abs(&values), oracle);
        assert!((oracle - 0.94).abs() < 1e-15);
    }
}
