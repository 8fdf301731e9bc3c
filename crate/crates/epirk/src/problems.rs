//! Method-of-lines discretizations of the benchmark PDE problems, each with
//! an analytic Jacobian-vector product.
//!
//! The `nabla^2` terms use standard second-order finite differences. No-flow
//! and homogeneous Neumann boundaries are closed with ghost-point mirroring,
//! which keeps the stencil symmetric and annihilates constants; Dirichlet
//! and nonhomogeneous Neumann data enter `f` as precomputed affine vectors so
//! the Jacobian never depends on the boundary values. Two-species systems use
//! the block layout `[all u; all v]`.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    NoFlow,
    NeumannHomog,
    Periodic,
    DirichletHomog,
    NeumannNonhomog,
    DirichletNonhomog,
}

/// Grid spacing and extents, for reporting.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GridInfo {
    pub dims: usize,
    pub points_per_side: usize,
    pub species: usize,
    pub spacing: f64,
    pub lo: f64,
    pub hi: f64,
}

/// An autonomous ODE system `u' = f(u)` from a PDE semidiscretization.
pub trait Problem: Sync {
    fn name(&self) -> &str;
    /// Total number of unknowns.
    fn dimension(&self) -> usize;
    fn rhs(&self, u: &DVector<f64>, out: &mut DVector<f64>);
    /// Analytic directional derivative `J(u) v`.
    fn jac_apply(&self, u: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>);
    fn initial(&self) -> DVector<f64>;
    fn t_span(&self) -> (f64, f64);
    fn bc(&self) -> BoundaryKind;
    fn grid(&self) -> GridInfo;
    /// Exact solution at time `t`, if known.
    fn exact_solution(&self, _t: f64) -> Option<DVector<f64>> {
        None
    }

    fn rhs_vec(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dimension());
        self.rhs(u, &mut out);
        out
    }
}

/// Finite-difference fallback for the Jacobian action:
/// `J v ~ (f(u + eps v) - f(u)) / eps` with
/// `eps = sqrt(unit roundoff) * (1 + ||u||) / ||v||`.
pub struct FiniteDifferenceJacobian<'a> {
    pub inner: &'a dyn Problem,
}

impl FiniteDifferenceJacobian<'_> {
    pub fn apply(&self, u: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        let vnorm = v.norm();
        if vnorm == 0.0 {
            out.fill(0.0);
            return;
        }
        let eps = f64::EPSILON.sqrt() * (1.0 + u.norm()) / vnorm;
        let fu = self.inner.rhs_vec(u);
        let shifted = u + v * eps;
        let fs = self.inner.rhs_vec(&shifted);
        *out = (fs - fu) / eps;
    }
}

// ---------------------------------------------------------------------------
// Stencil helpers. 2D layout: node (i, j) -> j*n + i, i along x.
// ---------------------------------------------------------------------------

/// Adds `scale * laplacian(u)` with mirrored ghosts (no-flow / homogeneous
/// Neumann closure).
fn add_lap2d_mirror(n: usize, dx: f64, scale: f64, u: &[f64], out: &mut [f64]) {
    let s = scale / (dx * dx);
    let at = |i: isize, j: isize| -> f64 {
        // mirror: u_{-1} = u_{1}, u_{n} = u_{n-2}
        let ii = if i < 0 {
            1
        } else if i as usize >= n {
            n - 2
        } else {
            i as usize
        };
        let jj = if j < 0 {
            1
        } else if j as usize >= n {
            n - 2
        } else {
            j as usize
        };
        u[jj * n + ii]
    };
    for j in 0..n as isize {
        for i in 0..n as isize {
            let c = at(i, j);
            out[(j as usize) * n + i as usize] += s
                * (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * c);
        }
    }
}

/// Adds `scale * (u_x + u_y)` with centered differences and mirrored ghosts.
fn add_grad_sum2d_mirror(n: usize, dx: f64, scale: f64, u: &[f64], out: &mut [f64]) {
    let s = scale / (2.0 * dx);
    let at = |i: isize, j: isize| -> f64 {
        let ii = if i < 0 {
            1
        } else if i as usize >= n {
            n - 2
        } else {
            i as usize
        };
        let jj = if j < 0 {
            1
        } else if j as usize >= n {
            n - 2
        } else {
            j as usize
        };
        u[jj * n + ii]
    };
    for j in 0..n as isize {
        for i in 0..n as isize {
            out[(j as usize) * n + i as usize] +=
                s * (at(i + 1, j) - at(i - 1, j) + at(i, j + 1) - at(i, j - 1));
        }
    }
}

/// Adds `scale * laplacian(u)` with periodic wraparound.
fn add_lap2d_periodic(n: usize, dx: f64, scale: f64, u: &[f64], out: &mut [f64]) {
    let s = scale / (dx * dx);
    for j in 0..n {
        let jm = (j + n - 1) % n;
        let jp = (j + 1) % n;
        for i in 0..n {
            let im = (i + n - 1) % n;
            let ip = (i + 1) % n;
            out[j * n + i] += s
                * (u[j * n + im] + u[j * n + ip] + u[jm * n + i] + u[jp * n + i]
                    - 4.0 * u[j * n + i]);
        }
    }
}

/// Adds `scale * laplacian(u)` on interior unknowns with zero Dirichlet
/// closure (boundary data contributions are precomputed affine vectors).
fn add_lap2d_dirichlet0(n: usize, dx: f64, scale: f64, u: &[f64], out: &mut [f64]) {
    let s = scale / (dx * dx);
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i as usize >= n || j as usize >= n {
            0.0
        } else {
            u[(j as usize) * n + i as usize]
        }
    };
    for j in 0..n as isize {
        for i in 0..n as isize {
            out[(j as usize) * n + i as usize] += s
                * (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1)
                    - 4.0 * at(i, j));
        }
    }
}

// ---------------------------------------------------------------------------
// Allen-Cahn 2D: u_t = alpha lap(u) + u - u^3 on [-1,1]^2, no-flow.
// ---------------------------------------------------------------------------

pub struct AllenCahn2d {
    n: usize,
    dx: f64,
    nonhomog: bool,
    /// Affine boundary-flux contribution to `alpha*lap`, zero when
    /// homogeneous.
    affine: DVector<f64>,
    t_end: f64,
}

const ALLEN_CAHN_ALPHA: f64 = 0.1;

impl AllenCahn2d {
    pub fn new(n_per_side: usize, nonhomog: bool) -> Result<Self> {
        Self::with_data_scale(n_per_side, nonhomog, 1.0)
    }

    /// `data_scale` multiplies the nonhomogeneous boundary data; used by
    /// tests to verify the Jacobian is independent of boundary values.
    pub fn with_data_scale(n_per_side: usize, nonhomog: bool, data_scale: f64) -> Result<Self> {
        if n_per_side < 4 {
            return Err(Error::invalid("allen-cahn grid needs n >= 4"));
        }
        let n = n_per_side;
        let dx = 2.0 / (n as f64 - 1.0);
        let mut affine = DVector::zeros(n * n);
        if nonhomog {
            // Gradient of the boundary-data function phi:
            // phi = 0.4 + 0.1(x+y) + 0.1 sin(3 pi x / 2) sin(5 pi y / 2)
            let phi_x = |x: f64, y: f64| {
                0.1 + 0.1 * 1.5 * std::f64::consts::PI
                    * (1.5 * std::f64::consts::PI * x).cos()
                    * (2.5 * std::f64::consts::PI * y).sin()
            };
            let phi_y = |x: f64, y: f64| {
                0.1 + 0.1 * 2.5 * std::f64::consts::PI
                    * (1.5 * std::f64::consts::PI * x).sin()
                    * (2.5 * std::f64::consts::PI * y).cos()
            };
            let coord = |i: usize| -1.0 + 2.0 * i as f64 / (n as f64 - 1.0);
            // Ghost closure u_ghost = u_mirror +/- 2 dx g turns the mirrored
            // laplacian into lap_mirror(u) + affine with entries
            // -+ 2 g / dx at the boundary nodes.
            let s = ALLEN_CAHN_ALPHA * data_scale * 2.0 / dx;
            for j in 0..n {
                let y = coord(j);
                affine[j * n] += -s * phi_x(-1.0, y);
                affine[j * n + (n - 1)] += s * phi_x(1.0, y);
            }
            for i in 0..n {
                let x = coord(i);
                affine[i] += -s * phi_y(x, -1.0);
                affine[(n - 1) * n + i] += s * phi_y(x, 1.0);
            }
        }
        Ok(Self {
            n,
            dx,
            nonhomog,
            affine,
            t_end: 1.0,
        })
    }
}

impl Problem for AllenCahn2d {
    fn name(&self) -> &str {
        if self.nonhomog {
            "allen-cahn-nonhomog"
        } else {
            "allen-cahn"
        }
    }

    fn dimension(&self) -> usize {
        self.n * self.n
    }

    fn rhs(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        add_lap2d_mirror(self.n, self.dx, ALLEN_CAHN_ALPHA, u.as_slice(), out.as_mut_slice());
        *out += &self.affine;
        for (o, &ui) in out.iter_mut().zip(u.iter()) {
            *o += ui - ui * ui * ui;
        }
    }

    fn jac_apply(&self, u: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        add_lap2d_mirror(self.n, self.dx, ALLEN_CAHN_ALPHA, v.as_slice(), out.as_mut_slice());
        for ((o, &ui), &vi) in out.iter_mut().zip(u.iter()).zip(v.iter()) {
            *o += (1.0 - 3.0 * ui * ui) * vi;
        }
    }

    fn initial(&self) -> DVector<f64> {
        let n = self.n;
        let coord = |i: usize| -1.0 + 2.0 * i as f64 / (n as f64 - 1.0);
        DVector::from_fn(n * n, |idx, _| {
            let (i, j) = (idx % n, idx / n);
            let (x, y) = (coord(i), coord(j));
            if self.nonhomog {
                0.4 + 0.1 * (x + y)
                    + 0.1
                        * (1.5 * std::f64::consts::PI * x).sin()
                        * (2.5 * std::f64::consts::PI * y).sin()
            } else {
                0.1 + 0.1
                    * (2.0 * std::f64::consts::PI * x).cos()
                    * (2.0 * std::f64::consts::PI * y).cos()
            }
        })
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, self.t_end)
    }

    fn bc(&self) -> BoundaryKind {
        if self.nonhomog {
            BoundaryKind::NeumannNonhomog
        } else {
            BoundaryKind::NoFlow
        }
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 2,
            points_per_side: self.n,
            species: 1,
            spacing: self.dx,
            lo: -1.0,
            hi: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// ADR 2D: u_t = eps lap(u) - alpha (u_x + u_y) + gamma u(u - 1/2)(1 - u)
// on [0,1]^2, homogeneous Neumann.
// ---------------------------------------------------------------------------

pub struct Adr2d {
    n: usize,
    dx: f64,
}

const ADR_EPS: f64 = 1.0 / 100.0;
const ADR_ALPHA: f64 = -10.0;
const ADR_GAMMA: f64 = 100.0;

impl Adr2d {
    pub fn new(n_per_side: usize) -> Result<Self> {
        if n_per_side < 4 {
            return Err(Error::invalid("adr grid needs n >= 4"));
        }
        Ok(Self {
            n: n_per_side,
            dx: 1.0 / (n_per_side as f64 - 1.0),
        })
    }
}

impl Problem for Adr2d {
    fn name(&self) -> &str {
        "adr"
    }

    fn dimension(&self) -> usize {
        self.n * self.n
    }

    fn rhs(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        add_lap2d_mirror(self.n, self.dx, ADR_EPS, u.as_slice(), out.as_mut_slice());
        add_grad_sum2d_mirror(self.n, self.dx, -ADR_ALPHA, u.as_slice(), out.as_mut_slice());
        for (o, &ui) in out.iter_mut().zip(u.iter()) {
            *o += ADR_GAMMA * ui * (ui - 0.5) * (1.0 - ui);
        }
    }

    fn jac_apply(&self, u: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        add_lap2d_mirror(self.n, self.dx, ADR_EPS, v.as_slice(), out.as_mut_slice());
        add_grad_sum2d_mirror(self.n, self.dx, -ADR_ALPHA, v.as_slice(), out.as_mut_slice());
        for ((o, &ui), &vi) in out.iter_mut().zip(u.iter()).zip(v.iter()) {
            *o += ADR_GAMMA * (-3.0 * ui * ui + 3.0 * ui - 0.5) * vi;
        }
    }

    fn initial(&self) -> DVector<f64> {
        let n = self.n;
        let coord = |i: usize| i as f64 / (n as f64 - 1.0);
        DVector::from_fn(n * n, |idx, _| {
            let (x, y) = (coord(idx % n), coord(idx / n));
            256.0 * (x * y * (1.0 - x) * (1.0 - y)).powi(2) + 0.3
        })
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, 0.1)
    }

    fn bc(&self) -> BoundaryKind {
        BoundaryKind::NeumannHomog
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 2,
            points_per_side: self.n,
            species: 1,
            spacing: self.dx,
            lo: 0.0,
            hi: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Brusselator 2D (two species):
//   u_t = 1 + u^2 v - 4u + alpha lap(u)
//   v_t = 3u - u^2 v + alpha lap(v)
// ---------------------------------------------------------------------------

pub struct Brusselator2d {
    n: usize,
    dx: f64,
    nonhomog: bool,
    /// Dirichlet boundary contributions for the nonhomogeneous variant.
    affine_u: DVector<f64>,
    affine_v: DVector<f64>,
}

const BRUSSELATOR_ALPHA: f64 = 0.02;

impl Brusselator2d {
    pub fn new(n_per_side: usize, nonhomog: bool) -> Result<Self> {
        Self::with_data_scale(n_per_side, nonhomog, 1.0)
    }

    pub fn with_data_scale(n_per_side: usize, nonhomog: bool, data_scale: f64) -> Result<Self> {
        if n_per_side < 4 {
            return Err(Error::invalid("brusselator grid needs n >= 4"));
        }
        let n = n_per_side;
        let (dx, mut affine_u, mut affine_v);
        if nonhomog {
            // Interior unknowns with Dirichlet data u = 1, v = 3 on the
            // boundary (the sine data vanishes on the square's edges).
            dx = 1.0 / (n as f64 + 1.0);
            affine_u = DVector::zeros(n * n);
            affine_v = DVector::zeros(n * n);
            let s = BRUSSELATOR_ALPHA / (dx * dx) * data_scale;
            for j in 0..n {
                for i in 0..n {
                    let mut edges = 0.0;
                    if i == 0 {
                        edges += 1.0;
                    }
                    if i == n - 1 {
                        edges += 1.0;
                    }
                    if j == 0 {
                        edges += 1.0;
                    }
                    if j == n - 1 {
                        edges += 1.0;
                    }
                    affine_u[j * n + i] = s * edges * 1.0;
                    affine_v[j * n + i] = s * edges * 3.0;
                }
            }
        } else {
            dx = 1.0 / (n as f64 - 1.0);
            affine_u = DVector::zeros(n * n);
            affine_v = DVector::zeros(n * n);
        }
        Ok(Self {
            n,
            dx,
            nonhomog,
            affine_u,
            affine_v,
        })
    }

    fn coord(&self, i: usize) -> f64 {
        if self.nonhomog {
            (i as f64 + 1.0) * self.dx
        } else {
            i as f64 * self.dx
        }
    }
}

impl Problem for Brusselator2d {
    fn name(&self) -> &str {
        if self.nonhomog {
            "brusselator-nonhomog"
        } else {
            "brusselator"
        }
    }

    fn dimension(&self) -> usize {
        2 * self.n * self.n
    }

    fn rhs(&self, state: &DVector<f64>, out: &mut DVector<f64>) {
        let m = self.n * self.n;
        let (u, v) = (state.as_slice()[..m].to_vec(), &state.as_slice()[m..]);
        out.fill(0.0);
        let (head, tail) = out.as_mut_slice().split_at_mut(m);
        if self.nonhomog {
            add_lap2d_dirichlet0(self.n, self.dx, BRUSSELATOR_ALPHA, &u, head);
            add_lap2d_dirichlet0(self.n, self.dx, BRUSSELATOR_ALPHA, v, tail);
        } else {
            add_lap2d_mirror(self.n, self.dx, BRUSSELATOR_ALPHA, &u, head);
            add_lap2d_mirror(self.n, self.dx, BRUSSELATOR_ALPHA, v, tail);
        }
        for k in 0..m {
            let (uk, vk) = (u[k], v[k]);
            head[k] += 1.0 + uk * uk * vk - 4.0 * uk + self.affine_u[k];
            tail[k] += 3.0 * uk - uk * uk * vk + self.affine_v[k];
        }
    }

    fn jac_apply(&self, state: &DVector<f64>, dir: &DVector<f64>, out: &mut DVector<f64>) {
        let m = self.n * self.n;
        let u = &state.as_slice()[..m];
        let v = &state.as_slice()[m..];
        let du = &dir.as_slice()[..m];
        let dv = &dir.as_slice()[m..];
        out.fill(0.0);
        let (head, tail) = out.as_mut_slice().split_at_mut(m);
        if self.nonhomog {
            add_lap2d_dirichlet0(self.n, self.dx, BRUSSELATOR_ALPHA, du, head);
            add_lap2d_dirichlet0(self.n, self.dx, BRUSSELATOR_ALPHA, dv, tail);
        } else {
            add_lap2d_mirror(self.n, self.dx, BRUSSELATOR_ALPHA, du, head);
            add_lap2d_mirror(self.n, self.dx, BRUSSELATOR_ALPHA, dv, tail);
        }
        for k in 0..m {
            let (uk, vk) = (u[k], v[k]);
            head[k] += (2.0 * uk * vk - 4.0) * du[k] + uk * uk * dv[k];
            tail[k] += (3.0 - 2.0 * uk * vk) * du[k] - uk * uk * dv[k];
        }
    }

    fn initial(&self) -> DVector<f64> {
        let m = self.n * self.n;
        DVector::from_fn(2 * m, |idx, _| {
            let k = idx % m;
            let (x, y) = (self.coord(k % self.n), self.coord(k / self.n));
            if self.nonhomog {
                if idx < m {
                    1.0 + (2.0 * std::f64::consts::PI * x).sin()
                        * (2.0 * std::f64::consts::PI * y).sin()
                } else {
                    3.0
                }
            } else if idx < m {
                2.0 + 0.25 * y
            } else {
                1.0 + 0.8 * x
            }
        })
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn bc(&self) -> BoundaryKind {
        if self.nonhomog {
            BoundaryKind::DirichletNonhomog
        } else {
            BoundaryKind::NeumannHomog
        }
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 2,
            points_per_side: self.n,
            species: 2,
            spacing: self.dx,
            lo: 0.0,
            hi: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Gray-Scott 2D (two species, periodic):
//   u_t = d_u lap(u) - u v^2 + a (1 - u)
//   v_t = d_v lap(v) + u v^2 - (a + b) v
// ---------------------------------------------------------------------------

pub struct GrayScott2d {
    n: usize,
    dx: f64,
    t_end: f64,
}

const GS_DU: f64 = 0.2;
const GS_DV: f64 = 0.1;
const GS_A: f64 = 0.04;
const GS_B: f64 = 0.06;

impl GrayScott2d {
    pub fn new(n_per_side: usize) -> Result<Self> {
        Self::with_t_end(n_per_side, 1.0)
    }

    /// The paper leaves the integration span open; it defaults to [0, 1] and
    /// is configurable here.
    pub fn with_t_end(n_per_side: usize, t_end: f64) -> Result<Self> {
        if n_per_side < 4 {
            return Err(Error::invalid("gray-scott grid needs n >= 4"));
        }
        Ok(Self {
            n: n_per_side,
            dx: 1.0 / n_per_side as f64,
            t_end,
        })
    }
}

impl Problem for GrayScott2d {
    fn name(&self) -> &str {
        "gray-scott"
    }

    fn dimension(&self) -> usize {
        2 * self.n * self.n
    }

    fn rhs(&self, state: &DVector<f64>, out: &mut DVector<f64>) {
        let m = self.n * self.n;
        let u = &state.as_slice()[..m];
        let v = &state.as_slice()[m..];
        out.fill(0.0);
        let (head, tail) = out.as_mut_slice().split_at_mut(m);
        add_lap2d_periodic(self.n, self.dx, GS_DU, u, head);
        add_lap2d_periodic(self.n, self.dx, GS_DV, v, tail);
        for k in 0..m {
            let (uk, vk) = (u[k], v[k]);
            head[k] += -uk * vk * vk + GS_A * (1.0 - uk);
            tail[k] += uk * vk * vk - (GS_A + GS_B) * vk;
        }
    }

    fn jac_apply(&self, state: &DVector<f64>, dir: &DVector<f64>, out: &mut DVector<f64>) {
        let m = self.n * self.n;
        let u = &state.as_slice()[..m];
        let v = &state.as_slice()[m..];
        let du = &dir.as_slice()[..m];
        let dv = &dir.as_slice()[m..];
        out.fill(0.0);
        let (head, tail) = out.as_mut_slice().split_at_mut(m);
        add_lap2d_periodic(self.n, self.dx, GS_DU, du, head);
        add_lap2d_periodic(self.n, self.dx, GS_DV, dv, tail);
        for k in 0..m {
            let (uk, vk) = (u[k], v[k]);
            head[k] += (-vk * vk - GS_A) * du[k] - 2.0 * uk * vk * dv[k];
            tail[k] += vk * vk * du[k] + (2.0 * uk * vk - GS_A - GS_B) * dv[k];
        }
    }

    fn initial(&self) -> DVector<f64> {
        let m = self.n * self.n;
        let coord = |i: usize| i as f64 * self.dx;
        DVector::from_fn(2 * m, |idx, _| {
            let k = idx % m;
            let (x, y) = (coord(k % self.n), coord(k / self.n));
            let rx = (x - 0.5).powi(2);
            let ry = (y - 0.5).powi(2);
            if idx < m {
                1.0 - (-150.0 * (rx + ry)).exp()
            } else {
                (-150.0 * (rx + 2.0 * ry)).exp()
            }
        })
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, self.t_end)
    }

    fn bc(&self) -> BoundaryKind {
        BoundaryKind::Periodic
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 2,
            points_per_side: self.n,
            species: 2,
            spacing: self.dx,
            lo: 0.0,
            hi: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// 1D semilinear parabolic:
//   U_t - U_xx = int_0^1 U dx + Phi(x, t),  U(0)=U(1)=0,
// with Phi chosen so U = x(1-x)e^t is exact. Time dependence is autonomized
// by appending a clock state with tau' = 1.
// ---------------------------------------------------------------------------

pub struct SemilinearParabolic1d {
    n: usize,
    dx: f64,
    /// Trapezoid-rule value of `int_0^1 x(1-x) dx`; equals `1/6 - dx^2/6`
    /// exactly (Euler-Maclaurin terminates for quadratics).
    quad_const: f64,
}

impl SemilinearParabolic1d {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior < 4 {
            return Err(Error::invalid("semilinear grid needs n >= 4"));
        }
        let dx = 1.0 / (n_interior as f64 + 1.0);
        Ok(Self {
            n: n_interior,
            dx,
            quad_const: 1.0 / 6.0 - dx * dx / 6.0,
        })
    }

    fn x(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.dx
    }

    /// Forcing from substituting the exact solution:
    /// `Phi = x(1-x)e^t + 2e^t - e^t/6` up to the quadrature constant. The
    /// 1/6 is replaced by the trapezoid value of `int x(1-x) dx` on this
    /// grid, so the printed profile solves the semidiscrete system exactly
    /// (the centered second difference is already exact on quadratics).
    fn phi(&self, x: f64, t: f64) -> f64 {
        (x * (1.0 - x) + 2.0 - self.quad_const) * t.exp()
    }
}

impl Problem for SemilinearParabolic1d {
    fn name(&self) -> &str {
        "semilinear-parabolic"
    }

    fn dimension(&self) -> usize {
        self.n + 1
    }

    fn rhs(&self, state: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.n;
        let tau = state[n];
        let u = &state.as_slice()[..n];
        // Trapezoid rule with the homogeneous Dirichlet endpoints.
        let integral: f64 = self.dx * u.iter().sum::<f64>();
        let s = 1.0 / (self.dx * self.dx);
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { u[i - 1] };
            let right = if i + 1 == n { 0.0 } else { u[i + 1] };
            out[i] = s * (left - 2.0 * u[i] + right) + integral + self.phi(self.x(i), tau);
        }
        out[n] = 1.0;
    }

    fn jac_apply(&self, state: &DVector<f64>, dir: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.n;
        let tau = state[n];
        let du = &dir.as_slice()[..n];
        let dtau = dir[n];
        let integral: f64 = self.dx * du.iter().sum::<f64>();
        let s = 1.0 / (self.dx * self.dx);
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { du[i - 1] };
            let right = if i + 1 == n { 0.0 } else { du[i + 1] };
            // d Phi / d tau = Phi (pure e^t dependence).
            out[i] = s * (left - 2.0 * du[i] + right) + integral
                + self.phi(self.x(i), tau) * dtau;
        }
        out[n] = 0.0;
    }

    fn initial(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.n + 1);
        for i in 0..self.n {
            let x = self.x(i);
            u[i] = x * (1.0 - x);
        }
        u
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn bc(&self) -> BoundaryKind {
        BoundaryKind::DirichletHomog
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 1,
            points_per_side: self.n,
            species: 1,
            spacing: self.dx,
            lo: 0.0,
            hi: 1.0,
        }
    }

    fn exact_solution(&self, t: f64) -> Option<DVector<f64>> {
        let mut u = DVector::zeros(self.n + 1);
        for i in 0..self.n {
            let x = self.x(i);
            u[i] = x * (1.0 - x) * t.exp();
        }
        u[self.n] = t;
        Some(u)
    }
}

// ---------------------------------------------------------------------------
// 1D degenerate nonlinear diffusion:
//   u_t = (u u_x)_x + u(1 - u) on (-23, 50),
//   u(-23) = 1, u(50) = 0.
// Flux form with face-averaged diffusivity; (u u_x)_x collapses to
// (u_{i+1}^2 - 2 u_i^2 + u_{i-1}^2) / (2 dx^2).
// ---------------------------------------------------------------------------

pub struct DegenerateDiffusion1d {
    n: usize,
    dx: f64,
    left_value: f64,
}

impl DegenerateDiffusion1d {
    pub fn new(n_interior: usize) -> Result<Self> {
        Self::with_data_scale(n_interior, 1.0)
    }

    pub fn with_data_scale(n_interior: usize, data_scale: f64) -> Result<Self> {
        if n_interior < 4 {
            return Err(Error::invalid("degenerate-diffusion grid needs n >= 4"));
        }
        Ok(Self {
            n: n_interior,
            dx: 73.0 / (n_interior as f64 + 1.0),
            left_value: data_scale,
        })
    }

    fn x(&self, i: usize) -> f64 {
        -23.0 + (i as f64 + 1.0) * self.dx
    }
}

impl Problem for DegenerateDiffusion1d {
    fn name(&self) -> &str {
        "degenerate-diffusion"
    }

    fn dimension(&self) -> usize {
        self.n
    }

    fn rhs(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.n;
        let s = 1.0 / (2.0 * self.dx * self.dx);
        for i in 0..n {
            let left = if i == 0 { self.left_value } else { u[i - 1] };
            let right = if i + 1 == n { 0.0 } else { u[i + 1] };
            out[i] = s * (right * right - 2.0 * u[i] * u[i] + left * left)
                + u[i] * (1.0 - u[i]);
        }
    }

    fn jac_apply(&self, u: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.n;
        let s = 1.0 / (self.dx * self.dx);
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { u[i - 1] * v[i - 1] };
            let right = if i + 1 == n { 0.0 } else { u[i + 1] * v[i + 1] };
            out[i] = s * (right - 2.0 * u[i] * v[i] + left) + (1.0 - 2.0 * u[i]) * v[i];
        }
    }

    fn initial(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            let x = self.x(i);
            if x < 0.0 {
                1.0
            } else {
                (-1.3 * x).exp()
            }
        })
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, 50.0)
    }

    fn bc(&self) -> BoundaryKind {
        BoundaryKind::DirichletNonhomog
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 1,
            points_per_side: self.n,
            species: 1,
            spacing: self.dx,
            lo: -23.0,
            hi: 50.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Linear 1D diffusion, u' = u_xx with homogeneous Dirichlet ends. Used for
// linear-exactness checks: any order >= 2 scheme reproduces exp(hA)u.
// ---------------------------------------------------------------------------

pub struct LinearDiffusion1d {
    n: usize,
    dx: f64,
}

impl LinearDiffusion1d {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior < 2 {
            return Err(Error::invalid("linear-diffusion grid needs n >= 2"));
        }
        Ok(Self {
            n: n_interior,
            dx: 1.0 / (n_interior as f64 + 1.0),
        })
    }

    /// Dense copy of the system matrix, for exponential oracles.
    pub fn dense_matrix(&self) -> nalgebra::DMatrix<f64> {
        let s = 1.0 / (self.dx * self.dx);
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| {
            if i == j {
                -2.0 * s
            } else if i.abs_diff(j) == 1 {
                s
            } else {
                0.0
            }
        })
    }
}

impl Problem for LinearDiffusion1d {
    fn name(&self) -> &str {
        "linear-diffusion"
    }

    fn dimension(&self) -> usize {
        self.n
    }

    fn rhs(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        let s = 1.0 / (self.dx * self.dx);
        for i in 0..self.n {
            let left = if i == 0 { 0.0 } else { u[i - 1] };
            let right = if i + 1 == self.n { 0.0 } else { u[i + 1] };
            out[i] = s * (left - 2.0 * u[i] + right);
        }
    }

    fn jac_apply(&self, _u: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        self.rhs(v, out);
    }

    fn initial(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            let x = (i as f64 + 1.0) * self.dx;
            (std::f64::consts::PI * x).sin() + 0.4 * (3.0 * std::f64::consts::PI * x).sin()
        })
    }

    fn t_span(&self) -> (f64, f64) {
        (0.0, 0.1)
    }

    fn bc(&self) -> BoundaryKind {
        BoundaryKind::DirichletHomog
    }

    fn grid(&self) -> GridInfo {
        GridInfo {
            dims: 1,
            points_per_side: self.n,
            species: 1,
            spacing: self.dx,
            lo: 0.0,
            hi: 1.0,
        }
    }
}

/// Problem registry keyed by name. `n` is the per-side point count for 2D
/// grids and the interior point count for 1D ones; `t_end` overrides the
/// problem's default span end where that is configurable.
pub fn problem_by_name(
    name: &str,
    n: usize,
    t_end: Option<f64>,
) -> Result<Box<dyn Problem + Send>> {
    let boxed: Box<dyn Problem + Send> = match name {
        "allen-cahn" => Box::new(AllenCahn2d::new(n, false)?),
        "allen-cahn-nonhomog" => Box::new(AllenCahn2d::new(n, true)?),
        "adr" => Box::new(Adr2d::new(n)?),
        "brusselator" => Box::new(Brusselator2d::new(n, false)?),
        "brusselator-nonhomog" => Box::new(Brusselator2d::new(n, true)?),
        "gray-scott" => Box::new(GrayScott2d::with_t_end(n, t_end.unwrap_or(1.0))?),
        "semilinear-parabolic" => Box::new(SemilinearParabolic1d::new(n)?),
        "degenerate-diffusion" => Box::new(DegenerateDiffusion1d::new(n)?),
        "linear-diffusion" => Box::new(LinearDiffusion1d::new(n)?),
        other => {
            return Err(Error::invalid(format!(
                "unknown problem `{other}`; known: allen-cahn[-nonhomog], adr, \
                 brusselator[-nonhomog], gray-scott, semilinear-parabolic, \
                 degenerate-diffusion, linear-diffusion"
            )))
        }
    };
    Ok(boxed)
}
