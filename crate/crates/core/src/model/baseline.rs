use std::sync::Arc;

use ndarray::{Array1, Array2};

/// First-principle component of the model.
///
/// Implementations map the stacked latent input `z_b = (x_b, u)` to the
/// stacked output `w_b = (f_base(x_b, u), h_base(x_b, u))` for a given
/// physical parameter vector, and expose analytic Jacobians with respect to
/// both `z_b` and the parameters. Implementations are stateless: the
/// parameter vector is owned by the model and passed into every call.
pub trait Baseline: Send + Sync {
    /// Stable identifier used in checkpoints.
    fn id(&self) -> &str;

    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    fn n_theta(&self) -> usize;

    /// `w_b = [f_base; h_base]` evaluated at `z_b = (x_b, u)`.
    fn eval(&self, theta: &[f64], z_b: &Array1<f64>) -> Array1<f64>;

    /// `d w_b / d z_b`, shape `(n_x + n_y) x (n_x + n_u)`.
    fn jac_z(&self, theta: &[f64], z_b: &Array1<f64>) -> Array2<f64>;

    /// `d w_b / d theta`, shape `(n_x + n_y) x n_theta`.
    fn jac_theta(&self, theta: &[f64], z_b: &Array1<f64>) -> Array2<f64>;

    /// Structural dependence of `w_b` on `z_b`; must contain the true
    /// nonzero pattern of `jac_z` at every point.
    fn pattern(&self) -> Array2<bool>;

    /// Whether the map is twice continuously differentiable. Declared by the
    /// implementation, not verified.
    fn is_c2(&self) -> bool {
        true
    }

    /// Column-wise batched evaluation; `z` has one sample per column.
    fn eval_batch(&self, theta: &[f64], z: &Array2<f64>) -> Array2<f64> {
        let cols = z.ncols();
        let mut out = Array2::zeros((self.n_x() + self.n_y(), cols));
        for j in 0..cols {
            let w = self.eval(theta, &z.column(j).to_owned());
            out.column_mut(j).assign(&w);
        }
        out
    }

    /// Column-wise vector-Jacobian product against `z`: returns
    /// `jac_z(z_j)^T g_j` per column.
    fn vjp_z_batch(&self, theta: &[f64], z: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
        let cols = z.ncols();
        let mut out = Array2::zeros((self.n_x() + self.n_u(), cols));
        for j in 0..cols {
            let jac = self.jac_z(theta, &z.column(j).to_owned());
            out.column_mut(j).assign(&jac.t().dot(&g.column(j)));
        }
        out
    }

    /// Accumulated vector-Jacobian product against the parameters:
    /// `sum_j jac_theta(z_j)^T g_j`.
    fn vjp_theta_batch(&self, theta: &[f64], z: &Array2<f64>, g: &Array2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_theta());
        for j in 0..z.ncols() {
            let jac = self.jac_theta(theta, &z.column(j).to_owned());
            out = out + jac.t().dot(&g.column(j));
        }
        out
    }
}

/// A baseline map paired with its current physical parameter values.
#[derive(Clone)]
pub struct BaselineComponent {
    pub map: Arc<dyn Baseline>,
    pub theta: Array1<f64>,
}

impl BaselineComponent {
    pub fn new(map: Arc<dyn Baseline>, theta: Array1<f64>) -> Self {
        assert_eq!(theta.len(), map.n_theta(), "baseline parameter length");
        Self { map, theta }
    }

    pub fn eval(&self, z_b: &Array1<f64>) -> Array1<f64> {
        self.map.eval(self.theta.as_slice().unwrap(), z_b)
    }

    pub fn jac_z(&self, z_b: &Array1<f64>) -> Array2<f64> {
        self.map.jac_z(self.theta.as_slice().unwrap(), z_b)
    }

    pub fn jac_theta(&self, z_b: &Array1<f64>) -> Array2<f64> {
        self.map.jac_theta(self.theta.as_slice().unwrap(), z_b)
    }

    pub fn pattern(&self) -> Array2<bool> {
        self.map.pattern()
    }

    pub fn n_z_b(&self) -> usize {
        self.map.n_x() + self.map.n_u()
    }

    pub fn n_w_b(&self) -> usize {
        self.map.n_x() + self.map.n_y()
    }
}

/// Fully parameterised linear discrete-time baseline.
///
/// The parameter vector is the row-major stacking of `[[A, B], [C, D]]`, so
/// `w_b = reshape(theta) * z_b`. Mostly used as a small test fixture and for
/// structures whose baseline is an arbitrary linear state-space model.
pub struct LinearSsBaseline {
    id: String,
    n_x: usize,
    n_u: usize,
    n_y: usize,
}

impl LinearSsBaseline {
    pub fn new(id: impl Into<String>, n_x: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            id: id.into(),
            n_x,
            n_u,
            n_y,
        }
    }

    /// Packs `[[A, B], [C, D]]` into the parameter layout of this baseline.
    pub fn pack_theta(
        a: &Array2<f64>,
        b: &Array2<f64>,
        c: &Array2<f64>,
        d: &Array2<f64>,
    ) -> Array1<f64> {
        let n_x = a.nrows();
        let n_u = b.ncols();
        let n_y = c.nrows();
        let mut theta = Vec::with_capacity((n_x + n_y) * (n_x + n_u));
        for i in 0..n_x {
            theta.extend(a.row(i).iter());
            theta.extend(b.row(i).iter());
        }
        for i in 0..n_y {
            theta.extend(c.row(i).iter());
            theta.extend(d.row(i).iter());
        }
        Array1::from(theta)
    }

    fn matrix(&self, theta: &[f64]) -> Array2<f64> {
        let rows = self.n_x + self.n_y;
        let cols = self.n_x + self.n_u;
        Array2::from_shape_vec((rows, cols), theta.to_vec()).expect("theta length")
    }
}

impl Baseline for LinearSsBaseline {
    fn id(&self) -> &str {
        &self.id
    }

    fn n_x(&self) -> usize {
        self.n_x
    }

    fn n_u(&self) -> usize {
        self.n_u
    }

    fn n_y(&self) -> usize {
        self.n_y
    }

    fn n_theta(&self) -> usize {
        (self.n_x + self.n_y) * (self.n_x + self.n_u)
    }

    fn eval(&self, theta: &[f64], z_b: &Array1<f64>) -> Array1<f64> {
        self.matrix(theta).dot(z_b)
    }

    fn jac_z(&self, theta: &[f64], _z_b: &Array1<f64>) -> Array2<f64> {
        self.matrix(theta)
    }

    fn jac_theta(&self, _theta: &[f64], z_b: &Array1<f64>) -> Array2<f64> {
        let rows = self.n_x + self.n_y;
        let cols = self.n_x + self.n_u;
        let mut jac = Array2::zeros((rows, rows * cols));
        for i in 0..rows {
            for j in 0..cols {
                jac[[i, i * cols + j]] = z_b[j];
            }
        }
        jac
    }

    fn pattern(&self) -> Array2<bool> {
        // Every entry is a free parameter, so the full block may be nonzero.
        Array2::from_elem((self.n_x + self.n_y, self.n_x + self.n_u), true)
    }

    fn eval_batch(&self, theta: &[f64], z: &Array2<f64>) -> Array2<f64> {
        self.matrix(theta).dot(z)
    }

    fn vjp_z_batch(&self, theta: &[f64], _z: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
        self.matrix(theta).t().dot(g)
    }

    fn vjp_theta_batch(&self, _theta: &[f64], z: &Array2<f64>, g: &Array2<f64>) -> Array1<f64> {
        // d/dM of sum_j g_j^T M z_j is g z^T.
        let gzt = g.dot(&z.t());
        Array1::from_iter(gzt.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_baseline_eval_and_jacobians() {
        let base = LinearSsBaseline::new("toy", 1, 1, 1);
        // f = 0.9 x + u, h = x
        let theta = LinearSsBaseline::pack_theta(
            &array![[0.9]],
            &array![[1.0]],
            &array![[1.0]],
            &array![[0.0]],
        );
        let z = array![2.0, 3.0];
        let w = base.eval(theta.as_slice().unwrap(), &z);
        assert_eq!(w, array![0.9 * 2.0 + 3.0, 2.0]);

        let jz = base.jac_z(theta.as_slice().unwrap(), &z);
        assert_eq!(jz, array![[0.9, 1.0], [1.0, 0.0]]);

        // finite-difference check of the parameter Jacobian
        let jt = base.jac_theta(theta.as_slice().unwrap(), &z);
        let mut th = theta.clone();
        let h = 1e-6;
        for p in 0..th.len() {
            th[p] += h;
            let up = base.eval(th.as_slice().unwrap(), &z);
            th[p] -= 2.0 * h;
            let dn = base.eval(th.as_slice().unwrap(), &z);
            th[p] += h;
            for i in 0..2 {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!((fd - jt[[i, p]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn batched_paths_match_per_sample() {
        let base = LinearSsBaseline::new("toy", 2, 1, 1);
        let theta: Vec<f64> = (0..base.n_theta()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let z = array![[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]];
        let batch = base.eval_batch(&theta, &z);
        for j in 0..2 {
            let w = base.eval(&theta, &z.column(j).to_owned());
            for i in 0..3 {
                assert_eq!(batch[[i, j]], w[i]);
            }
        }
    }
}
