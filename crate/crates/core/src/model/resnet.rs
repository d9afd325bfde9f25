use ndarray::{Array1, Array2};
use rand::Rng;

/// Feedforward network with tanh hidden layers and a linear bypass.
///
/// With hidden activations `xi_0 = z`, `xi_i = tanh(W_i xi_{i-1} + b_i)`,
/// the output is `W_{q+1} xi_q + b_{q+1} + W_a z`. The bypass `W_a` carries
/// the linear part, so zeroing the output layer leaves an exactly linear map.
#[derive(Debug, Clone)]
pub struct ResNetComponent {
    widths: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub bypass: Array2<f64>,
}

impl ResNetComponent {
    /// All-zero network with the given layer widths `[n_in, m_1, ..., m_q, n_out]`.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..widths.len() - 1 {
            weights.push(Array2::zeros((widths[i + 1], widths[i])));
            biases.push(Array1::zeros(widths[i + 1]));
        }
        let bypass = Array2::zeros((widths[widths.len() - 1], widths[0]));
        Self {
            widths: widths.to_vec(),
            weights,
            biases,
            bypass,
        }
    }

    /// Glorot-uniform initialization of all layers and the bypass; biases zero.
    pub fn xavier(widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(widths);
        for w in net.weights.iter_mut() {
            let (rows, cols) = w.dim();
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            w.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        {
            let (rows, cols) = net.bypass.dim();
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            net.bypass.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        net
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    pub fn n_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of hidden layers.
    pub fn hidden_count(&self) -> usize {
        self.widths.len() - 2
    }

    /// Zeroes the output layer so the network reduces to `b + W_a z` with
    /// `b = 0`, i.e. the pure bypass.
    pub fn zero_output_layer(&mut self) {
        let q = self.weights.len() - 1;
        self.weights[q].fill(0.0);
        self.biases[q].fill(0.0);
    }

    pub fn eval(&self, z: &Array1<f64>) -> Array1<f64> {
        let q = self.weights.len() - 1;
        let mut xi = z.clone();
        for i in 0..q {
            xi = (self.weights[i].dot(&xi) + &self.biases[i]).mapv(f64::tanh);
        }
        self.weights[q].dot(&xi) + &self.biases[q] + self.bypass.dot(z)
    }

    /// Column-batched evaluation; samples are columns of `z`.
    pub fn eval_batch(&self, z: &Array2<f64>) -> Array2<f64> {
        let q = self.weights.len() - 1;
        let mut xi = z.clone();
        for i in 0..q {
            let mut pre = self.weights[i].dot(&xi);
            for mut col in pre.columns_mut() {
                col += &self.biases[i];
            }
            xi = pre.mapv(f64::tanh);
        }
        let mut out = self.weights[q].dot(&xi) + self.bypass.dot(z);
        for mut col in out.columns_mut() {
            col += &self.biases[q];
        }
        out
    }

    /// Jacobian of the output with respect to the input at `z`.
    pub fn jacobian(&self, z: &Array1<f64>) -> Array2<f64> {
        let q = self.weights.len() - 1;
        let mut xi = z.clone();
        // J accumulates d xi / d z
        let mut jac = Array2::eye(self.n_in());
        for i in 0..q {
            let pre = self.weights[i].dot(&xi) + &self.biases[i];
            xi = pre.mapv(f64::tanh);
            let mut layer = self.weights[i].dot(&jac);
            for (r, mut row) in layer.rows_mut().into_iter().enumerate() {
                let s = 1.0 - xi[r] * xi[r];
                row.mapv_inplace(|v| v * s);
            }
            jac = layer;
        }
        self.weights[q].dot(&jac) + &self.bypass
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.bypass.len()
    }
}

/// What the bypass row of a head does at baseline-equivalent initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RowInit {
    /// The row must contribute nothing.
    Zero,
    /// The row passes through the given head-input column.
    Passthrough(usize),
    /// Augmented-state dynamics row: random, with the coupling to the head's
    /// own state columns rescaled to a stable spectral radius.
    Dynamics,
}

/// Head interface sizes plus the per-row initialization recipe. Fixed by the
/// structure factory that created the model; checkpoints carry it verbatim.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HeadPlan {
    pub n_in: usize,
    pub n_out: usize,
    pub row_init: Vec<RowInit>,
    /// Head-input columns carrying this head's own augmented states.
    pub own_state_cols: Option<std::ops::Range<usize>>,
}

/// Learning component of an augmented model: one or more independent
/// networks ("heads") reading disjoint slices of `z_a` and writing disjoint
/// slices of `w_a`.
///
/// Single structures use one head; composed structures concatenate the heads
/// of their parts, which keeps the structural dependence of each head
/// confined to its own input slice.
#[derive(Debug, Clone)]
pub struct AugComponent {
    pub heads: Vec<ResNetComponent>,
}

impl AugComponent {
    pub fn single(net: ResNetComponent) -> Self {
        Self { heads: vec![net] }
    }

    /// Component with no latent channels (`n_z_a = n_w_a = 0`).
    pub fn empty() -> Self {
        Self { heads: Vec::new() }
    }

    pub fn n_in(&self) -> usize {
        self.heads.iter().map(|h| h.n_in()).sum()
    }

    pub fn n_out(&self) -> usize {
        self.heads.iter().map(|h| h.n_out()).sum()
    }

    /// `(input offset, output offset)` of each head within `z_a` and `w_a`.
    pub fn head_offsets(&self) -> Vec<(usize, usize)> {
        let mut offs = Vec::with_capacity(self.heads.len());
        let (mut i, mut o) = (0, 0);
        for h in &self.heads {
            offs.push((i, o));
            i += h.n_in();
            o += h.n_out();
        }
        offs
    }

    pub fn eval(&self, z_a: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_out());
        for (head, (zi, wi)) in self.heads.iter().zip(self.head_offsets()) {
            let slice = z_a.slice(ndarray::s![zi..zi + head.n_in()]).to_owned();
            let val = head.eval(&slice);
            out.slice_mut(ndarray::s![wi..wi + head.n_out()]).assign(&val);
        }
        out
    }

    /// Block-diagonal Jacobian over the heads.
    pub fn jacobian(&self, z_a: &Array1<f64>) -> Array2<f64> {
        let mut jac = Array2::zeros((self.n_out(), self.n_in()));
        for (head, (zi, wi)) in self.heads.iter().zip(self.head_offsets()) {
            let slice = z_a.slice(ndarray::s![zi..zi + head.n_in()]).to_owned();
            let j = head.jacobian(&slice);
            jac.slice_mut(ndarray::s![wi..wi + head.n_out(), zi..zi + head.n_in()])
                .assign(&j);
        }
        jac
    }

    /// Structural dependence pattern: all-true within each head block.
    pub fn pattern(&self) -> Array2<bool> {
        let mut p = Array2::from_elem((self.n_out(), self.n_in()), false);
        for (head, (zi, wi)) in self.heads.iter().zip(self.head_offsets()) {
            p.slice_mut(ndarray::s![wi..wi + head.n_out(), zi..zi + head.n_in()])
                .fill(true);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_split_holds_with_zero_output_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = ResNetComponent::xavier(&[3, 5, 5, 2], &mut rng);
        net.zero_output_layer();
        let z = array![0.4, -1.2, 2.5];
        let out = net.eval(&z);
        let lin = net.bypass.dot(&z);
        for (a, b) in out.iter().zip(lin.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ResNetComponent::xavier(&[2, 4, 3], &mut rng);
        let z = array![0.3, -0.7];
        let jac = net.jacobian(&z);
        let h = 1e-6;
        for j in 0..2 {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let fd = (net.eval(&zp) - net.eval(&zm)) / (2.0 * h);
            for i in 0..3 {
                assert!(
                    (fd[i] - jac[[i, j]]).abs() < 1e-7,
                    "entry ({i},{j}): fd {} vs {}",
                    fd[i],
                    jac[[i, j]]
                );
            }
        }
    }

    #[test]
    fn batch_eval_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = ResNetComponent::xavier(&[3, 6, 2], &mut rng);
        let z = array![[0.1, 1.0], [-0.4, 0.2], [0.9, -2.0]];
        let batch = net.eval_batch(&z);
        for j in 0..2 {
            let single = net.eval(&z.column(j).to_owned());
            for i in 0..2 {
                assert_eq!(batch[[i, j]], single[i]);
            }
        }
    }

    #[test]
    fn multi_head_component_is_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h1 = ResNetComponent::xavier(&[2, 4, 1], &mut rng);
        let h2 = ResNetComponent::xavier(&[3, 4, 2], &mut rng);
        let comp = AugComponent { heads: vec![h1.clone(), h2.clone()] };
        assert_eq!(comp.n_in(), 5);
        assert_eq!(comp.n_out(), 3);

        let z = array![0.5, -0.5, 1.0, 0.0, -1.0];
        let out = comp.eval(&z);
        let o1 = h1.eval(&array![0.5, -0.5]);
        let o2 = h2.eval(&array![1.0, 0.0, -1.0]);
        assert_eq!(out[0], o1[0]);
        assert_eq!(out[1], o2[0]);
        assert_eq!(out[2], o2[1]);

        let p = comp.pattern();
        assert!(p[[0, 0]] && p[[0, 1]] && !p[[0, 2]]);
        assert!(!p[[1, 0]] && p[[1, 2]]);
    }
}
