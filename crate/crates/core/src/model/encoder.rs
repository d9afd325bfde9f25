use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ResNetComponent;

/// State estimator mapping past input/output windows to an initial state.
///
/// Two independent networks share the flattened history input: `psi_b`
/// produces the baseline states and `psi_a` (absent when `n_x_a = 0`) the
/// augmented states. Keeping them separate lets the baseline head be
/// pre-fitted on simulated baseline states without disturbing the other.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub n_a: usize,
    pub n_b: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub psi_b: ResNetComponent,
    pub psi_a: Option<ResNetComponent>,
}

impl EncoderNet {
    /// Builds an encoder with the given lags and hidden widths, Glorot-random.
    pub fn new(
        n_a: usize,
        n_b: usize,
        n_y: usize,
        n_u: usize,
        n_x_b: usize,
        n_x_a: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let n_in = n_a * n_y + n_b * n_u;
        let mut widths_b = vec![n_in];
        widths_b.extend_from_slice(hidden);
        widths_b.push(n_x_b);
        let psi_b = ResNetComponent::xavier(&widths_b, rng);
        let psi_a = if n_x_a > 0 {
            let mut widths_a = vec![n_in];
            widths_a.extend_from_slice(hidden);
            widths_a.push(n_x_a);
            Some(ResNetComponent::xavier(&widths_a, rng))
        } else {
            None
        };
        Self {
            n_a,
            n_b,
            n_y,
            n_u,
            psi_b,
            psi_a,
        }
    }

    pub fn input_len(&self) -> usize {
        self.n_a * self.n_y + self.n_b * self.n_u
    }

    /// Total state dimension produced by both heads.
    pub fn n_state(&self) -> usize {
        self.psi_b.n_out() + self.psi_a.as_ref().map_or(0, |n| n.n_out())
    }

    /// Flattens histories into the encoder input layout: the `n_a` output
    /// samples oldest-first, then the `n_b` input samples oldest-first.
    pub fn flatten_history(
        &self,
        y_hist: &Array2<f64>,
        u_hist: &Array2<f64>,
    ) -> Result<Array1<f64>> {
        if y_hist.nrows() != self.n_a || y_hist.ncols() != self.n_y {
            return Err(Error::Arity {
                expected: self.n_a,
                got: y_hist.nrows(),
            });
        }
        if u_hist.nrows() != self.n_b || u_hist.ncols() != self.n_u {
            return Err(Error::Arity {
                expected: self.n_b,
                got: u_hist.nrows(),
            });
        }
        let mut v = Array1::zeros(self.input_len());
        let mut idx = 0;
        for r in 0..self.n_a {
            for c in 0..self.n_y {
                v[idx] = y_hist[[r, c]];
                idx += 1;
            }
        }
        for r in 0..self.n_b {
            for c in 0..self.n_u {
                v[idx] = u_hist[[r, c]];
                idx += 1;
            }
        }
        Ok(v)
    }

    /// Estimates the full state `[x_b; x_a]` from past outputs and inputs
    /// ordered oldest-first.
    pub fn estimate(&self, y_hist: &Array2<f64>, u_hist: &Array2<f64>) -> Result<Array1<f64>> {
        let v = self.flatten_history(y_hist, u_hist)?;
        Ok(self.estimate_flat(&v))
    }

    /// Estimate from an already flattened history vector.
    pub fn estimate_flat(&self, v: &Array1<f64>) -> Array1<f64> {
        let xb = self.psi_b.eval(v);
        match &self.psi_a {
            None => xb,
            Some(net) => {
                let xa = net.eval(v);
                let mut out = Array1::zeros(xb.len() + xa.len());
                out.slice_mut(s![..xb.len()]).assign(&xb);
                out.slice_mut(s![xb.len()..]).assign(&xa);
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_zero_state() {
        let mut enc = EncoderNet::new(2, 2, 1, 1, 2, 0, &[4], &mut ChaCha8Rng::seed_from_u64(0));
        for w in enc.psi_b.weights.iter_mut() {
            w.fill(0.0);
        }
        for b in enc.psi_b.biases.iter_mut() {
            b.fill(0.0);
        }
        enc.psi_b.bypass.fill(0.0);
        let x = enc
            .estimate(&array![[1.0], [2.0]], &array![[3.0], [4.0]])
            .unwrap();
        assert_eq!(x, array![0.0, 0.0]);
    }

    #[test]
    fn identity_weights_select_recent_outputs() {
        // Single linear layer (no hidden): psi_b(v) = W v. With W picking the
        // most recent n_y entries of the output history, the baseline head
        // returns the latest y values.
        let mut enc = EncoderNet::new(3, 1, 2, 1, 2, 0, &[], &mut ChaCha8Rng::seed_from_u64(0));
        enc.psi_b.weights[0].fill(0.0);
        enc.psi_b.biases[0].fill(0.0);
        enc.psi_b.bypass.fill(0.0);
        // history layout: y(0..3) rows oldest first, each n_y = 2 wide -> most
        // recent y occupies flat indices 4, 5.
        enc.psi_b.weights[0][[0, 4]] = 1.0;
        enc.psi_b.weights[0][[1, 5]] = 1.0;
        let y_hist = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]];
        let u_hist = array![[9.0]];
        let x = enc.estimate(&y_hist, &u_hist).unwrap();
        assert_eq!(x, array![0.5, 0.6]);
    }

    #[test]
    fn wrong_history_length_is_arity_error() {
        let enc = EncoderNet::new(2, 2, 1, 1, 2, 0, &[4], &mut ChaCha8Rng::seed_from_u64(0));
        let err = enc
            .estimate(&array![[1.0]], &array![[3.0], [4.0]])
            .unwrap_err();
        assert!(matches!(err, Error::Arity { .. }));
    }

    #[test]
    fn augmentation_head_absent_when_no_extra_states() {
        let enc = EncoderNet::new(2, 2, 1, 1, 3, 0, &[4], &mut ChaCha8Rng::seed_from_u64(1));
        assert!(enc.psi_a.is_none());
        assert_eq!(enc.n_state(), 3);
        let enc2 = EncoderNet::new(2, 2, 1, 1, 3, 2, &[4], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(enc2.n_state(), 5);
    }
}
