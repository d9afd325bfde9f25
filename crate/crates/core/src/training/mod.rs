//! Identification pipeline: normalization, baseline wrapping, encoder
//! pre-fit, baseline-equivalent initialization, truncated-loss training and
//! simulation-based evaluation.

mod init;
mod loss;
mod trainer;

pub use init::{init_baseline_equivalent, spectral_radius_estimate};
pub use loss::{
    apply_params, build_regularized_loss, pack_params, regularized_loss, truncated_loss,
};
pub use trainer::{pretrain_encoder, train, EpochRecord, PretrainConfig, TrainRun};

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{AugmentedModel, Baseline, BaselineComponent};

/// Data split label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Est,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Est => "est",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Sampled input/output records, one row per sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub u: Array2<f64>,
    pub y: Array2<f64>,
    /// Sampling time in seconds.
    pub t_s: f64,
    pub split: SplitTag,
    /// Noise-free output, when the generator provides it.
    pub y_clean: Option<Array2<f64>>,
    /// Simulated baseline states (extended dataset), in normalized units.
    pub x_base: Option<Array2<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.y.ncols()
    }
}

/// Diagonal scaling transforms fitted on the estimation split.
///
/// Inputs and outputs are centred by their per-channel means and scaled by
/// inverse standard deviations; states are scaled only (the baseline is
/// assumed to operate around zero state).
#[derive(Debug, Clone)]
pub struct Normalization {
    pub mu_u: Array1<f64>,
    pub sig_u: Array1<f64>,
    pub mu_y: Array1<f64>,
    pub sig_y: Array1<f64>,
    /// Per-state standard deviations from the simulated baseline; set by
    /// [`simulate_baseline_states`].
    pub sig_x: Option<Array1<f64>>,
}

impl Normalization {
    /// No-op transforms (unit scales, zero means).
    pub fn identity(n_x_b: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            mu_u: Array1::zeros(n_u),
            sig_u: Array1::ones(n_u),
            mu_y: Array1::zeros(n_y),
            sig_y: Array1::ones(n_y),
            sig_x: Some(Array1::ones(n_x_b)),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mu_u.iter().all(|v| *v == 0.0)
            && self.mu_y.iter().all(|v| *v == 0.0)
            && self.sig_u.iter().all(|v| *v == 1.0)
            && self.sig_y.iter().all(|v| *v == 1.0)
            && self
                .sig_x
                .as_ref()
                .map_or(true, |s| s.iter().all(|v| *v == 1.0))
    }

    pub fn normalize_u(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut out = u.clone();
        for (mut row, _) in out.rows_mut().into_iter().zip(0..) {
            row -= &self.mu_u;
            row /= &self.sig_u;
        }
        out
    }

    pub fn normalize_y(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = y.clone();
        for mut row in out.rows_mut() {
            row -= &self.mu_y;
            row /= &self.sig_y;
        }
        out
    }

    pub fn denormalize_y(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = y.clone();
        for mut row in out.rows_mut() {
            row *= &self.sig_y;
            row += &self.mu_y;
        }
        out
    }

    /// `x_norm = T_x x` with `T_x = diag(1/sig_x)`.
    pub fn normalize_state(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let sig = self
            .sig_x
            .as_ref()
            .ok_or_else(|| Error::DegenerateData("state scaling not fitted".into()))?;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            row /= sig;
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let all_pos = |v: &Array1<f64>| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !all_pos(&self.sig_u) || !all_pos(&self.sig_y) {
            return Err(Error::DegenerateData(
                "normalization scales must be positive and finite".into(),
            ));
        }
        if let Some(sx) = &self.sig_x {
            if !all_pos(sx) {
                return Err(Error::DegenerateData(
                    "state scaling must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }
}

fn column_stats(m: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = m.nrows() as f64;
    let mean = m.mean_axis(Axis(0)).expect("nonempty");
    let mut var = Array1::zeros(m.ncols());
    for row in m.rows() {
        let d = &row.to_owned() - &mean;
        var = var + d.mapv(|v| v * v);
    }
    var.mapv_inplace(|v| (v / n).sqrt());
    (mean, var)
}

/// Fits means and inverse-standard-deviation scales on the estimation split.
/// The state scaling stays unset until the baseline has been simulated.
pub fn fit_normalization(est: &Dataset) -> Result<Normalization> {
    if est.is_empty() {
        return Err(Error::DegenerateData("empty estimation split".into()));
    }
    let (mu_u, sig_u) = column_stats(&est.u);
    let (mu_y, sig_y) = column_stats(&est.y);
    for (c, s) in sig_u.iter().chain(sig_y.iter()).enumerate() {
        if *s <= 0.0 || !s.is_finite() {
            return Err(Error::DegenerateData(format!(
                "zero-variance channel (index {c})"
            )));
        }
    }
    let norm = Normalization {
        mu_u,
        sig_u,
        mu_y,
        sig_y,
        sig_x: None,
    };
    norm.validate()?;
    Ok(norm)
}

/// Applies the fitted input/output transforms to a dataset (clean output
/// included when present).
pub fn normalize_dataset(ds: &Dataset, norm: &Normalization) -> Dataset {
    Dataset {
        u: norm.normalize_u(&ds.u),
        y: norm.normalize_y(&ds.y),
        t_s: ds.t_s,
        split: ds.split,
        y_clean: ds.y_clean.as_ref().map(|c| norm.normalize_y(c)),
        x_base: ds.x_base.clone(),
    }
}

/// Baseline map conjugated with the scaling transforms: takes normalized
/// state and input, returns normalized state update and output, leaving the
/// physical parameter vector untouched.
pub struct NormalizedBaseline {
    inner: Arc<dyn Baseline>,
    /// raw = in_scale * z_norm + in_shift, per z_b coordinate
    in_scale: Array1<f64>,
    in_shift: Array1<f64>,
    /// w_norm = out_scale * w_raw + out_shift, per w_b coordinate
    out_scale: Array1<f64>,
    out_shift: Array1<f64>,
}

impl NormalizedBaseline {
    fn new(inner: Arc<dyn Baseline>, norm: &Normalization) -> Result<Self> {
        let sig_x = norm
            .sig_x
            .as_ref()
            .ok_or_else(|| Error::DegenerateData("state scaling not fitted".into()))?;
        let (n_x, n_u, n_y) = (inner.n_x(), inner.n_u(), inner.n_y());
        if sig_x.len() != n_x || norm.sig_u.len() != n_u || norm.sig_y.len() != n_y {
            return Err(Error::Dimension {
                what: "normalization transforms".into(),
                expected: format!("n_x={n_x}, n_u={n_u}, n_y={n_y}"),
                got: format!(
                    "sig_x={}, sig_u={}, sig_y={}",
                    sig_x.len(),
                    norm.sig_u.len(),
                    norm.sig_y.len()
                ),
            });
        }
        let mut in_scale = Array1::zeros(n_x + n_u);
        let mut in_shift = Array1::zeros(n_x + n_u);
        for i in 0..n_x {
            in_scale[i] = sig_x[i];
        }
        for j in 0..n_u {
            in_scale[n_x + j] = norm.sig_u[j];
            in_shift[n_x + j] = norm.mu_u[j];
        }
        let mut out_scale = Array1::zeros(n_x + n_y);
        let mut out_shift = Array1::zeros(n_x + n_y);
        for i in 0..n_x {
            out_scale[i] = 1.0 / sig_x[i];
        }
        for j in 0..n_y {
            out_scale[n_x + j] = 1.0 / norm.sig_y[j];
            out_shift[n_x + j] = -norm.mu_y[j] / norm.sig_y[j];
        }
        Ok(Self {
            inner,
            in_scale,
            in_shift,
            out_scale,
            out_shift,
        })
    }

    fn to_raw(&self, z_norm: &Array1<f64>) -> Array1<f64> {
        z_norm * &self.in_scale + &self.in_shift
    }
}

impl Baseline for NormalizedBaseline {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn n_x(&self) -> usize {
        self.inner.n_x()
    }

    fn n_u(&self) -> usize {
        self.inner.n_u()
    }

    fn n_y(&self) -> usize {
        self.inner.n_y()
    }

    fn n_theta(&self) -> usize {
        self.inner.n_theta()
    }

    fn eval(&self, theta: &[f64], z_b: &Array1<f64>) -> Array1<f64> {
        let raw = self.inner.eval(theta, &self.to_raw(z_b));
        raw * &self.out_scale + &self.out_shift
    }

    fn jac_z(&self, theta: &[f64], z_b: &Array1<f64>) -> Array2<f64> {
        let mut jac = self.inner.jac_z(theta, &self.to_raw(z_b));
        for (i, mut row) in jac.rows_mut().into_iter().enumerate() {
            row *= self.out_scale[i];
        }
        for (j, mut col) in jac.columns_mut().into_iter().enumerate() {
            col *= self.in_scale[j];
        }
        jac
    }

    fn jac_theta(&self, theta: &[f64], z_b: &Array1<f64>) -> Array2<f64> {
        let mut jac = self.inner.jac_theta(theta, &self.to_raw(z_b));
        for (i, mut row) in jac.rows_mut().into_iter().enumerate() {
            row *= self.out_scale[i];
        }
        jac
    }

    fn pattern(&self) -> Array2<bool> {
        // diagonal scaling cannot change the dependence structure
        self.inner.pattern()
    }

    fn is_c2(&self) -> bool {
        self.inner.is_c2()
    }

    fn eval_batch(&self, theta: &[f64], z: &Array2<f64>) -> Array2<f64> {
        let mut raw = z.clone();
        for (j, mut col) in raw.columns_mut().into_iter().enumerate() {
            let _ = j;
            col *= &self.in_scale;
            col += &self.in_shift;
        }
        let mut out = self.inner.eval_batch(theta, &raw);
        for mut col in out.columns_mut() {
            col *= &self.out_scale;
            col += &self.out_shift;
        }
        out
    }

    fn vjp_z_batch(&self, theta: &[f64], z: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
        let mut raw = z.clone();
        for mut col in raw.columns_mut() {
            col *= &self.in_scale;
            col += &self.in_shift;
        }
        let mut gs = g.clone();
        for mut col in gs.columns_mut() {
            col *= &self.out_scale;
        }
        let mut out = self.inner.vjp_z_batch(theta, &raw, &gs);
        for mut col in out.columns_mut() {
            col *= &self.in_scale;
        }
        out
    }

    fn vjp_theta_batch(&self, theta: &[f64], z: &Array2<f64>, g: &Array2<f64>) -> Array1<f64> {
        let mut raw = z.clone();
        for mut col in raw.columns_mut() {
            col *= &self.in_scale;
            col += &self.in_shift;
        }
        let mut gs = g.clone();
        for mut col in gs.columns_mut() {
            col *= &self.out_scale;
        }
        self.inner.vjp_theta_batch(theta, &raw, &gs)
    }
}

/// Conjugates a baseline with the fitted transforms. The wrapped component
/// maps normalized signals while keeping its dynamics and physical
/// parameters; the dependence pattern is unchanged.
pub fn wrap_baseline_normalized(
    base: &BaselineComponent,
    norm: &Normalization,
) -> Result<BaselineComponent> {
    let wrapped = NormalizedBaseline::new(base.map.clone(), norm)?;
    Ok(BaselineComponent::new(Arc::new(wrapped), base.theta.clone()))
}

/// Forward-simulates the raw baseline over the raw estimation inputs from a
/// zero initial state, returning the state trajectory (one row per sample,
/// aligned with the data) and per-state standard deviations computed with
/// the first `skip` samples excluded.
pub fn simulate_baseline_states(
    base: &BaselineComponent,
    est_raw: &Dataset,
    skip: usize,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = est_raw.len();
    let n_x = base.map.n_x();
    if n <= skip + 1 {
        return Err(Error::DegenerateData(format!(
            "estimation split too short ({n} samples, skip {skip})"
        )));
    }
    let mut states = Array2::zeros((n, n_x));
    let mut x = Array1::zeros(n_x);
    for k in 0..n {
        states.row_mut(k).assign(&x);
        let mut z = Array1::zeros(n_x + base.map.n_u());
        z.slice_mut(ndarray::s![..n_x]).assign(&x);
        z.slice_mut(ndarray::s![n_x..])
            .assign(&est_raw.u.row(k).to_owned());
        let w = base.eval(&z);
        x = w.slice(ndarray::s![..n_x]).to_owned();
        let mag = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !mag.is_finite() || mag > 1e12 {
            return Err(Error::Divergence {
                step: k,
                magnitude: mag,
            });
        }
    }
    let tail = states.slice(ndarray::s![skip.., ..]).to_owned();
    let (_, sig) = column_stats(&tail);
    for (i, s) in sig.iter().enumerate() {
        if *s <= 0.0 || !s.is_finite() {
            return Err(Error::DegenerateData(format!(
                "baseline state {i} has zero variance"
            )));
        }
    }
    Ok((states, sig))
}

/// Evaluation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    Nrms,
}

/// Simulation-error evaluation result.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Root mean squared simulation error in de-normalized output units.
    pub rmse: f64,
    /// RMSE normalized by the per-channel output standard deviation,
    /// averaged over channels (fraction, not percent).
    pub nrms: f64,
    /// Number of compared samples.
    pub horizon: usize,
    /// Step at which the rollout diverged, if it did; the errors then cover
    /// the partial horizon.
    pub diverged_at: Option<usize>,
}

impl EvalReport {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Rmse => self.rmse,
            Metric::Nrms => self.nrms,
        }
    }
}

/// Full-length simulation error on a normalized dataset.
///
/// The initial state is estimated by the encoder at the first index with
/// complete histories; outputs are compared in de-normalized units.
pub fn evaluate(model: &AugmentedModel, test: &Dataset) -> Result<EvalReport> {
    if test.n_u() != model.dims.n_u || test.n_y() != model.dims.n_y {
        return Err(Error::Dimension {
            what: "evaluation dataset".into(),
            expected: format!("n_u={}, n_y={}", model.dims.n_u, model.dims.n_y),
            got: format!("n_u={}, n_y={}", test.n_u(), test.n_y()),
        });
    }
    let enc = &model.encoder;
    let k0 = enc.n_a.max(enc.n_b);
    if test.len() <= k0 + 1 {
        return Err(Error::DegenerateData("dataset shorter than encoder lags".into()));
    }
    let y_hist = test.y.slice(ndarray::s![k0 - enc.n_a..k0, ..]).to_owned();
    let u_hist = test.u.slice(ndarray::s![k0 - enc.n_b..k0, ..]).to_owned();
    let mut x = enc.estimate(&y_hist, &u_hist)?;

    let n = test.len();
    let mut pred_norm = Array2::zeros((n - k0, model.dims.n_y));
    let mut diverged_at = None;
    let mut produced = 0usize;
    for k in k0..n {
        let u = test.u.row(k).to_owned();
        match model.step(&x, &u) {
            Ok((x_next, y)) => {
                let mag = x_next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !mag.is_finite() || mag > 1e12 {
                    diverged_at = Some(k);
                    pred_norm.row_mut(k - k0).assign(&y);
                    produced += 1;
                    break;
                }
                pred_norm.row_mut(k - k0).assign(&y);
                produced += 1;
                x = x_next;
            }
            Err(_) => {
                diverged_at = Some(k);
                break;
            }
        }
    }
    if produced == 0 {
        return Err(Error::DegenerateData("no comparable samples".into()));
    }
    let pred = model
        .norm
        .denormalize_y(&pred_norm.slice(ndarray::s![..produced, ..]).to_owned());
    let meas = model
        .norm
        .denormalize_y(&test.y.slice(ndarray::s![k0..k0 + produced, ..]).to_owned());

    let mut sq = 0.0;
    for (p, m) in pred.iter().zip(meas.iter()) {
        sq += (p - m) * (p - m);
    }
    let rmse = (sq / (produced * pred.ncols()) as f64).sqrt();

    // per-channel NRMS averaged over channels
    let (_, std_meas) = column_stats(&meas);
    let mut nrms = 0.0;
    for c in 0..pred.ncols() {
        let mut s = 0.0;
        for r in 0..produced {
            let d = pred[[r, c]] - meas[[r, c]];
            s += d * d;
        }
        let rc = (s / produced as f64).sqrt();
        nrms += rc / std_meas[c];
    }
    nrms /= pred.ncols() as f64;

    Ok(EvalReport {
        rmse,
        nrms,
        horizon: produced,
        diverged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearSsBaseline;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array2::from_shape_fn((n, 1), |_| 3.0 * rng.gen_range(-1.0..1.0) + 0.5);
        let y = Array2::from_shape_fn((n, 1), |_| 0.2 * rng.gen_range(-1.0..1.0) - 1.0);
        Dataset {
            u,
            y,
            t_s: 0.02,
            split: SplitTag::Est,
            y_clean: None,
            x_base: None,
        }
    }

    #[test]
    fn normalized_split_has_zero_mean_unit_std() {
        let ds = random_dataset(500, 1);
        let norm = fit_normalization(&ds).unwrap();
        let nds = normalize_dataset(&ds, &norm);
        let re = fit_normalization(&nds).unwrap();
        assert!(re.mu_u[0].abs() < 1e-12);
        assert!(re.mu_y[0].abs() < 1e-12);
        assert!((re.sig_u[0] - 1.0).abs() < 1e-12);
        assert!((re.sig_y[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn val_split_is_near_but_not_exactly_normalized() {
        let est = random_dataset(500, 1);
        let val = random_dataset(400, 2);
        let norm = fit_normalization(&est).unwrap();
        let nval = normalize_dataset(&val, &norm);
        let re = fit_normalization(&nval).unwrap();
        assert!(re.mu_u[0].abs() < 0.2);
        assert!((re.sig_u[0] - 1.0).abs() < 0.2);
        assert!(re.mu_u[0].abs() > 1e-12 || (re.sig_u[0] - 1.0).abs() > 1e-12);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let mut ds = random_dataset(100, 3);
        ds.u.fill(2.0);
        assert!(matches!(
            fit_normalization(&ds),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn scale_inversion_roundtrip() {
        let ds = random_dataset(300, 4);
        let norm = fit_normalization(&ds).unwrap();
        let back = norm.denormalize_y(&norm.normalize_y(&ds.y));
        for (a, b) in back.iter().zip(ds.y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn toy_base() -> BaselineComponent {
        let map = Arc::new(LinearSsBaseline::new("toy", 1, 1, 1));
        let theta = LinearSsBaseline::pack_theta(
            &array![[0.9]],
            &array![[0.5]],
            &array![[1.0]],
            &array![[0.0]],
        );
        BaselineComponent::new(map, theta)
    }

    #[test]
    fn identity_wrap_is_a_no_op() {
        let base = toy_base();
        let norm = Normalization::identity(1, 1, 1);
        let wrapped = wrap_baseline_normalized(&base, &norm).unwrap();
        let z = array![0.7, -0.3];
        assert_eq!(base.eval(&z), wrapped.eval(&z));
    }

    #[test]
    fn wrapped_simulation_commutes_with_normalization() {
        let base = toy_base();
        let est = random_dataset(400, 7);
        let mut norm = fit_normalization(&est).unwrap();
        let (_, sig_x) = simulate_baseline_states(&base, &est, 2).unwrap();
        norm.sig_x = Some(sig_x);
        let wrapped = wrap_baseline_normalized(&base, &norm).unwrap();

        // raw simulation
        let mut x_raw = array![0.4];
        let mut raw_out = Vec::new();
        for k in 0..50 {
            let z = array![x_raw[0], est.u[[k, 0]]];
            let w = base.eval(&z);
            raw_out.push(w[1]);
            x_raw = array![w[0]];
        }
        // normalized simulation, de-normalized afterwards
        let sig_x = norm.sig_x.as_ref().unwrap();
        let mut x_n = array![0.4 / sig_x[0]];
        for (k, raw_y) in raw_out.iter().enumerate() {
            let un = (est.u[[k, 0]] - norm.mu_u[0]) / norm.sig_u[0];
            let z = array![x_n[0], un];
            let w = wrapped.eval(&z);
            let y_raw = w[1] * norm.sig_y[0] + norm.mu_y[0];
            let denom = raw_y.abs().max(1.0);
            assert!(
                ((y_raw - raw_y) / denom).abs() < 1e-10,
                "step {k}: {y_raw} vs {raw_y}"
            );
            x_n = array![w[0]];
        }
    }

    #[test]
    fn doubling_output_scale_doubles_wrapped_output() {
        let base = toy_base();
        let mut norm = Normalization::identity(1, 1, 1);
        norm.sig_y = array![0.5]; // T_y = 2
        let wrapped = wrap_baseline_normalized(&base, &norm).unwrap();
        let z = array![0.7, -0.3];
        let w1 = base.eval(&z);
        let w2 = wrapped.eval(&z);
        assert_eq!(w2[1], 2.0 * w1[1]);
        assert_eq!(w2[0], w1[0]);
    }

    #[test]
    fn baseline_state_simulation_records_initial_state() {
        let base = toy_base();
        let est = random_dataset(100, 9);
        let (states, sig) = simulate_baseline_states(&base, &est, 0).unwrap();
        assert_eq!(states[[0, 0]], 0.0);
        assert!(sig[0] > 0.0);
    }
}
