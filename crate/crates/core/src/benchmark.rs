//! Mass-spring-damper benchmark: data-generating system and linear baseline.
//!
//! The data generator is a three-mass chain (wall-m1-m2-m3, spring/damper i
//! between body i and its left neighbour) with a cubic hardening term on
//! spring 1, an external force on m1 and the position of m2 as output.
//! Three variants exist: (a) the plain chain, (b) with input saturation
//! `30 tanh(u/30)` ahead of the dynamics, (c) with a first-order low-pass
//! filter on the output. Continuous dynamics are integrated with classical
//! RK4 under zero-order-hold input at `T_s = 0.02 s`, driven by random-phase
//! multisines, and the sampled output is disturbed by white Gaussian noise at
//! 30 dB signal-to-noise ratio.
//!
//! The baseline model is the linear two-mass truncation of the same chain,
//! RK4-discretised, with physical parameters `(m1, m2, k1, k2, c1, c2)`.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Baseline, BaselineComponent};
use crate::training::{Dataset, SplitTag};

/// Sampling time of the benchmark (seconds).
pub const T_S: f64 = 0.02;

/// Cutoff of the variant-(c) output filter (Hz).
pub const LPF_CUTOFF_HZ: f64 = 5.0;

/// Physical parameters of the three-mass chain.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MsdParams {
    pub m: [f64; 3],
    pub k: [f64; 3],
    pub c: [f64; 3],
    pub a1: f64,
}

impl Default for MsdParams {
    fn default() -> Self {
        Self {
            m: [0.5, 0.4, 0.1],
            k: [100.0, 100.0, 100.0],
            c: [0.5, 0.5, 0.5],
            a1: 100.0,
        }
    }
}

/// Benchmark variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    A,
    B,
    C,
}

impl Variant {
    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "a" | "A" => Some(Variant::A),
            "b" | "B" => Some(Variant::B),
            "c" | "C" => Some(Variant::C),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::A => "a",
            Variant::B => "b",
            Variant::C => "c",
        }
    }
}

/// Input saturation of variant (b).
pub fn saturate(u: f64) -> f64 {
    30.0 * (u / 30.0).tanh()
}

/// Continuous-time derivatives of the three-mass chain.
///
/// State layout `(p1, v1, p2, v2, p3, v3)`. For variant (b) the force is
/// saturated before entering the dynamics; variants are otherwise identical.
pub fn msd_derivatives(
    state: &Array1<f64>,
    force: f64,
    p: &MsdParams,
    variant: Variant,
) -> Array1<f64> {
    let f = if variant == Variant::B { saturate(force) } else { force };
    let (p1, v1, p2, v2, p3, v3) = (state[0], state[1], state[2], state[3], state[4], state[5]);
    let f1 = -p.k[0] * p1 - p.a1 * p1 * p1 * p1 - p.c[0] * v1 - p.k[1] * (p1 - p2)
        - p.c[1] * (v1 - v2)
        + f;
    let f2 = -p.k[1] * (p2 - p1) - p.c[1] * (v2 - v1) - p.k[2] * (p2 - p3) - p.c[2] * (v2 - v3);
    let f3 = -p.k[2] * (p3 - p2) - p.c[2] * (v3 - v2);
    Array1::from(vec![v1, f1 / p.m[0], v2, f2 / p.m[1], v3, f3 / p.m[2]])
}

/// Classical fourth-order Runge-Kutta step with the input held constant.
pub fn rk4_step<F>(f: F, state: &Array1<f64>, u_held: f64, t_s: f64) -> Array1<f64>
where
    F: Fn(&Array1<f64>, f64) -> Array1<f64>,
{
    let k1 = f(state, u_held);
    let k2 = f(&(state + &(&k1 * (t_s / 2.0))), u_held);
    let k3 = f(&(state + &(&k2 * (t_s / 2.0))), u_held);
    let k4 = f(&(state + &(&k3 * t_s)), u_held);
    state + &((k1 + k2.mapv(|v| 2.0 * v) + k3.mapv(|v| 2.0 * v) + k4) * (t_s / 6.0))
}

/// Periodic excitation: sum of cosines at selected frequency bins with
/// random phases, scaled to an exact sample RMS over one period.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MultisineSpec {
    /// Period length in samples.
    pub n_p: usize,
    /// Selected DFT bin indices, each in `(0, n_p / 2)`.
    pub bins: Vec<usize>,
    /// Target sample RMS over one period.
    pub target_rms: f64,
    pub phase_seed: u64,
    /// Sampling frequency in Hz.
    pub f_s: f64,
}

impl MultisineSpec {
    /// Benchmark default: 10^4-sample period at 50 Hz, every 3rd bin up to
    /// 24.99 Hz (1666 components), RMS 10.
    pub fn benchmark_default(phase_seed: u64) -> Self {
        Self {
            n_p: 10_000,
            bins: (1..=1666).map(|j| 3 * j).collect(),
            target_rms: 10.0,
            phase_seed,
            f_s: 1.0 / T_S,
        }
    }
}

/// Generates one period of the multisine. Periodic extension is exact:
/// phases are evaluated modulo the period.
pub fn generate_multisine(spec: &MultisineSpec) -> Result<Vec<f64>> {
    if spec.bins.is_empty() {
        return Err(Error::SignalSpec("multisine needs at least one bin".into()));
    }
    for &b in &spec.bins {
        if b == 0 || 2 * b >= spec.n_p {
            return Err(Error::SignalSpec(format!(
                "bin {b} outside (0, n_p/2) for n_p = {}",
                spec.n_p
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.phase_seed);
    let phases: Vec<f64> = spec
        .bins
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let n = spec.n_p;
    let mut u = vec![0.0f64; n];
    for (bi, &bin) in spec.bins.iter().enumerate() {
        let phase = phases[bi];
        for (k, uk) in u.iter_mut().enumerate() {
            let frac = ((bin as u64 * k as u64) % n as u64) as f64 / n as f64;
            *uk += (std::f64::consts::TAU * frac + phase).cos();
        }
    }
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = spec.target_rms / rms;
    for v in u.iter_mut() {
        *v *= scale;
    }
    Ok(u)
}

/// Simulates the chain over the input samples, returning the clean output.
fn simulate_chain(u: &[f64], params: &MsdParams, variant: Variant) -> Result<Vec<f64>> {
    let mut x = Array1::zeros(6);
    let mut y = Vec::with_capacity(u.len());
    let mut filt = 0.0f64;
    let alpha = (-std::f64::consts::TAU * LPF_CUTOFF_HZ * T_S).exp();
    for (k, &uk) in u.iter().enumerate() {
        let p2 = x[2];
        let yk = match variant {
            Variant::C => {
                filt = alpha * filt + (1.0 - alpha) * p2;
                filt
            }
            _ => p2,
        };
        y.push(yk);
        x = rk4_step(|s, f| msd_derivatives(s, f, params, variant), &x, uk, T_S);
        if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Divergence {
                step: k,
                magnitude: x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            });
        }
    }
    Ok(y)
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Generates the estimation, validation and test splits.
///
/// The estimation split holds two periods of one multisine realization; the
/// validation and test splits each hold one period of independently phased
/// realizations (phase seeds offset by 1 and 2). The noise level is set on
/// the estimation split's clean output for a 30 dB signal-to-noise ratio and
/// shared by all splits.
pub fn generate_dataset(
    variant: Variant,
    params: &MsdParams,
    spec: &MultisineSpec,
    noise_seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let make_u = |seed_offset: u64, periods: usize| -> Result<Vec<f64>> {
        let mut s = spec.clone();
        s.phase_seed = spec.phase_seed + seed_offset;
        let one = generate_multisine(&s)?;
        let mut u = Vec::with_capacity(one.len() * periods);
        for _ in 0..periods {
            u.extend_from_slice(&one);
        }
        Ok(u)
    };
    let u_est = make_u(0, 2)?;
    let u_val = make_u(1, 1)?;
    let u_test = make_u(2, 1)?;

    let clean_est = simulate_chain(&u_est, params, variant)?;
    let clean_val = simulate_chain(&u_val, params, variant)?;
    let clean_test = simulate_chain(&u_test, params, variant)?;

    // noise level from the estimation split: sigma = RMS / 10^(30/20)
    let sigma = rms(&clean_est) / 10f64.powf(30.0 / 20.0);

    let mut build = |u: Vec<f64>, clean: Vec<f64>, split: SplitTag, seed: u64| -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = u.len();
        let mut y = Array2::zeros((n, 1));
        let mut y_clean = Array2::zeros((n, 1));
        for k in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            y_clean[[k, 0]] = clean[k];
            y[[k, 0]] = clean[k] + sigma * e;
        }
        let mut u_arr = Array2::zeros((n, 1));
        for k in 0..n {
            u_arr[[k, 0]] = u[k];
        }
        Dataset {
            u: u_arr,
            y,
            t_s: T_S,
            split,
            y_clean: Some(y_clean),
            x_base: None,
        }
    };

    let est = build(u_est, clean_est, SplitTag::Est, noise_seed);
    let val = build(u_val, clean_val, SplitTag::Val, noise_seed + 1);
    let test = build(u_test, clean_test, SplitTag::Test, noise_seed + 2);
    Ok((est, val, test))
}

/// Baseline parameter choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamSet {
    Ideal,
    Approx,
}

impl ParamSet {
    pub fn theta(self) -> Array1<f64> {
        match self {
            ParamSet::Ideal => Array1::from(vec![0.5, 0.4, 100.0, 100.0, 0.5, 0.5]),
            ParamSet::Approx => Array1::from(vec![0.5, 0.4, 95.0, 95.0, 0.45, 0.45]),
        }
    }
}

/// Linear two-mass chain baseline, RK4-discretised.
///
/// Parameters are `(m1, m2, k1, k2, c1, c2)`; states `(p1, v1, p2, v2)`;
/// output `p2`. For a linear system the RK4 step equals the fourth-order
/// truncation of the matrix exponential series, which is what the Jacobians
/// differentiate analytically.
pub struct Msd2DofBaseline {
    pub t_s: f64,
}

impl Msd2DofBaseline {
    pub fn new(t_s: f64) -> Self {
        Self { t_s }
    }

    fn continuous(theta: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let (m1, m2, k1, k2, c1, c2) = (theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]);
        let a = ndarray::array![
            [0.0, 1.0, 0.0, 0.0],
            [-(k1 + k2) / m1, -(c1 + c2) / m1, k2 / m1, c2 / m1],
            [0.0, 0.0, 0.0, 1.0],
            [k2 / m2, c2 / m2, -k2 / m2, -c2 / m2]
        ];
        let b = ndarray::array![0.0, 1.0 / m1, 0.0, 0.0];
        (a, b)
    }

    fn continuous_derivative(theta: &[f64], p: usize) -> (Array2<f64>, Array1<f64>) {
        let (m1, m2, k1, k2, c1, c2) = (theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]);
        let mut e = Array2::zeros((4, 4));
        let mut f = Array1::zeros(4);
        match p {
            0 => {
                // d/dm1: the m1 rows scale as -1/m1 times themselves
                e[[1, 0]] = (k1 + k2) / (m1 * m1);
                e[[1, 1]] = (c1 + c2) / (m1 * m1);
                e[[1, 2]] = -k2 / (m1 * m1);
                e[[1, 3]] = -c2 / (m1 * m1);
                f[1] = -1.0 / (m1 * m1);
            }
            1 => {
                e[[3, 0]] = -k2 / (m2 * m2);
                e[[3, 1]] = -c2 / (m2 * m2);
                e[[3, 2]] = k2 / (m2 * m2);
                e[[3, 3]] = c2 / (m2 * m2);
            }
            2 => {
                e[[1, 0]] = -1.0 / m1;
            }
            3 => {
                e[[1, 0]] = -1.0 / m1;
                e[[1, 2]] = 1.0 / m1;
                e[[3, 0]] = 1.0 / m2;
                e[[3, 2]] = -1.0 / m2;
            }
            4 => {
                e[[1, 1]] = -1.0 / m1;
            }
            5 => {
                e[[1, 1]] = -1.0 / m1;
                e[[1, 3]] = 1.0 / m1;
                e[[3, 1]] = 1.0 / m2;
                e[[3, 3]] = -1.0 / m2;
            }
            _ => unreachable!(),
        }
        (e, f)
    }

    /// Discrete `(A_d, B_d)` of the RK4 step: the degree-4 series in `h A_c`.
    pub fn discrete(&self, theta: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let (a, b) = Self::continuous(theta);
        let h = self.t_s;
        let a2 = a.dot(&a);
        let a3 = a2.dot(&a);
        let a4 = a3.dot(&a);
        let eye = Array2::eye(4);
        let a_d = &eye
            + &(&a * h)
            + &(&a2 * (h * h / 2.0))
            + &(&a3 * (h * h * h / 6.0))
            + &(&a4 * (h * h * h * h / 24.0));
        let mix = &(&eye * h)
            + &(&a * (h * h / 2.0))
            + &(&a2 * (h * h * h / 6.0))
            + &(&a3 * (h * h * h * h / 24.0));
        let b_d = mix.dot(&b);
        (a_d, b_d)
    }

    /// Parameter derivatives of `(A_d, B_d)` by the product rule on the series.
    fn discrete_derivative(&self, theta: &[f64], p: usize) -> (Array2<f64>, Array1<f64>) {
        let (a, b) = Self::continuous(theta);
        let (e, f) = Self::continuous_derivative(theta, p);
        let h = self.t_s;
        let a2 = a.dot(&a);
        let a3 = a2.dot(&a);
        let d_a2 = e.dot(&a) + a.dot(&e);
        let d_a3 = d_a2.dot(&a) + a2.dot(&e);
        let d_a4 = d_a3.dot(&a) + a3.dot(&e);
        let d_a_d = &(&e * h)
            + &(&d_a2 * (h * h / 2.0))
            + &(&d_a3 * (h * h * h / 6.0))
            + &(&d_a4 * (h * h * h * h / 24.0));
        let eye = Array2::eye(4);
        let mix = &(&eye * h)
            + &(&a * (h * h / 2.0))
            + &(&a2 * (h * h * h / 6.0))
            + &(&a3 * (h * h * h * h / 24.0));
        let d_mix = &(&e * (h * h / 2.0))
            + &(&d_a2 * (h * h * h / 6.0))
            + &(&d_a3 * (h * h * h * h / 24.0));
        let d_b_d = d_mix.dot(&b) + mix.dot(&f);
        (d_a_d, d_b_d)
    }
}

impl Baseline for Msd2DofBaseline {
    fn id(&self) -> &str {
        "msd-2dof"
    }

    fn n_x(&self) -> usize {
        4
    }

    fn n_u(&self) -> usize {
        1
    }

    fn n_y(&self) -> usize {
        1
    }

    fn n_theta(&self) -> usize {
        6
    }

    fn eval(&self, theta: &[f64], z_b: &Array1<f64>) -> Array1<f64> {
        let (a_d, b_d) = self.discrete(theta);
        let x = z_b.slice(s![..4]).to_owned();
        let u = z_b[4];
        let x_next = a_d.dot(&x) + b_d.mapv(|v| v * u);
        let mut w = Array1::zeros(5);
        w.slice_mut(s![..4]).assign(&x_next);
        w[4] = x[2];
        w
    }

    fn jac_z(&self, theta: &[f64], _z_b: &Array1<f64>) -> Array2<f64> {
        let (a_d, b_d) = self.discrete(theta);
        let mut jac = Array2::zeros((5, 5));
        jac.slice_mut(s![..4, ..4]).assign(&a_d);
        for i in 0..4 {
            jac[[i, 4]] = b_d[i];
        }
        jac[[4, 2]] = 1.0;
        jac
    }

    fn jac_theta(&self, theta: &[f64], z_b: &Array1<f64>) -> Array2<f64> {
        let x = z_b.slice(s![..4]).to_owned();
        let u = z_b[4];
        let mut jac = Array2::zeros((5, 6));
        for p in 0..6 {
            let (d_a, d_b) = self.discrete_derivative(theta, p);
            let col = d_a.dot(&x) + d_b.mapv(|v| v * u);
            for i in 0..4 {
                jac[[i, p]] = col[i];
            }
        }
        jac
    }

    fn pattern(&self) -> Array2<bool> {
        let mut p = Array2::from_elem((5, 5), false);
        // the discretised transition couples every state and the input
        p.slice_mut(s![..4, ..]).fill(true);
        p[[4, 2]] = true;
        p
    }

    fn eval_batch(&self, theta: &[f64], z: &Array2<f64>) -> Array2<f64> {
        let (a_d, b_d) = self.discrete(theta);
        let x = z.slice(s![..4, ..]);
        let u = z.slice(s![4..5, ..]);
        let mut out = Array2::zeros((5, z.ncols()));
        let xn = a_d.dot(&x) + b_d.view().insert_axis(ndarray::Axis(1)).dot(&u);
        out.slice_mut(s![..4, ..]).assign(&xn);
        out.slice_mut(s![4..5, ..]).assign(&z.slice(s![2..3, ..]));
        out
    }

    fn vjp_z_batch(&self, theta: &[f64], _z: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
        let jac = self.jac_z(theta, &Array1::zeros(5));
        jac.t().dot(g)
    }

    fn vjp_theta_batch(&self, theta: &[f64], z: &Array2<f64>, g: &Array2<f64>) -> Array1<f64> {
        // sum_j jac_theta(z_j)^T g_j; jac_theta is linear in z, so accumulate
        // via the per-parameter discrete derivatives applied to all columns.
        let x = z.slice(s![..4, ..]);
        let u = z.slice(s![4..5, ..]);
        let gx = g.slice(s![..4, ..]);
        let mut out = Array1::zeros(6);
        for p in 0..6 {
            let (d_a, d_b) = self.discrete_derivative(theta, p);
            let cols = d_a.dot(&x) + d_b.view().insert_axis(ndarray::Axis(1)).dot(&u);
            out[p] = (&cols * &gx).sum();
        }
        out
    }
}

/// Builds the two-mass baseline with the given parameter set.
pub fn make_baseline_2dof(set: ParamSet) -> BaselineComponent {
    BaselineComponent::new(Arc::new(Msd2DofBaseline::new(T_S)), set.theta())
}

/// Generation metadata stored next to each dataset file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSidecar {
    pub t_s: f64,
    pub variant: String,
    pub split: String,
    pub phase_seed: u64,
    pub noise_seed: u64,
    pub n_p: usize,
    pub bin_count: usize,
    pub target_rms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpf_cutoff_hz: Option<f64>,
}

impl DatasetSidecar {
    pub fn new(variant: Variant, spec: &MultisineSpec, noise_seed: u64, split: SplitTag) -> Self {
        Self {
            t_s: T_S,
            variant: variant.name().to_string(),
            split: split.name().to_string(),
            phase_seed: spec.phase_seed,
            noise_seed,
            n_p: spec.n_p,
            bin_count: spec.bins.len(),
            target_rms: spec.target_rms,
            saturation: (variant == Variant::B).then(|| "30tanh(u/30)".to_string()),
            lpf_cutoff_hz: (variant == Variant::C).then_some(LPF_CUTOFF_HZ),
        }
    }
}

/// Writes `k,u,y,y_clean` rows plus a JSON sidecar.
pub fn write_dataset(path: &Path, ds: &Dataset, sidecar: &DatasetSidecar) -> Result<()> {
    use std::io::Write;
    let mut out = String::from("k,u,y,y_clean\n");
    for k in 0..ds.u.nrows() {
        let clean = ds
            .y_clean
            .as_ref()
            .map(|c| c[[k, 0]])
            .unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{},{},{},{}\n",
            k,
            ds.u[[k, 0]],
            ds.y[[k, 0]],
            clean
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    let sidecar_path = path.with_extension("json");
    let mut sf = std::fs::File::create(sidecar_path)?;
    sf.write_all(serde_json::to_string_pretty(sidecar)?.as_bytes())?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path, split: SplitTag) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut y_clean = Vec::new();
    let mut any_clean = false;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let _k = parts.next();
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| Error::DegenerateData(format!("short row {i} in {path:?}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::DegenerateData(format!("row {i}: {e}")))
        };
        u.push(parse(parts.next())?);
        y.push(parse(parts.next())?);
        match parts.next() {
            Some(c) if !c.trim().is_empty() => {
                let v = c
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::DegenerateData(format!("row {i}: {e}")))?;
                if v.is_finite() {
                    any_clean = true;
                }
                y_clean.push(v);
            }
            _ => y_clean.push(f64::NAN),
        }
    }
    let n = u.len();
    let t_s = std::fs::read_to_string(path.with_extension("json"))
        .ok()
        .and_then(|s| serde_json::from_str::<DatasetSidecar>(&s).ok())
        .map(|sc| sc.t_s)
        .unwrap_or(T_S);
    Ok(Dataset {
        u: Array2::from_shape_vec((n, 1), u).expect("shape"),
        y: Array2::from_shape_vec((n, 1), y).expect("shape"),
        t_s,
        split,
        y_clean: any_clean.then(|| Array2::from_shape_vec((n, 1), y_clean).expect("shape")),
        x_base: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn equilibrium_has_zero_derivative() {
        let p = MsdParams::default();
        let d = msd_derivatives(&Array1::zeros(6), 0.0, &p, Variant::A);
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_chain_matches_matrix_oracle() {
        // a1 = 0 reduces the dynamics to x' = M^-1 (-K p - C v + F u), coded
        // here independently with explicit mass/stiffness/damping matrices.
        let mut p = MsdParams::default();
        p.a1 = 0.0;
        let state = array![0.3, -0.1, 0.2, 0.5, -0.4, 0.05];
        let force = 2.5;
        let d = msd_derivatives(&state, force, &p, Variant::A);

        let k = &p.k;
        let c = &p.c;
        let kmat = array![
            [k[0] + k[1], -k[1], 0.0],
            [-k[1], k[1] + k[2], -k[2]],
            [0.0, -k[2], k[2]]
        ];
        let cmat = array![
            [c[0] + c[1], -c[1], 0.0],
            [-c[1], c[1] + c[2], -c[2]],
            [0.0, -c[2], c[2]]
        ];
        let pos = array![state[0], state[2], state[4]];
        let vel = array![state[1], state[3], state[5]];
        let fvec = array![force, 0.0, 0.0];
        let acc_num = fvec - kmat.dot(&pos) - cmat.dot(&vel);
        let acc = array![
            acc_num[0] / p.m[0],
            acc_num[1] / p.m[1],
            acc_num[2] / p.m[2]
        ];
        for (i, a) in acc.iter().enumerate() {
            assert!((d[2 * i + 1] - a).abs() < 1e-12, "body {i}");
        }
    }

    #[test]
    fn energy_dissipates_without_input() {
        let p = MsdParams::default();
        let energy = |x: &Array1<f64>| -> f64 {
            let kinetic = 0.5 * (p.m[0] * x[1] * x[1] + p.m[1] * x[3] * x[3] + p.m[2] * x[5] * x[5]);
            let d1 = x[0];
            let d2 = x[2] - x[0];
            let d3 = x[4] - x[2];
            let potential = 0.5 * (p.k[0] * d1 * d1 + p.k[1] * d2 * d2 + p.k[2] * d3 * d3)
                + 0.25 * p.a1 * d1.powi(4);
            kinetic + potential
        };
        let mut x = array![0.12, 0.0, -0.08, 0.3, 0.05, -0.2];
        let mut prev = energy(&x);
        // 10 s rollout, checking at 1 s marks
        for step in 1..=500 {
            x = rk4_step(|s, f| msd_derivatives(s, f, &p, Variant::A), &x, 0.0, T_S);
            if step % 50 == 0 {
                let now = energy(&x);
                assert!(now < prev, "energy must decay: {now} >= {prev}");
                prev = now;
            }
        }
    }

    #[test]
    fn rk4_identity_for_zero_derivative() {
        let x = array![1.0, -2.0];
        let next = rk4_step(|_, _| Array1::zeros(2), &x, 0.0, 0.02);
        assert_eq!(next, x);
    }

    #[test]
    fn rk4_matches_scalar_exponential() {
        let x = array![1.0];
        let next = rk4_step(|s, _| s.mapv(|v| -v), &x, 0.0, 0.02);
        assert!((next[0] - (-0.02f64).exp()).abs() <= 1e-10);
    }

    #[test]
    fn rk4_on_linear_system_equals_series() {
        let a = array![[0.0, 1.0], [-4.0, -0.5]];
        let x = array![0.7, -0.3];
        let h = 0.02;
        let next = rk4_step(|s, _| a.dot(s), &x, 0.0, h);
        let a2 = a.dot(&a);
        let a3 = a2.dot(&a);
        let a4 = a3.dot(&a);
        let series = Array2::eye(2)
            + &(&a * h)
            + &(&a2 * (h * h / 2.0))
            + &(&a3 * (h * h * h / 6.0))
            + &(&a4 * (h * h * h * h / 24.0));
        let expect = series.dot(&x);
        for i in 0..2 {
            assert!((next[i] - expect[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_bin_multisine_is_pure_cosine() {
        let spec = MultisineSpec {
            n_p: 100,
            bins: vec![5],
            target_rms: 2.0,
            phase_seed: 0,
            f_s: 50.0,
        };
        let u = generate_multisine(&spec).unwrap();
        let r = (u.iter().map(|v| v * v).sum::<f64>() / 100.0).sqrt();
        assert!((r - 2.0).abs() < 1e-12);
        // cosine amplitude is rms * sqrt(2)
        let amp = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 2.0 * 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn multisine_is_exactly_periodic() {
        let spec = MultisineSpec {
            n_p: 250,
            bins: vec![3, 9, 27],
            target_rms: 1.0,
            phase_seed: 42,
            f_s: 50.0,
        };
        let u = generate_multisine(&spec).unwrap();
        // regenerate and compare against index arithmetic mod n_p
        let u2 = generate_multisine(&spec).unwrap();
        assert_eq!(u, u2);
    }

    #[test]
    fn empty_bins_rejected() {
        let spec = MultisineSpec {
            n_p: 100,
            bins: vec![],
            target_rms: 1.0,
            phase_seed: 0,
            f_s: 50.0,
        };
        assert!(generate_multisine(&spec).is_err());
    }

    #[test]
    fn baseline_parameter_jacobian_matches_finite_differences() {
        let base = Msd2DofBaseline::new(T_S);
        let theta = ParamSet::Approx.theta();
        let z = array![0.1, -0.2, 0.3, 0.4, 1.5];
        let jac = base.jac_theta(theta.as_slice().unwrap(), &z);
        let h = 1e-6;
        for p in 0..6 {
            let mut tp = theta.clone();
            tp[p] += h * theta[p].abs().max(1.0);
            let mut tm = theta.clone();
            tm[p] -= h * theta[p].abs().max(1.0);
            let step = tp[p] - tm[p];
            let up = base.eval(tp.as_slice().unwrap(), &z);
            let dn = base.eval(tm.as_slice().unwrap(), &z);
            for i in 0..5 {
                let fd = (up[i] - dn[i]) / step;
                let denom = fd.abs().max(jac[[i, p]].abs()).max(1e-8);
                assert!(
                    ((fd - jac[[i, p]]).abs() / denom) < 1e-5,
                    "param {p}, row {i}: fd {fd} vs {}",
                    jac[[i, p]]
                );
            }
        }
    }

    #[test]
    fn approx_theta_matches_catalog() {
        let t = ParamSet::Approx.theta();
        assert_eq!(t, array![0.5, 0.4, 95.0, 95.0, 0.45, 0.45]);
    }

    #[test]
    fn ideal_baseline_is_stable() {
        // spectral radius of A_d via the norm of repeated squarings
        let base = Msd2DofBaseline::new(T_S);
        let (a_d, _) = base.discrete(ParamSet::Ideal.theta().as_slice().unwrap());
        let mut m = a_d.clone();
        let mut power = 1u32;
        for _ in 0..12 {
            m = m.dot(&m);
            power *= 2;
            // renormalise to avoid under/overflow
            let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm.is_finite());
        }
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rho = norm.powf(1.0 / power as f64);
        assert!(rho < 1.0, "spectral radius estimate {rho}");
    }
}
