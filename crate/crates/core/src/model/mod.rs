//! Augmented state-space model built around a linear fractional interconnection.
//!
//! The model couples a first-principle baseline component and a learned
//! component through a partitioned interconnection matrix `W`:
//!
//! ```text
//! [ x+ ]   [ A      B_u    B_w_b   B_w_a  ] [ x   ]
//! [ y  ] = [ C_y    D_yu   D_yw_b  D_yw_a ] [ u   ]
//! [ z_b]   [ C_z_b  D_zu_b D_zw_bb D_zw_ba] [ w_b ]
//! [ z_a]   [ C_z_a  D_zu_a D_zw_ab D_zw_aa] [ w_a ]
//!
//! w_b = phi_base(theta_base, z_b),   w_a = phi_aug(theta_aug, z_a)
//! ```
//!
//! The `D_zw` blocks close an algebraic loop; evaluation is only supported
//! for restriction modes where the loop resolves by block substitution.

mod baseline;
mod checkpoint;
mod encoder;
mod resnet;

pub use baseline::{Baseline, BaselineComponent, LinearSsBaseline};
pub use checkpoint::{model_from_checkpoint, model_to_checkpoint, CHECKPOINT_FORMAT};
pub use encoder::EncoderNet;
pub use resnet::{AugComponent, HeadPlan, ResNetComponent, RowInit};

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::training::Normalization;

/// Signal dimensions of an augmented model.
///
/// `n_z_b` and `n_w_b` are fixed by the baseline interface (`z_b` stacks the
/// baseline state and input, `w_b` stacks the baseline state update and
/// output) and are derived rather than stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dimensions {
    pub n_x_b: usize,
    pub n_x_a: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_z_a: usize,
    pub n_w_a: usize,
}

impl Dimensions {
    pub fn new(
        n_x_b: usize,
        n_x_a: usize,
        n_u: usize,
        n_y: usize,
        n_z_a: usize,
        n_w_a: usize,
    ) -> Result<Self> {
        if n_x_b < 1 || n_u < 1 || n_y < 1 {
            return Err(Error::Dimension {
                what: "dimensions".into(),
                expected: "n_x_b >= 1, n_u >= 1, n_y >= 1".into(),
                got: format!("n_x_b={n_x_b}, n_u={n_u}, n_y={n_y}"),
            });
        }
        Ok(Self {
            n_x_b,
            n_x_a,
            n_u,
            n_y,
            n_z_a,
            n_w_a,
        })
    }

    /// Total state count `n_x_b + n_x_a`.
    pub fn n_x(&self) -> usize {
        self.n_x_b + self.n_x_a
    }

    /// Baseline latent input size, always `n_x_b + n_u`.
    pub fn n_z_b(&self) -> usize {
        self.n_x_b + self.n_u
    }

    /// Baseline latent output size, always `n_x_b + n_y`.
    pub fn n_w_b(&self) -> usize {
        self.n_x_b + self.n_y
    }
}

/// Which `D_zw` blocks are allowed to be nonzero or trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DzwMode {
    /// All four `D_zw` blocks identically zero.
    Zero,
    /// Only `D_zw_ab` may be nonzero (the baseline feeds the learned part).
    AbOnly,
    /// Only `D_zw_ba` may be nonzero (the learned part feeds the baseline).
    BaOnly,
    /// No restriction. Representable, but not evaluable by substitution.
    Unrestricted,
}

impl DzwMode {
    pub fn name(self) -> &'static str {
        match self {
            DzwMode::Zero => "Zero",
            DzwMode::AbOnly => "AbOnly",
            DzwMode::BaOnly => "BaOnly",
            DzwMode::Unrestricted => "Unrestricted",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "Zero" => Some(DzwMode::Zero),
            "AbOnly" => Some(DzwMode::AbOnly),
            "BaOnly" => Some(DzwMode::BaOnly),
            "Unrestricted" => Some(DzwMode::Unrestricted),
            _ => None,
        }
    }

    /// Block ids that must stay zero under this mode.
    pub fn forbidden(self) -> &'static [BlockId] {
        use BlockId::*;
        match self {
            DzwMode::Zero => &[DZwBb, DZwBa, DZwAb, DZwAa],
            DzwMode::AbOnly => &[DZwBb, DZwBa, DZwAa],
            DzwMode::BaOnly => &[DZwBb, DZwAb, DZwAa],
            DzwMode::Unrestricted => &[],
        }
    }
}

/// Identifier of one of the sixteen blocks of the interconnection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockId {
    A,
    BU,
    BWb,
    BWa,
    CY,
    DYu,
    DYwB,
    DYwA,
    CZb,
    DZuB,
    DZwBb,
    DZwBa,
    CZa,
    DZuA,
    DZwAb,
    DZwAa,
}

impl BlockId {
    pub const ALL: [BlockId; 16] = [
        BlockId::A,
        BlockId::BU,
        BlockId::BWb,
        BlockId::BWa,
        BlockId::CY,
        BlockId::DYu,
        BlockId::DYwB,
        BlockId::DYwA,
        BlockId::CZb,
        BlockId::DZuB,
        BlockId::DZwBb,
        BlockId::DZwBa,
        BlockId::CZa,
        BlockId::DZuA,
        BlockId::DZwAb,
        BlockId::DZwAa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::A => "A",
            BlockId::BU => "B_u",
            BlockId::BWb => "B_w_b",
            BlockId::BWa => "B_w_a",
            BlockId::CY => "C_y",
            BlockId::DYu => "D_yu",
            BlockId::DYwB => "D_yw_b",
            BlockId::DYwA => "D_yw_a",
            BlockId::CZb => "C_z_b",
            BlockId::DZuB => "D_zu_b",
            BlockId::DZwBb => "D_zw_bb",
            BlockId::DZwBa => "D_zw_ba",
            BlockId::CZa => "C_z_a",
            BlockId::DZuA => "D_zu_a",
            BlockId::DZwAb => "D_zw_ab",
            BlockId::DZwAa => "D_zw_aa",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        BlockId::ALL.iter().copied().find(|b| b.name() == s)
    }

    fn index(self) -> usize {
        BlockId::ALL.iter().position(|b| *b == self).unwrap()
    }

    /// Required `(rows, cols)` of this block for the given dimensions.
    pub fn shape(self, dims: &Dimensions) -> (usize, usize) {
        let (n_x, n_u, n_y) = (dims.n_x(), dims.n_u, dims.n_y);
        let (n_z_b, n_z_a, n_w_b, n_w_a) = (dims.n_z_b(), dims.n_z_a, dims.n_w_b(), dims.n_w_a);
        match self {
            BlockId::A => (n_x, n_x),
            BlockId::BU => (n_x, n_u),
            BlockId::BWb => (n_x, n_w_b),
            BlockId::BWa => (n_x, n_w_a),
            BlockId::CY => (n_y, n_x),
            BlockId::DYu => (n_y, n_u),
            BlockId::DYwB => (n_y, n_w_b),
            BlockId::DYwA => (n_y, n_w_a),
            BlockId::CZb => (n_z_b, n_x),
            BlockId::DZuB => (n_z_b, n_u),
            BlockId::DZwBb => (n_z_b, n_w_b),
            BlockId::DZwBa => (n_z_b, n_w_a),
            BlockId::CZa => (n_z_a, n_x),
            BlockId::DZuA => (n_z_a, n_u),
            BlockId::DZwAb => (n_z_a, n_w_b),
            BlockId::DZwAa => (n_z_a, n_w_a),
        }
    }
}

/// The partitioned interconnection matrix, stored as sixteen named blocks.
///
/// Each block carries a trainability flag: structural analysis treats a
/// trainable block as fully populated even while its current values are zero,
/// because training can make any entry nonzero.
#[derive(Debug, Clone)]
pub struct LfrMatrix {
    blocks: Vec<Array2<f64>>,
    trainable: [bool; 16],
}

impl LfrMatrix {
    /// All-zero matrix of the right shapes, nothing trainable.
    pub fn zeros(dims: &Dimensions) -> Self {
        let blocks = BlockId::ALL
            .iter()
            .map(|b| {
                let (r, c) = b.shape(dims);
                Array2::zeros((r, c))
            })
            .collect();
        Self {
            blocks,
            trainable: [false; 16],
        }
    }

    pub fn block(&self, id: BlockId) -> &Array2<f64> {
        &self.blocks[id.index()]
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut Array2<f64> {
        &mut self.blocks[id.index()]
    }

    /// Replaces a block after shape validation.
    pub fn set_block(&mut self, id: BlockId, value: Array2<f64>, dims: &Dimensions) -> Result<()> {
        let want = id.shape(dims);
        if value.dim() != want {
            return Err(Error::Dimension {
                what: format!("block {}", id.name()),
                expected: format!("{}x{}", want.0, want.1),
                got: format!("{}x{}", value.dim().0, value.dim().1),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("block {}", id.name())));
        }
        self.blocks[id.index()] = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: BlockId) -> bool {
        self.trainable[id.index()]
    }

    pub fn set_trainable(&mut self, id: BlockId, flag: bool) {
        self.trainable[id.index()] = flag;
    }

    /// Checks that no mode-forbidden block has a nonzero entry or is trainable.
    pub fn validate_mode(&self, mode: DzwMode) -> Result<()> {
        for &id in mode.forbidden() {
            let nonzero = self.block(id).iter().any(|v| *v != 0.0);
            if nonzero || self.is_trainable(id) {
                return Err(Error::ModeViolation {
                    block: id.name().into(),
                    mode: mode.name().into(),
                });
            }
        }
        Ok(())
    }
}

/// Builds a validated interconnection matrix from a named block map.
///
/// Missing blocks default to zero. Shapes are checked against `dims`, and
/// blocks forbidden by `mode` must be absent or zero.
pub fn lfr_assemble(
    dims: &Dimensions,
    blocks: &BTreeMap<String, Array2<f64>>,
    mode: DzwMode,
) -> Result<LfrMatrix> {
    let mut w = LfrMatrix::zeros(dims);
    for (name, value) in blocks {
        let id = BlockId::from_name(name).ok_or_else(|| Error::UnknownBlock(name.clone()))?;
        w.set_block(id, value.clone(), dims)?;
    }
    w.validate_mode(mode)?;
    Ok(w)
}

/// The four latent signal vectors at one time step.
#[derive(Debug, Clone)]
pub struct LatentSignals {
    pub z_b: Array1<f64>,
    pub z_a: Array1<f64>,
    pub w_b: Array1<f64>,
    pub w_a: Array1<f64>,
}

/// Baseline plus learned component coupled through an interconnection matrix.
#[derive(Clone)]
pub struct AugmentedModel {
    pub dims: Dimensions,
    pub w: LfrMatrix,
    pub mode: DzwMode,
    pub base: BaselineComponent,
    pub aug: AugComponent,
    pub encoder: EncoderNet,
    pub norm: Normalization,
    /// Per-head interface and initialization recipe, set by the factory.
    pub head_layout: Vec<HeadPlan>,
}

impl AugmentedModel {
    /// Validates block shapes and component interface sizes against `dims`.
    pub fn validate(&self) -> Result<()> {
        self.w.validate_mode(self.mode)?;
        for id in BlockId::ALL {
            let want = id.shape(&self.dims);
            if self.w.block(id).dim() != want {
                return Err(Error::Dimension {
                    what: format!("block {}", id.name()),
                    expected: format!("{}x{}", want.0, want.1),
                    got: format!("{:?}", self.w.block(id).dim()),
                });
            }
        }
        if self.aug.n_in() != self.dims.n_z_a || self.aug.n_out() != self.dims.n_w_a {
            return Err(Error::Dimension {
                what: "learned component".into(),
                expected: format!("{} -> {}", self.dims.n_z_a, self.dims.n_w_a),
                got: format!("{} -> {}", self.aug.n_in(), self.aug.n_out()),
            });
        }
        if self.base.map.n_x() != self.dims.n_x_b
            || self.base.map.n_u() != self.dims.n_u
            || self.base.map.n_y() != self.dims.n_y
        {
            return Err(Error::Dimension {
                what: "baseline component".into(),
                expected: format!(
                    "n_x={}, n_u={}, n_y={}",
                    self.dims.n_x_b, self.dims.n_u, self.dims.n_y
                ),
                got: format!(
                    "n_x={}, n_u={}, n_y={}",
                    self.base.map.n_x(),
                    self.base.map.n_u(),
                    self.base.map.n_y()
                ),
            });
        }
        if self.encoder.n_state() != self.dims.n_x() {
            return Err(Error::Dimension {
                what: "encoder output".into(),
                expected: format!("{}", self.dims.n_x()),
                got: format!("{}", self.encoder.n_state()),
            });
        }
        Ok(())
    }

    /// Resolves the latent signals for a given state and input.
    ///
    /// The resolution order depends on the restriction mode; with a cyclic
    /// (`Unrestricted`) coupling no substitution order exists and an error is
    /// returned.
    pub fn solve_latent(&self, x: &Array1<f64>, u: &Array1<f64>) -> Result<LatentSignals> {
        self.check_xu(x, u)?;
        let w = &self.w;
        match self.mode {
            DzwMode::Zero => {
                let z_b = w.block(BlockId::CZb).dot(x) + w.block(BlockId::DZuB).dot(u);
                let z_a = w.block(BlockId::CZa).dot(x) + w.block(BlockId::DZuA).dot(u);
                let w_b = self.base.eval(&z_b);
                let w_a = self.aug.eval(&z_a);
                Ok(LatentSignals { z_b, z_a, w_b, w_a })
            }
            DzwMode::AbOnly => {
                let z_b = w.block(BlockId::CZb).dot(x) + w.block(BlockId::DZuB).dot(u);
                let w_b = self.base.eval(&z_b);
                let z_a = w.block(BlockId::CZa).dot(x)
                    + w.block(BlockId::DZuA).dot(u)
                    + w.block(BlockId::DZwAb).dot(&w_b);
                let w_a = self.aug.eval(&z_a);
                Ok(LatentSignals { z_b, z_a, w_b, w_a })
            }
            DzwMode::BaOnly => {
                let z_a = w.block(BlockId::CZa).dot(x) + w.block(BlockId::DZuA).dot(u);
                let w_a = self.aug.eval(&z_a);
                let z_b = w.block(BlockId::CZb).dot(x)
                    + w.block(BlockId::DZuB).dot(u)
                    + w.block(BlockId::DZwBa).dot(&w_a);
                let w_b = self.base.eval(&z_b);
                Ok(LatentSignals { z_b, z_a, w_b, w_a })
            }
            DzwMode::Unrestricted => Err(Error::UnsupportedMode),
        }
    }

    /// One-step prediction: next state and current output.
    pub fn step(&self, x: &Array1<f64>, u: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let lat = self.solve_latent(x, u)?;
        let w = &self.w;
        let x_next = w.block(BlockId::A).dot(x)
            + w.block(BlockId::BU).dot(u)
            + w.block(BlockId::BWb).dot(&lat.w_b)
            + w.block(BlockId::BWa).dot(&lat.w_a);
        let y = w.block(BlockId::CY).dot(x)
            + w.block(BlockId::DYu).dot(u)
            + w.block(BlockId::DYwB).dot(&lat.w_b)
            + w.block(BlockId::DYwA).dot(&lat.w_a);
        if x_next.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("step output".into()));
        }
        Ok((x_next, y))
    }

    /// Iterates `step` over an input sequence.
    ///
    /// Returns `(y_seq, x_seq)` where `x_seq` has `L + 1` rows including the
    /// initial state. Aborts with a divergence error once any state magnitude
    /// exceeds `1e12`.
    pub fn simulate(
        &self,
        x0: &Array1<f64>,
        u_seq: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let steps = u_seq.nrows();
        if steps == 0 {
            return Err(Error::Dimension {
                what: "input sequence".into(),
                expected: "length >= 1".into(),
                got: "0".into(),
            });
        }
        let mut x_seq = Array2::zeros((steps + 1, self.dims.n_x()));
        let mut y_seq = Array2::zeros((steps, self.dims.n_y));
        let mut x = x0.clone();
        x_seq.row_mut(0).assign(&x);
        for k in 0..steps {
            let u = u_seq.row(k).to_owned();
            let (x_next, y) = self.step(&x, &u)?;
            let mag = x_next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if mag > 1e12 {
                return Err(Error::Divergence {
                    step: k,
                    magnitude: mag,
                });
            }
            y_seq.row_mut(k).assign(&y);
            x = x_next;
            x_seq.row_mut(k + 1).assign(&x);
        }
        Ok((y_seq, x_seq))
    }

    /// Residual of the latent fixed-point equations at a resolved solution,
    /// in max norm. Zero (up to roundoff) when the signals are consistent.
    pub fn latent_residual(&self, x: &Array1<f64>, u: &Array1<f64>, lat: &LatentSignals) -> f64 {
        let w = &self.w;
        let rhs_b = w.block(BlockId::CZb).dot(x)
            + w.block(BlockId::DZuB).dot(u)
            + w.block(BlockId::DZwBb).dot(&lat.w_b)
            + w.block(BlockId::DZwBa).dot(&lat.w_a);
        let rhs_a = w.block(BlockId::CZa).dot(x)
            + w.block(BlockId::DZuA).dot(u)
            + w.block(BlockId::DZwAb).dot(&lat.w_b)
            + w.block(BlockId::DZwAa).dot(&lat.w_a);
        let mut res = 0.0f64;
        for (a, b) in lat.z_b.iter().zip(rhs_b.iter()) {
            res = res.max((a - b).abs());
        }
        for (a, b) in lat.z_a.iter().zip(rhs_a.iter()) {
            res = res.max((a - b).abs());
        }
        let wb = self.base.eval(&lat.z_b);
        let wa = self.aug.eval(&lat.z_a);
        for (a, b) in lat.w_b.iter().zip(wb.iter()) {
            res = res.max((a - b).abs());
        }
        for (a, b) in lat.w_a.iter().zip(wa.iter()) {
            res = res.max((a - b).abs());
        }
        res
    }

    fn check_xu(&self, x: &Array1<f64>, u: &Array1<f64>) -> Result<()> {
        if x.len() != self.dims.n_x() {
            return Err(Error::Dimension {
                what: "state vector".into(),
                expected: format!("{}", self.dims.n_x()),
                got: format!("{}", x.len()),
            });
        }
        if u.len() != self.dims.n_u {
            return Err(Error::Dimension {
                what: "input vector".into(),
                expected: format!("{}", self.dims.n_u),
                got: format!("{}", u.len()),
            });
        }
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state or input".into()));
        }
        Ok(())
    }
}

/// Shared handle to a baseline map implementation.
pub type BaselineRef = Arc<dyn Baseline>;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dims_example() -> Dimensions {
        Dimensions::new(2, 0, 1, 1, 3, 2).unwrap()
    }

    #[test]
    fn assemble_all_zero_is_valid() {
        let dims = dims_example();
        let w = lfr_assemble(&dims, &BTreeMap::new(), DzwMode::Zero).unwrap();
        for id in BlockId::ALL {
            assert!(w.block(id).iter().all(|v| *v == 0.0));
            assert_eq!(w.block(id).dim(), id.shape(&dims));
        }
    }

    #[test]
    fn assemble_rejects_bad_shape() {
        let dims = dims_example();
        // B_w_b must be 2x3 here (n_w_b = n_x_b + n_y = 3).
        let mut blocks = BTreeMap::new();
        blocks.insert("B_w_b".to_string(), Array2::<f64>::zeros((2, 2)));
        let err = lfr_assemble(&dims, &blocks, DzwMode::Zero).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("B_w_b"), "error should name the block: {msg}");
    }

    #[test]
    fn assemble_rejects_forbidden_block() {
        let dims = Dimensions::new(1, 0, 1, 1, 1, 1).unwrap();
        let mut blocks = BTreeMap::new();
        blocks.insert("D_zw_ba".to_string(), array![[1.0], [0.0]]);
        let err = lfr_assemble(&dims, &blocks, DzwMode::AbOnly).unwrap_err();
        assert!(matches!(err, Error::ModeViolation { .. }), "{err}");
    }

    #[test]
    fn assemble_rejects_unknown_name() {
        let dims = dims_example();
        let mut blocks = BTreeMap::new();
        blocks.insert("B_w_c".to_string(), Array2::<f64>::zeros((2, 3)));
        assert!(matches!(
            lfr_assemble(&dims, &blocks, DzwMode::Zero),
            Err(Error::UnknownBlock(_))
        ));
    }

    #[test]
    fn dimensions_reject_empty_io() {
        assert!(Dimensions::new(0, 0, 1, 1, 0, 0).is_err());
        assert!(Dimensions::new(1, 0, 0, 1, 0, 0).is_err());
        assert!(Dimensions::new(1, 0, 1, 0, 0, 0).is_err());
    }
}
