//! Factories for the catalog of augmentation structures.
//!
//! Each factory assembles the interconnection matrix realizing one named
//! coupling of baseline and learned components (parallel, series-input or
//! series-output, at the state or output level, static or dynamic), following
//! the constructive selector layout:
//!
//! * `z_b = (x_b, u)` through identity selectors (or through the shaping head
//!   for series-input structures),
//! * `z_a` stacks the head inputs, with `D_zw_ab` routing baseline outputs
//!   into series-output heads and `D_zw_ba` routing shaping heads into `z_b`,
//! * state and output rows pick baseline and head outputs by identity blocks.
//!
//! Head layout (fixed, relied upon by initialization and checkpoints):
//!
//! * parallel, state level: one head over `(x, u)`, rows `[0, n_x_b)` additive
//!   state correction, rows `[n_x_b, n_x)` augmented-state dynamics;
//! * series output, state level: one head over `(x, u, f_base)`, same row
//!   split; the first rows pass `f_base` through at init;
//! * series input: one head over `(x, u)`, rows `[0, n_z_b)` shape the
//!   baseline input (identity at init), remaining rows augmented dynamics.
//!   With the single shared `z_b` the shaped input necessarily feeds both the
//!   baseline state update and output maps, so the state- and output-level
//!   series-input structures coincide in this representation and both labels
//!   name the same interconnection;
//! * output-level structures mirror the state-level ones at the output rows;
//! * composed structures append heads: an input-series head over `u` alone,
//!   an output-series head over `(x_b, x_a_own, u, h_base)`.

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{self, BlockAdjacency};
use crate::model::{
    AugComponent, AugmentedModel, Baseline, BaselineComponent, BlockId, Dimensions, DzwMode,
    EncoderNet, HeadPlan, LfrMatrix, ResNetComponent, RowInit,
};
use crate::training::Normalization;

/// Interconnection kind within a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    Parallel,
    SeriesOutput,
    SeriesInput,
}

/// Whether the augmentation acts on the state transition or the output map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    State,
    Output,
}

/// Learned-component width specification.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HiddenSpec {
    pub layers: usize,
    pub width: usize,
}

impl Default for HiddenSpec {
    fn default() -> Self {
        Self { layers: 2, width: 8 }
    }
}

impl HiddenSpec {
    pub fn widths(&self, n_in: usize, n_out: usize) -> Vec<usize> {
        let mut w = vec![n_in];
        w.extend(std::iter::repeat(self.width).take(self.layers));
        w.push(n_out);
        w
    }
}

/// Encoder lags and hidden widths.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderSpec {
    pub n_a: usize,
    pub n_b: usize,
    pub hidden: Vec<usize>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            n_a: 7,
            n_b: 7,
            hidden: vec![16, 16],
        }
    }
}

/// Complete construction plan for one structure.
#[derive(Debug, Clone)]
pub struct StructurePlan {
    pub dims: Dimensions,
    pub mode: DzwMode,
    pub blocks: Vec<(BlockId, Array2<f64>)>,
    pub heads: Vec<HeadPlan>,
    pub labels: Vec<String>,
}

fn eye(n: usize) -> Array2<f64> {
    Array2::eye(n)
}

/// Standard baseline selectors: `z_b = (x_b, u)`.
fn zb_selectors(n_x_b: usize, n_x: usize, n_u: usize) -> (Array2<f64>, Array2<f64>) {
    let n_z_b = n_x_b + n_u;
    let mut c_z_b = Array2::zeros((n_z_b, n_x));
    c_z_b.slice_mut(s![..n_x_b, ..n_x_b]).assign(&eye(n_x_b));
    let mut d_zu_b = Array2::zeros((n_z_b, n_u));
    d_zu_b.slice_mut(s![n_x_b.., ..]).assign(&eye(n_u));
    (c_z_b, d_zu_b)
}

/// Plans the interconnection for one catalog structure.
pub fn plan_structure(
    kind: StructureKind,
    level: Level,
    n_x_b: usize,
    n_x_a: usize,
    n_u: usize,
    n_y: usize,
) -> Result<StructurePlan> {
    let n_x = n_x_b + n_x_a;
    let n_z_b = n_x_b + n_u;
    let n_w_b = n_x_b + n_y;
    let dynamic = n_x_a > 0;

    // z_a reads (x, u) for every structure; series-output heads additionally
    // read the relevant baseline rows appended at the tail of z_a.
    let base_za = |extra: usize| -> (Array2<f64>, Array2<f64>) {
        let n_z_a = n_x + n_u + extra;
        let mut c_z_a = Array2::zeros((n_z_a, n_x));
        c_z_a.slice_mut(s![..n_x, ..]).assign(&eye(n_x));
        let mut d_zu_a = Array2::zeros((n_z_a, n_u));
        d_zu_a.slice_mut(s![n_x..n_x + n_u, ..]).assign(&eye(n_u));
        (c_z_a, d_zu_a)
    };

    let (c_z_b, d_zu_b) = zb_selectors(n_x_b, n_x, n_u);
    let mut blocks: Vec<(BlockId, Array2<f64>)> = Vec::new();
    let mode;
    let n_z_a;
    let n_w_a;
    let mut heads = Vec::new();
    let labels: Vec<&str>;

    match (kind, level) {
        (StructureKind::Parallel, Level::State) => {
            n_z_a = n_x + n_u;
            n_w_a = n_x;
            mode = DzwMode::Zero;
            let (c_z_a, d_zu_a) = base_za(0);
            // x+ = [f_base; 0] + w_a, y = h_base
            let mut b_w_b = Array2::zeros((n_x, n_w_b));
            b_w_b.slice_mut(s![..n_x_b, ..n_x_b]).assign(&eye(n_x_b));
            let mut d_yw_b = Array2::zeros((n_y, n_w_b));
            d_yw_b.slice_mut(s![.., n_x_b..]).assign(&eye(n_y));
            blocks.push((BlockId::CZb, c_z_b));
            blocks.push((BlockId::DZuB, d_zu_b));
            blocks.push((BlockId::CZa, c_z_a));
            blocks.push((BlockId::DZuA, d_zu_a));
            blocks.push((BlockId::BWb, b_w_b));
            blocks.push((BlockId::BWa, eye(n_x)));
            blocks.push((BlockId::DYwB, d_yw_b));
            let mut row_init = vec![RowInit::Zero; n_x_b];
            row_init.extend(std::iter::repeat(RowInit::Dynamics).take(n_x_a));
            heads.push(HeadPlan {
                n_in: n_z_a,
                n_out: n_w_a,
                row_init,
                own_state_cols: dynamic.then_some(n_x_b..n_x),
            });
            labels = if dynamic { vec!["S-DP"] } else { vec!["S-SP"] };
        }
        (StructureKind::SeriesOutput, Level::State) => {
            n_z_a = n_x + n_u + n_x_b;
            n_w_a = n_x;
            mode = DzwMode::AbOnly;
            let (c_z_a, d_zu_a) = base_za(n_x_b);
            // z_a tail receives f_base; the whole state row comes from the head
            let mut d_zw_ab = Array2::zeros((n_z_a, n_w_b));
            d_zw_ab
                .slice_mut(s![n_x + n_u.., ..n_x_b])
                .assign(&eye(n_x_b));
            let mut d_yw_b = Array2::zeros((n_y, n_w_b));
            d_yw_b.slice_mut(s![.., n_x_b..]).assign(&eye(n_y));
            blocks.push((BlockId::CZb, c_z_b));
            blocks.push((BlockId::DZuB, d_zu_b));
            blocks.push((BlockId::CZa, c_z_a));
            blocks.push((BlockId::DZuA, d_zu_a));
            blocks.push((BlockId::DZwAb, d_zw_ab));
            blocks.push((BlockId::BWa, eye(n_x)));
            blocks.push((BlockId::DYwB, d_yw_b));
            let mut row_init: Vec<RowInit> =
                (0..n_x_b).map(|r| RowInit::Passthrough(n_x + n_u + r)).collect();
            row_init.extend(std::iter::repeat(RowInit::Dynamics).take(n_x_a));
            heads.push(HeadPlan {
                n_in: n_z_a,
                n_out: n_w_a,
                row_init,
                own_state_cols: dynamic.then_some(n_x_b..n_x),
            });
            labels = if dynamic { vec!["S-DSO"] } else { vec!["S-SSO"] };
        }
        (StructureKind::SeriesInput, _) => {
            // one shared z_b forces the shaped input into both baseline maps;
            // the state- and output-level series-input structures coincide
            n_z_a = n_x + n_u;
            n_w_a = n_z_b + n_x_a;
            mode = DzwMode::BaOnly;
            let (c_z_a, d_zu_a) = base_za(0);
            let mut d_zw_ba = Array2::zeros((n_z_b, n_w_a));
            d_zw_ba.slice_mut(s![.., ..n_z_b]).assign(&eye(n_z_b));
            let mut b_w_b = Array2::zeros((n_x, n_w_b));
            b_w_b.slice_mut(s![..n_x_b, ..n_x_b]).assign(&eye(n_x_b));
            let mut b_w_a = Array2::zeros((n_x, n_w_a));
            b_w_a
                .slice_mut(s![n_x_b.., n_z_b..])
                .assign(&eye(n_x_a));
            let mut d_yw_b = Array2::zeros((n_y, n_w_b));
            d_yw_b.slice_mut(s![.., n_x_b..]).assign(&eye(n_y));
            blocks.push((BlockId::CZa, c_z_a));
            blocks.push((BlockId::DZuA, d_zu_a));
            blocks.push((BlockId::DZwBa, d_zw_ba));
            blocks.push((BlockId::BWb, b_w_b));
            blocks.push((BlockId::BWa, b_w_a));
            blocks.push((BlockId::DYwB, d_yw_b));
            let mut row_init: Vec<RowInit> = (0..n_x_b).map(RowInit::Passthrough).collect();
            row_init.extend((0..n_u).map(|j| RowInit::Passthrough(n_x + j)));
            row_init.extend(std::iter::repeat(RowInit::Dynamics).take(n_x_a));
            heads.push(HeadPlan {
                n_in: n_z_a,
                n_out: n_w_a,
                row_init,
                own_state_cols: dynamic.then_some(n_x_b..n_x),
            });
            labels = if dynamic {
                vec!["S-DSI", "O-DSI"]
            } else {
                vec!["S-SSI", "O-SSI"]
            };
        }
        (StructureKind::Parallel, Level::Output) => {
            n_z_a = n_x + n_u;
            n_w_a = n_y + n_x_a;
            mode = DzwMode::Zero;
            let (c_z_a, d_zu_a) = base_za(0);
            let mut b_w_b = Array2::zeros((n_x, n_w_b));
            b_w_b.slice_mut(s![..n_x_b, ..n_x_b]).assign(&eye(n_x_b));
            let mut b_w_a = Array2::zeros((n_x, n_w_a));
            b_w_a.slice_mut(s![n_x_b.., n_y..]).assign(&eye(n_x_a));
            let mut d_yw_b = Array2::zeros((n_y, n_w_b));
            d_yw_b.slice_mut(s![.., n_x_b..]).assign(&eye(n_y));
            let mut d_yw_a = Array2::zeros((n_y, n_w_a));
            d_yw_a.slice_mut(s![.., ..n_y]).assign(&eye(n_y));
            blocks.push((BlockId::CZb, c_z_b));
            blocks.push((BlockId::DZuB, d_zu_b));
            blocks.push((BlockId::CZa, c_z_a));
            blocks.push((BlockId::DZuA, d_zu_a));
            blocks.push((BlockId::BWb, b_w_b));
            blocks.push((BlockId::BWa, b_w_a));
            blocks.push((BlockId::DYwB, d_yw_b));
            blocks.push((BlockId::DYwA, d_yw_a));
            let mut row_init = vec![RowInit::Zero; n_y];
            row_init.extend(std::iter::repeat(RowInit::Dynamics).take(n_x_a));
            heads.push(HeadPlan {
                n_in: n_z_a,
                n_out: n_w_a,
                row_init,
                own_state_cols: dynamic.then_some(n_x_b..n_x),
            });
            labels = if dynamic { vec!["O-DP"] } else { vec!["O-SP"] };
        }
        (StructureKind::SeriesOutput, Level::Output) => {
            n_z_a = n_x + n_u + n_y;
            n_w_a = n_y + n_x_a;
            mode = DzwMode::AbOnly;
            let (c_z_a, d_zu_a) = base_za(n_y);
            let mut d_zw_ab = Array2::zeros((n_z_a, n_w_b));
            d_zw_ab
                .slice_mut(s![n_x + n_u.., n_x_b..])
                .assign(&eye(n_y));
            let mut b_w_b = Array2::zeros((n_x, n_w_b));
            b_w_b.slice_mut(s![..n_x_b, ..n_x_b]).assign(&eye(n_x_b));
            let mut b_w_a = Array2::zeros((n_x, n_w_a));
            b_w_a.slice_mut(s![n_x_b.., n_y..]).assign(&eye(n_x_a));
            let mut d_yw_a = Array2::zeros((n_y, n_w_a));
            d_yw_a.slice_mut(s![.., ..n_y]).assign(&eye(n_y));
            blocks.push((BlockId::CZb, c_z_b));
            blocks.push((BlockId::DZuB, d_zu_b));
            blocks.push((BlockId::CZa, c_z_a));
            blocks.push((BlockId::DZuA, d_zu_a));
            blocks.push((BlockId::DZwAb, d_zw_ab));
            blocks.push((BlockId::BWb, b_w_b));
            blocks.push((BlockId::BWa, b_w_a));
            blocks.push((BlockId::DYwA, d_yw_a));
            let mut row_init: Vec<RowInit> =
                (0..n_y).map(|r| RowInit::Passthrough(n_x + n_u + r)).collect();
            row_init.extend(std::iter::repeat(RowInit::Dynamics).take(n_x_a));
            heads.push(HeadPlan {
                n_in: n_z_a,
                n_out: n_w_a,
                row_init,
                own_state_cols: dynamic.then_some(n_x_b..n_x),
            });
            labels = if dynamic { vec!["O-DSO"] } else { vec!["O-SSO"] };
        }
    }

    let dims = Dimensions::new(n_x_b, n_x_a, n_u, n_y, n_z_a, n_w_a)?;
    Ok(StructurePlan {
        dims,
        mode,
        blocks,
        heads,
        labels: labels.into_iter().map(String::from).collect(),
    })
}

fn assemble_plan(plan: &StructurePlan) -> Result<LfrMatrix> {
    let mut w = LfrMatrix::zeros(&plan.dims);
    for (id, value) in &plan.blocks {
        w.set_block(*id, value.clone(), &plan.dims)?;
    }
    w.validate_mode(plan.mode)?;
    Ok(w)
}

fn heads_from_plan(plan: &StructurePlan, hidden: &HiddenSpec, rng: &mut ChaCha8Rng) -> AugComponent {
    let heads = plan
        .heads
        .iter()
        .map(|h| ResNetComponent::xavier(&hidden.widths(h.n_in, h.n_out), rng))
        .collect();
    AugComponent { heads }
}

fn model_from_plan(
    plan: &StructurePlan,
    base: BaselineComponent,
    hidden: &HiddenSpec,
    enc: &EncoderSpec,
    seed: u64,
) -> Result<AugmentedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aug = heads_from_plan(plan, hidden, &mut rng);
    let encoder = EncoderNet::new(
        enc.n_a,
        enc.n_b,
        plan.dims.n_y,
        plan.dims.n_u,
        plan.dims.n_x_b,
        plan.dims.n_x_a,
        &enc.hidden,
        &mut rng,
    );
    let model = AugmentedModel {
        dims: plan.dims,
        w: assemble_plan(plan)?,
        mode: plan.mode,
        base,
        aug,
        encoder,
        norm: Normalization::identity(plan.dims.n_x_b, plan.dims.n_u, plan.dims.n_y),
        head_layout: plan.heads.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Builds a fully parameterised (flexible) model: every block trainable
/// except those forbidden by the restriction mode, one learned head over the
/// requested latent sizes, all values zero until initialization.
pub fn make_flexible(
    base: BaselineComponent,
    n_x_a: usize,
    n_z_a: usize,
    n_w_a: usize,
    mode: DzwMode,
    hidden: &HiddenSpec,
    enc: &EncoderSpec,
    seed: u64,
) -> Result<AugmentedModel> {
    let dims = Dimensions::new(base.map.n_x(), n_x_a, base.map.n_u(), base.map.n_y(), n_z_a, n_w_a)?;
    let mut w = LfrMatrix::zeros(&dims);
    for id in BlockId::ALL {
        if !mode.forbidden().contains(&id) {
            w.set_trainable(id, true);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aug = AugComponent::single(ResNetComponent::xavier(&hidden.widths(n_z_a, n_w_a), &mut rng));
    let encoder = EncoderNet::new(
        enc.n_a,
        enc.n_b,
        dims.n_y,
        dims.n_u,
        dims.n_x_b,
        dims.n_x_a,
        &enc.hidden,
        &mut rng,
    );
    let head_layout = vec![HeadPlan {
        n_in: n_z_a,
        n_out: n_w_a,
        row_init: vec![RowInit::Zero; n_w_a],
        own_state_cols: None,
    }];
    let model = AugmentedModel {
        dims,
        w,
        mode,
        base,
        aug,
        encoder,
        norm: Normalization::identity(dims.n_x_b, dims.n_u, dims.n_y),
        head_layout,
    };
    model.validate()?;
    Ok(model)
}

/// Builds a state-level augmentation structure around the baseline.
pub fn make_state_structure(
    kind: StructureKind,
    dynamic: bool,
    base: BaselineComponent,
    n_x_a: usize,
    hidden: &HiddenSpec,
    enc: &EncoderSpec,
    seed: u64,
) -> Result<AugmentedModel> {
    if !dynamic && n_x_a != 0 {
        return Err(Error::Construction(format!(
            "static structure cannot carry {n_x_a} augmented states"
        )));
    }
    let plan = plan_structure(
        kind,
        Level::State,
        base.map.n_x(),
        n_x_a,
        base.map.n_u(),
        base.map.n_y(),
    )?;
    model_from_plan(&plan, base, hidden, enc, seed)
}

/// Builds an output-level augmentation structure around the baseline.
pub fn make_output_structure(
    kind: StructureKind,
    dynamic: bool,
    base: BaselineComponent,
    n_x_a: usize,
    hidden: &HiddenSpec,
    enc: &EncoderSpec,
    seed: u64,
) -> Result<AugmentedModel> {
    if !dynamic && n_x_a != 0 {
        return Err(Error::Construction(format!(
            "static structure cannot carry {n_x_a} augmented states"
        )));
    }
    let plan = plan_structure(
        kind,
        Level::Output,
        base.map.n_x(),
        n_x_a,
        base.map.n_u(),
        base.map.n_y(),
    )?;
    model_from_plan(&plan, base, hidden, enc, seed)
}

/// Composition applied on top of a parallel state-level structure.
#[derive(Debug, Clone)]
pub enum Extension {
    /// Input shaping head over `u` alone, feeding the `u` rows of `z_b`.
    InputSeries { hidden: HiddenSpec },
    /// Dynamic series augmentation of the output map with its own states.
    OutputSeriesDynamic { n_states: usize, hidden: HiddenSpec },
}

/// Merges an extension into a parallel state-level model, enlarging the
/// learned component with a new head and rewiring the affected rows.
///
/// Fails before returning if the combined coupling would close an algebraic
/// loop or the merged model does not pass the well-posedness check.
pub fn compose_structures(
    model: &AugmentedModel,
    ext: &Extension,
    seed: u64,
) -> Result<AugmentedModel> {
    match ext {
        Extension::InputSeries { hidden } => compose_input_series(model, hidden, seed),
        Extension::OutputSeriesDynamic { n_states, hidden } => {
            compose_output_series(model, *n_states, hidden, seed)
        }
    }
}

fn compose_input_series(
    model: &AugmentedModel,
    hidden: &HiddenSpec,
    seed: u64,
) -> Result<AugmentedModel> {
    if model.mode != DzwMode::Zero {
        return Err(Error::CompositionCycle(
            "input shaping composes onto parallel structures (the u rows of z_b must be free and D_zw_ab zero)".into(),
        ));
    }
    let old = &model.dims;
    let n_u = old.n_u;
    let n_z_b = old.n_z_b();
    let dims = Dimensions::new(
        old.n_x_b,
        old.n_x_a,
        n_u,
        old.n_y,
        old.n_z_a + n_u,
        old.n_w_a + n_u,
    )?;

    let mut w = LfrMatrix::zeros(&dims);
    // carry over blocks untouched by the z_a / w_a growth
    for id in [BlockId::A, BlockId::BU, BlockId::BWb, BlockId::CY, BlockId::DYu, BlockId::DYwB, BlockId::CZb, BlockId::DZwBb] {
        w.set_block(id, model.w.block(id).clone(), &dims)?;
    }
    // z_b input rows now come from the shaping head
    w.set_block(BlockId::DZuB, Array2::zeros((n_z_b, n_u)), &dims)?;
    let mut d_zw_ba = Array2::zeros((n_z_b, dims.n_w_a));
    d_zw_ba
        .slice_mut(s![old.n_x_b.., old.n_w_a..])
        .assign(&Array2::eye(n_u));
    // preserve any existing shaping route
    d_zw_ba
        .slice_mut(s![.., ..old.n_w_a])
        .assign(model.w.block(BlockId::DZwBa));
    w.set_block(BlockId::DZwBa, d_zw_ba, &dims)?;
    // grow z_a rows: new head reads u only
    let mut c_z_a = Array2::zeros((dims.n_z_a, dims.n_x()));
    c_z_a
        .slice_mut(s![..old.n_z_a, ..])
        .assign(model.w.block(BlockId::CZa));
    w.set_block(BlockId::CZa, c_z_a, &dims)?;
    let mut d_zu_a = Array2::zeros((dims.n_z_a, n_u));
    d_zu_a
        .slice_mut(s![..old.n_z_a, ..])
        .assign(model.w.block(BlockId::DZuA));
    d_zu_a.slice_mut(s![old.n_z_a.., ..]).assign(&Array2::eye(n_u));
    w.set_block(BlockId::DZuA, d_zu_a, &dims)?;
    // grow w_a columns of the state and output rows
    let mut b_w_a = Array2::zeros((dims.n_x(), dims.n_w_a));
    b_w_a
        .slice_mut(s![.., ..old.n_w_a])
        .assign(model.w.block(BlockId::BWa));
    w.set_block(BlockId::BWa, b_w_a, &dims)?;
    let mut d_yw_a = Array2::zeros((dims.n_y, dims.n_w_a));
    d_yw_a
        .slice_mut(s![.., ..old.n_w_a])
        .assign(model.w.block(BlockId::DYwA));
    w.set_block(BlockId::DYwA, d_yw_a, &dims)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aug = model.aug.clone();
    aug.heads
        .push(ResNetComponent::xavier(&hidden.widths(n_u, n_u), &mut rng));
    let mut head_layout = model.head_layout.clone();
    head_layout.push(HeadPlan {
        n_in: n_u,
        n_out: n_u,
        row_init: (0..n_u).map(RowInit::Passthrough).collect(),
        own_state_cols: None,
    });

    let composed = AugmentedModel {
        dims,
        w,
        mode: DzwMode::BaOnly,
        base: model.base.clone(),
        aug,
        encoder: model.encoder.clone(),
        norm: model.norm.clone(),
        head_layout,
    };
    composed.validate()?;
    let report = graph::check_well_posed(&composed, 0);
    if !report.verdict {
        return Err(Error::CompositionCycle(
            "composed interconnection is not well-posed".into(),
        ));
    }
    Ok(composed)
}

fn compose_output_series(
    model: &AugmentedModel,
    n_states: usize,
    hidden: &HiddenSpec,
    seed: u64,
) -> Result<AugmentedModel> {
    if n_states == 0 {
        return Err(Error::Construction(
            "output series extension needs at least one state".into(),
        ));
    }
    if model.mode != DzwMode::Zero && model.mode != DzwMode::AbOnly {
        return Err(Error::CompositionCycle(
            "output series augmentation needs D_zw_ba to stay zero".into(),
        ));
    }
    let old = &model.dims;
    let (n_x_b, n_u, n_y) = (old.n_x_b, old.n_u, old.n_y);
    let n_x_old = old.n_x();
    let head_in = n_x_b + n_states + n_u + n_y;
    let head_out = n_y + n_states;
    let dims = Dimensions::new(
        n_x_b,
        old.n_x_a + n_states,
        n_u,
        n_y,
        old.n_z_a + head_in,
        old.n_w_a + head_out,
    )?;
    let n_x = dims.n_x();

    let grow_state_cols = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((m.nrows(), n_x));
        out.slice_mut(s![.., ..n_x_old]).assign(m);
        out
    };

    let mut w = LfrMatrix::zeros(&dims);
    // state rows: old blocks with appended zero rows/cols for the new states
    let mut a = Array2::zeros((n_x, n_x));
    a.slice_mut(s![..n_x_old, ..n_x_old])
        .assign(model.w.block(BlockId::A));
    w.set_block(BlockId::A, a, &dims)?;
    let mut b_u = Array2::zeros((n_x, n_u));
    b_u.slice_mut(s![..n_x_old, ..])
        .assign(model.w.block(BlockId::BU));
    w.set_block(BlockId::BU, b_u, &dims)?;
    let mut b_w_b = Array2::zeros((n_x, dims.n_w_b()));
    b_w_b
        .slice_mut(s![..n_x_old, ..])
        .assign(model.w.block(BlockId::BWb));
    w.set_block(BlockId::BWb, b_w_b, &dims)?;
    let mut b_w_a = Array2::zeros((n_x, dims.n_w_a));
    b_w_a
        .slice_mut(s![..n_x_old, ..old.n_w_a])
        .assign(model.w.block(BlockId::BWa));
    // new states update from the new head's dynamics rows
    for i in 0..n_states {
        b_w_a[[n_x_old + i, old.n_w_a + n_y + i]] = 1.0;
    }
    w.set_block(BlockId::BWa, b_w_a, &dims)?;
    // output rows: y comes from the new head alone
    w.set_block(BlockId::CY, grow_state_cols(model.w.block(BlockId::CY)), &dims)?;
    w.set_block(BlockId::DYu, model.w.block(BlockId::DYu).clone(), &dims)?;
    w.set_block(BlockId::DYwB, Array2::zeros((n_y, dims.n_w_b())), &dims)?;
    let mut d_yw_a = Array2::zeros((n_y, dims.n_w_a));
    d_yw_a
        .slice_mut(s![.., ..old.n_w_a])
        .assign(model.w.block(BlockId::DYwA));
    d_yw_a
        .slice_mut(s![.., old.n_w_a..old.n_w_a + n_y])
        .assign(&Array2::eye(n_y));
    w.set_block(BlockId::DYwA, d_yw_a, &dims)?;
    // z_b unchanged apart from the new state columns
    w.set_block(BlockId::CZb, grow_state_cols(model.w.block(BlockId::CZb)), &dims)?;
    w.set_block(BlockId::DZuB, model.w.block(BlockId::DZuB).clone(), &dims)?;
    // z_a rows: old head rows plus the new head reading (x_b, x_a2, u, h_base)
    let mut c_z_a = Array2::zeros((dims.n_z_a, n_x));
    c_z_a
        .slice_mut(s![..old.n_z_a, ..])
        .assign(&grow_state_cols(model.w.block(BlockId::CZa)));
    c_z_a
        .slice_mut(s![old.n_z_a..old.n_z_a + n_x_b, ..n_x_b])
        .assign(&Array2::eye(n_x_b));
    c_z_a
        .slice_mut(s![
            old.n_z_a + n_x_b..old.n_z_a + n_x_b + n_states,
            n_x_old..
        ])
        .assign(&Array2::eye(n_states));
    w.set_block(BlockId::CZa, c_z_a, &dims)?;
    let mut d_zu_a = Array2::zeros((dims.n_z_a, n_u));
    d_zu_a
        .slice_mut(s![..old.n_z_a, ..])
        .assign(model.w.block(BlockId::DZuA));
    d_zu_a
        .slice_mut(s![
            old.n_z_a + n_x_b + n_states..old.n_z_a + n_x_b + n_states + n_u,
            ..
        ])
        .assign(&Array2::eye(n_u));
    w.set_block(BlockId::DZuA, d_zu_a, &dims)?;
    let mut d_zw_ab = Array2::zeros((dims.n_z_a, dims.n_w_b()));
    d_zw_ab
        .slice_mut(s![..old.n_z_a, ..])
        .assign(model.w.block(BlockId::DZwAb));
    d_zw_ab
        .slice_mut(s![old.n_z_a + n_x_b + n_states + n_u.., n_x_b..])
        .assign(&Array2::eye(n_y));
    w.set_block(BlockId::DZwAb, d_zw_ab, &dims)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aug = model.aug.clone();
    aug.heads
        .push(ResNetComponent::xavier(&hidden.widths(head_in, head_out), &mut rng));
    let mut head_layout = model.head_layout.clone();
    head_layout.push(HeadPlan {
        n_in: head_in,
        n_out: head_out,
        row_init: (0..n_y)
            .map(|r| RowInit::Passthrough(n_x_b + n_states + n_u + r))
            .chain(std::iter::repeat(RowInit::Dynamics).take(n_states))
            .collect(),
        own_state_cols: Some(n_x_b..n_x_b + n_states),
    });

    // the encoder must now estimate the extra states
    let enc_hidden: Vec<usize> = model
        .encoder
        .psi_b
        .widths()
        .iter()
        .skip(1)
        .take(model.encoder.psi_b.widths().len().saturating_sub(2))
        .copied()
        .collect();
    let mut encoder = model.encoder.clone();
    let n_in = encoder.input_len();
    let mut widths_a = vec![n_in];
    widths_a.extend_from_slice(&enc_hidden);
    widths_a.push(dims.n_x_a);
    encoder.psi_a = Some(ResNetComponent::xavier(&widths_a, &mut rng));

    let composed = AugmentedModel {
        dims,
        w,
        mode: DzwMode::AbOnly,
        base: model.base.clone(),
        aug,
        encoder,
        norm: model.norm.clone(),
        head_layout,
    };
    composed.validate()?;
    let report = graph::check_well_posed(&composed, 0);
    if !report.verdict {
        return Err(Error::CompositionCycle(
            "composed interconnection is not well-posed".into(),
        ));
    }
    Ok(composed)
}

/// Canonical structure labels in catalog order.
pub const CATALOG_LABELS: [&str; 14] = [
    "S-SP", "S-SSO", "S-SSI", "S-DP", "S-DSO", "S-DSI", "O-SP", "O-SSO", "O-SSI", "O-DP",
    "O-DSO", "O-DSI", "S-SP-I", "S-DP-I",
];

/// Parses a catalog label into `(kind, level, dynamic)`. Accepts `O-SSP` as
/// an alias of `O-SSO`.
pub fn parse_label(label: &str) -> Option<(StructureKind, Level, bool)> {
    let l = if label == "O-SSP" { "O-SSO" } else { label };
    let (level, rest) = match l.split_once('-') {
        Some(("S", rest)) => (Level::State, rest),
        Some(("O", rest)) => (Level::Output, rest),
        _ => return None,
    };
    let (kind, dynamic) = match rest {
        "SP" => (StructureKind::Parallel, false),
        "DP" => (StructureKind::Parallel, true),
        "SSO" => (StructureKind::SeriesOutput, false),
        "DSO" => (StructureKind::SeriesOutput, true),
        "SSI" => (StructureKind::SeriesInput, false),
        "DSI" => (StructureKind::SeriesInput, true),
        _ => return None,
    };
    Some((kind, level, dynamic))
}

/// Stub baseline carrying only the interface sizes and dependence pattern,
/// used to generate canonical adjacency patterns through the factories.
struct PatternStub {
    n_x: usize,
    n_u: usize,
    n_y: usize,
    pattern: Array2<bool>,
}

impl Baseline for PatternStub {
    fn id(&self) -> &str {
        "pattern-stub"
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
        0
    }
    fn eval(&self, _theta: &[f64], _z: &Array1<f64>) -> Array1<f64> {
        Array1::zeros(self.n_x + self.n_y)
    }
    fn jac_z(&self, _theta: &[f64], _z: &Array1<f64>) -> Array2<f64> {
        Array2::zeros((self.n_x + self.n_y, self.n_x + self.n_u))
    }
    fn jac_theta(&self, _theta: &[f64], _z: &Array1<f64>) -> Array2<f64> {
        Array2::zeros((self.n_x + self.n_y, 0))
    }
    fn pattern(&self) -> Array2<bool> {
        self.pattern.clone()
    }
}

/// A canonical catalog entry: emitted labels plus the adjacency pattern of
/// the corresponding factory output.
pub struct Candidate {
    pub labels: Vec<String>,
    pub adjacency: BlockAdjacency,
}

fn stub_component(n_x_b: usize, n_u: usize, n_y: usize, p_b: &Array2<bool>) -> BaselineComponent {
    BaselineComponent::new(
        Arc::new(PatternStub {
            n_x: n_x_b,
            n_u,
            n_y,
            pattern: p_b.clone(),
        }),
        Array1::zeros(0),
    )
}

/// Generates the canonical catalog patterns for the query dimensions.
///
/// The patterns come from the same factories that build models, so detection
/// and construction cannot drift apart. Composed candidates (input-series and
/// dynamic output-series on parallel state models) are generated for every
/// feasible split of the augmented states.
pub fn catalog_candidates(dims: &Dimensions, p_b: &Array2<bool>) -> Vec<Candidate> {
    let (n_x_b, n_x_a, n_u, n_y) = (dims.n_x_b, dims.n_x_a, dims.n_u, dims.n_y);
    if p_b.dim() != (n_x_b + n_y, n_x_b + n_u) {
        return Vec::new();
    }
    let hidden = HiddenSpec { layers: 0, width: 0 };
    let enc = EncoderSpec {
        n_a: 1,
        n_b: 1,
        hidden: vec![],
    };
    let mut out = Vec::new();
    let dynamic = n_x_a > 0;
    let single = [
        (StructureKind::Parallel, Level::State),
        (StructureKind::SeriesOutput, Level::State),
        (StructureKind::SeriesInput, Level::State),
        (StructureKind::Parallel, Level::Output),
        (StructureKind::SeriesOutput, Level::Output),
    ];
    for (kind, level) in single {
        let build = match level {
            Level::State => make_state_structure,
            Level::Output => make_output_structure,
        };
        if let Ok(model) = build(
            kind,
            dynamic,
            stub_component(n_x_b, n_u, n_y, p_b),
            n_x_a,
            &hidden,
            &enc,
            0,
        ) {
            if let Ok(plan) = plan_structure(kind, level, n_x_b, n_x_a, n_u, n_y) {
                out.push(Candidate {
                    labels: plan.labels,
                    adjacency: graph::build_adjacency(&model),
                });
            }
        }
    }
    // input-series composition of the parallel state structure
    if let Ok(base_model) = make_state_structure(
        StructureKind::Parallel,
        dynamic,
        stub_component(n_x_b, n_u, n_y, p_b),
        n_x_a,
        &hidden,
        &enc,
        0,
    ) {
        if let Ok(composed) = compose_structures(
            &base_model,
            &Extension::InputSeries { hidden: hidden.clone() },
            0,
        ) {
            out.push(Candidate {
                labels: vec![if dynamic { "S-DP-I" } else { "S-SP-I" }.to_string()],
                adjacency: graph::build_adjacency(&composed),
            });
        }
    }
    // dynamic output-series composed onto a parallel state structure
    for n2 in 1..=n_x_a {
        let n_state_part = n_x_a - n2;
        if let Ok(base_model) = make_state_structure(
            StructureKind::Parallel,
            n_state_part > 0,
            stub_component(n_x_b, n_u, n_y, p_b),
            n_state_part,
            &hidden,
            &enc,
            0,
        ) {
            if let Ok(composed) = compose_structures(
                &base_model,
                &Extension::OutputSeriesDynamic {
                    n_states: n2,
                    hidden: hidden.clone(),
                },
                0,
            ) {
                let state_label = if n_state_part > 0 { "S-DP" } else { "S-SP" };
                out.push(Candidate {
                    labels: vec![state_label.to_string(), "O-DSO".to_string()],
                    adjacency: graph::build_adjacency(&composed),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearSsBaseline;
    use ndarray::array;

    fn toy_base() -> BaselineComponent {
        // f = 0.9 x + u, h = x (scalar)
        let map = Arc::new(LinearSsBaseline::new("toy", 1, 1, 1));
        let theta = LinearSsBaseline::pack_theta(
            &array![[0.9]],
            &array![[1.0]],
            &array![[1.0]],
            &array![[0.0]],
        );
        BaselineComponent::new(map, theta)
    }

    #[test]
    fn static_parallel_with_zero_head_reproduces_baseline() {
        let mut model = make_state_structure(
            StructureKind::Parallel,
            false,
            toy_base(),
            0,
            &HiddenSpec::default(),
            &EncoderSpec::default(),
            1,
        )
        .unwrap();
        // silence the learned branch entirely
        model.aug.heads[0].zero_output_layer();
        model.aug.heads[0].bypass.fill(0.0);
        let (x_next, y) = model.step(&array![1.0], &array![1.0]).unwrap();
        assert!((x_next[0] - 1.9).abs() < 1e-14);
        assert!((y[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn static_kind_rejects_augmented_states() {
        let err = make_state_structure(
            StructureKind::Parallel,
            false,
            toy_base(),
            2,
            &HiddenSpec::default(),
            &EncoderSpec::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
    }

    #[test]
    fn dynamic_with_zero_states_collapses_to_static() {
        for kind in [
            StructureKind::Parallel,
            StructureKind::SeriesOutput,
            StructureKind::SeriesInput,
        ] {
            let stat = make_state_structure(
                kind,
                false,
                toy_base(),
                0,
                &HiddenSpec::default(),
                &EncoderSpec::default(),
                3,
            )
            .unwrap();
            let dynm = make_state_structure(
                kind,
                true,
                toy_base(),
                0,
                &HiddenSpec::default(),
                &EncoderSpec::default(),
                3,
            )
            .unwrap();
            for id in BlockId::ALL {
                assert_eq!(
                    stat.w.block(id),
                    dynm.w.block(id),
                    "block {} differs for {kind:?}",
                    id.name()
                );
            }
        }
    }

    #[test]
    fn series_input_identity_shaping_equals_baseline() {
        let mut model = make_state_structure(
            StructureKind::SeriesInput,
            false,
            toy_base(),
            0,
            &HiddenSpec::default(),
            &EncoderSpec::default(),
            5,
        )
        .unwrap();
        let head = &mut model.aug.heads[0];
        head.zero_output_layer();
        head.bypass.assign(&Array2::eye(2));
        let (x_next, y) = model.step(&array![1.0], &array![1.0]).unwrap();
        assert!((x_next[0] - 1.9).abs() < 1e-14);
        assert!((y[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn output_parallel_with_zero_head_keeps_baseline_output() {
        let mut model = make_output_structure(
            StructureKind::Parallel,
            false,
            toy_base(),
            0,
            &HiddenSpec::default(),
            &EncoderSpec::default(),
            2,
        )
        .unwrap();
        model.aug.heads[0].zero_output_layer();
        model.aug.heads[0].bypass.fill(0.0);
        let (x_next, y) = model.step(&array![0.5], &array![0.25]).unwrap();
        assert!((x_next[0] - (0.9 * 0.5 + 0.25)).abs() < 1e-14);
        assert!((y[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn labels_parse_and_roundtrip() {
        assert_eq!(
            parse_label("S-SP"),
            Some((StructureKind::Parallel, Level::State, false))
        );
        assert_eq!(
            parse_label("O-SSP"),
            Some((StructureKind::SeriesOutput, Level::Output, false))
        );
        assert_eq!(
            parse_label("O-DSI"),
            Some((StructureKind::SeriesInput, Level::Output, true))
        );
        assert_eq!(parse_label("X-YY"), None);
    }
}
