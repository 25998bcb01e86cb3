//! Alternating two-step optimization over generator weights and per-sample
//! latent codes, plus latent inversion for new images.
//!
//! One epoch runs a full weight pass over shuffled minibatches (codes fixed),
//! then one or more latent passes updating every code against its own
//! reconstruction loss (weights fixed). Per-sample loss terms share no
//! variables besides the weights, so latent updates are independent across
//! samples. Codes are kept on the unit L2 ball by projection after every
//! update.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::generator::{
    forward, forward_nodes, init_params, register_params, ConditionLabel, GeneratorConfig,
    GeneratorParams, LatentCode, Patch,
};
use crate::numerics::{ops, Graph, Tensor};
use crate::seeding::{derive_seed, rng_from};

/// Tolerance on the ball constraint: ||z|| <= 1 + BALL_TOL after projection.
pub const BALL_TOL: f64 = 1e-9;

const LATENT_INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// How latent codes are normalized after a gradient step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// Project onto the unit ball: leave codes with norm <= 1 untouched,
    /// rescale longer ones to norm 1.
    #[default]
    Ball,
    /// Always rescale to norm 1 (zero vectors are left at zero).
    Sphere,
}

/// One training sample's latent state. The condition label is fixed at
/// construction; only the trainer mutates the code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEntry {
    pub sample_id: usize,
    pub code: LatentCode,
    pub condition: ConditionLabel,
}

/// Per-sample (code, condition) pairs aligned 1:1 with the patch dataset:
/// entry `i` has `sample_id == i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    entries: Vec<LatentEntry>,
}

impl LatentTable {
    pub fn new(codes: Vec<LatentCode>, conditions: &[ConditionLabel]) -> Result<LatentTable> {
        if codes.len() != conditions.len() {
            return Err(Error::ShapeMismatch {
                op: "latent table",
                expected: format!("{} conditions", codes.len()),
                got: conditions.len().to_string(),
            });
        }
        let entries = codes
            .into_iter()
            .zip(conditions)
            .enumerate()
            .map(|(i, (code, &condition))| LatentEntry {
                sample_id: i,
                code,
                condition,
            })
            .collect();
        LatentTable::from_entries(entries)
    }

    /// Validates positional sample ids and the ball constraint.
    pub fn from_entries(entries: Vec<LatentEntry>) -> Result<LatentTable> {
        for (i, e) in entries.iter().enumerate() {
            if e.sample_id != i {
                return Err(Error::BadSampleId {
                    id: e.sample_id,
                    len: entries.len(),
                });
            }
            if !e.code.values().iter().all(|v| v.is_finite()) || e.code.norm() > 1.0 + BALL_TOL {
                return Err(Error::InvalidConfig(format!(
                    "latent code {} violates the unit-ball constraint (norm {})",
                    i,
                    e.code.norm()
                )));
            }
        }
        Ok(LatentTable { entries })
    }

    pub fn entries(&self) -> &[LatentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: usize) -> Result<&LatentEntry> {
        self.entries.get(sample_id).ok_or(Error::BadSampleId {
            id: sample_id,
            len: self.entries.len(),
        })
    }

    fn code_mut(&mut self, sample_id: usize) -> &mut LatentCode {
        &mut self.entries[sample_id].code
    }

    pub fn max_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.code.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Weight learning rate.
    pub lr_w: f64,
    /// Latent learning rate.
    pub lr_z: f64,
    pub batch_size: usize,
    /// Latent-update passes per epoch.
    pub z_steps_per_epoch: usize,
    pub projection: ProjectionMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr_w: 0.1,
            lr_z: 0.2,
            batch_size: 4,
            z_steps_per_epoch: 2,
            projection: ProjectionMode::Ball,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_w > 0.0 && self.lr_w.is_finite()) || !(self.lr_z > 0.0 && self.lr_z.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive and finite".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean reconstruction loss per epoch: the sample-weighted mean of the batch
/// losses measured during the epoch's weight pass, each at its batch's
/// pre-update weights.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LossHistory(Vec<f64>);

impl LossHistory {
    pub fn from_values(values: Vec<f64>) -> LossHistory {
        LossHistory(values)
    }

    pub fn per_epoch(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<f64> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }

    fn push(&mut self, loss: f64) {
        self.0.push(loss);
    }

    /// CSV export, one `epoch,mean_loss` row per epoch (1-based epochs).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, loss) in self.0.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, loss));
        }
        out
    }
}

/// Draw `n` codes i.i.d. normal(0, 1/d) per coordinate, projected onto the
/// unit ball; the norms concentrate near 1 for large d.
pub fn init_latents(n: usize, d: usize, seed: u64) -> Vec<LatentCode> {
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("valid stddev");
    (0..n)
        .map(|_| {
            let values: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            project_latent_mode(&LatentCode::new(values), ProjectionMode::Ball)
        })
        .collect()
}

/// Unit-ball projection: codes with norm <= 1 pass through unchanged.
pub fn project_latent(z: &LatentCode) -> LatentCode {
    project_latent_mode(z, ProjectionMode::Ball)
}

pub fn project_latent_mode(z: &LatentCode, mode: ProjectionMode) -> LatentCode {
    let norm = z.norm();
    // Rescaling to unit norm can itself land a couple of ulps above 1, so
    // the ball test carries the same tolerance as the invariant; this keeps
    // projection bitwise idempotent.
    let rescale = match mode {
        ProjectionMode::Ball => norm > 1.0 + BALL_TOL,
        ProjectionMode::Sphere => norm > 0.0,
    };
    if !rescale {
        return z.clone();
    }
    LatentCode::new(z.values().iter().map(|v| v / norm).collect())
}

fn check_dataset(
    patches: &[Patch],
    config: &GeneratorConfig,
    table_len: usize,
) -> Result<()> {
    if patches.len() != table_len {
        return Err(Error::ShapeMismatch {
            op: "trainer",
            expected: format!("{table_len} patches"),
            got: patches.len().to_string(),
        });
    }
    for p in patches {
        if p.channels() != config.channels || p.size() != config.output_size {
            return Err(Error::ShapeMismatch {
                op: "trainer",
                expected: format!("[{}x{}x{}]", config.channels, config.output_size, config.output_size),
                got: p.tensor().shape_str(),
            });
        }
    }
    Ok(())
}

/// One gradient-descent update of the weights on the mean reconstruction
/// loss of the batch; the latent table is untouched. Returns the batch loss
/// measured before the update.
pub fn step_weights(
    params: &mut GeneratorParams,
    table: &LatentTable,
    patches: &[Patch],
    batch_ids: &[usize],
    lr_w: f64,
) -> Result<f64> {
    if batch_ids.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dataset(patches, params.config(), table.len())?;

    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params, true)?;
    let mut losses = Vec::with_capacity(batch_ids.len());
    for &id in batch_ids {
        let entry = table.get(id)?;
        let z = graph.constant(Tensor::vector(entry.code.values()));
        let out = forward_nodes(&mut graph, params.config(), &nodes, z, entry.condition)?;
        let target = graph.constant(patches[id].tensor().clone());
        losses.push(graph.l1_loss(out, target)?);
    }
    let loss = graph.mean_scalars(&losses)?;
    let names: Vec<&str> = params.tensors().iter().map(|(n, _)| n.as_str()).collect();
    let grads = graph.backward(loss, &names)?;
    params.apply_gradients(&grads, lr_w);
    Ok(graph.scalar_value(loss))
}

/// Loss and latent gradient of one sample under fixed weights.
fn latent_grad(
    params: &GeneratorParams,
    code: &LatentCode,
    condition: ConditionLabel,
    target: &Patch,
) -> Result<(f64, Vec<f64>)> {
    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params, false)?;
    let z = graph.leaf("z", Tensor::vector(code.values()))?;
    let out = forward_nodes(&mut graph, params.config(), &nodes, z, condition)?;
    let tn = graph.constant(target.tensor().clone());
    let loss = graph.l1_loss(out, tn)?;
    let grads = graph.backward(loss, &["z"])?;
    Ok((
        graph.scalar_value(loss),
        grads.get("z").unwrap().data().to_vec(),
    ))
}

/// For each listed sample independently: one projected gradient step on its
/// code against its own reconstruction loss. Weights and condition labels
/// are untouched. Returns the mean loss measured before the updates.
pub fn step_latents(
    params: &GeneratorParams,
    table: &mut LatentTable,
    patches: &[Patch],
    sample_ids: &[usize],
    lr_z: f64,
    projection: ProjectionMode,
) -> Result<f64> {
    check_dataset(patches, params.config(), table.len())?;
    if sample_ids.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &id in sample_ids {
        let entry = table.get(id)?;
        let (loss, grad) = latent_grad(params, &entry.code, entry.condition, &patches[id])?;
        total += loss;
        let code = table.code_mut(id);
        for (v, g) in code.values_mut().iter_mut().zip(&grad) {
            *v -= lr_z * g;
        }
        *code = project_latent_mode(code, projection);
    }
    Ok(total / sample_ids.len() as f64)
}

/// Mean reconstruction loss of the whole table under the current weights.
pub fn mean_loss(
    params: &GeneratorParams,
    table: &LatentTable,
    patches: &[Patch],
) -> Result<f64> {
    check_dataset(patches, params.config(), table.len())?;
    let mut total = 0.0;
    for entry in table.entries() {
        let recon = forward(params, &entry.code, entry.condition)?;
        total += ops::l1_loss(recon.tensor(), patches[entry.sample_id].tensor())?;
    }
    Ok(total / table.len().max(1) as f64)
}

/// Run the full alternating optimization and report the per-epoch mean loss.
pub fn train(
    patches: &[Patch],
    conditions: &[ConditionLabel],
    gen_config: &GeneratorConfig,
    train_config: &TrainConfig,
) -> Result<(GeneratorParams, LatentTable, LossHistory)> {
    if patches.is_empty() {
        return Err(Error::EmptyBatch);
    }
    gen_config.validate()?;
    train_config.validate()?;

    let mut params = init_params(gen_config)?;
    let codes = init_latents(
        patches.len(),
        gen_config.latent_dim,
        derive_seed(train_config.seed, LATENT_INIT_STREAM),
    );
    let mut table = LatentTable::new(codes, conditions)?;
    check_dataset(patches, gen_config, table.len())?;

    let mut history = LossHistory::default();
    let mut shuffle_rng = rng_from(derive_seed(train_config.seed, SHUFFLE_STREAM));
    let all_ids: Vec<usize> = (0..patches.len()).collect();

    for epoch in 0..train_config.epochs {
        let mut order = all_ids.clone();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(train_config.batch_size).enumerate() {
            let loss = step_weights(&mut params, &table, patches, batch, train_config.lr_w)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * batch.len() as f64;
        }
        for pass in 0..train_config.z_steps_per_epoch {
            let loss = step_latents(
                &params,
                &mut table,
                patches,
                &all_ids,
                train_config.lr_z,
                train_config.projection,
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: pass });
            }
        }
        history.push(loss_sum / patches.len() as f64);
    }
    Ok((params, table, history))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertConfig {
    pub steps: usize,
    pub lr_z: f64,
    pub projection: ProjectionMode,
}

impl Default for InvertConfig {
    fn default() -> Self {
        InvertConfig {
            steps: 500,
            lr_z: 0.1,
            projection: ProjectionMode::Ball,
        }
    }
}

/// Find a latent code reconstructing `image` under fixed weights: start from
/// a fresh random code and run projected gradient steps on the
/// reconstruction loss. Returns the best code seen and its loss.
pub fn invert(
    params: &GeneratorParams,
    image: &Patch,
    c: ConditionLabel,
    cfg: &InvertConfig,
    seed: u64,
) -> Result<(LatentCode, f64)> {
    let config = params.config();
    if image.channels() != config.channels || image.size() != config.output_size {
        return Err(Error::ShapeMismatch {
            op: "invert",
            expected: format!("[{}x{}x{}]", config.channels, config.output_size, config.output_size),
            got: image.tensor().shape_str(),
        });
    }
    let mut code = init_latents(1, config.latent_dim, seed).pop().unwrap();
    let mut best = code.clone();
    let mut best_loss = f64::INFINITY;
    for _ in 0..cfg.steps {
        let (loss, grad) = latent_grad(params, &code, c, image)?;
        if loss < best_loss {
            best_loss = loss;
            best = code.clone();
        }
        for (v, g) in code.values_mut().iter_mut().zip(&grad) {
            *v -= cfg.lr_z * g;
        }
        code = project_latent_mode(&code, cfg.projection);
    }
    let recon = forward(params, &code, c)?;
    let final_loss = ops::l1_loss(recon.tensor(), image.tensor())?;
    if final_loss < best_loss {
        best_loss = final_loss;
        best = code;
    }
    Ok((best, best_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::init_params;

    fn tiny_setup(n: usize) -> (GeneratorParams, LatentTable, Vec<Patch>) {
        let config = GeneratorConfig {
            latent_dim: 4,
            output_size: 8,
            channels: 1,
            base_feat: 4,
            seed: 21,
        };
        let params = init_params(&config).unwrap();
        let conditions: Vec<ConditionLabel> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    ConditionLabel::Background
                } else {
                    ConditionLabel::Foreground
                }
            })
            .collect();
        let codes = init_latents(n, 4, 3);
        let table = LatentTable::new(codes, &conditions).unwrap();
        // Synthetic targets from a differently seeded generator.
        let target_params = init_params(&GeneratorConfig { seed: 77, ..config }).unwrap();
        let patches: Vec<Patch> = table
            .entries()
            .iter()
            .map(|e| forward(&target_params, &e.code, e.condition).unwrap())
            .collect();
        (params, table, patches)
    }

    #[test]
    fn init_latents_respects_ball_and_seed() {
        let a = init_latents(50, 16, 9);
        let b = init_latents(50, 16, 9);
        assert_eq!(a, b);
        assert!(a.iter().all(|z| z.norm() <= 1.0 + BALL_TOL));
        let c = init_latents(50, 16, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn init_latents_norms_concentrate_near_one() {
        // Chi-distribution check: per-coordinate variance 1/d puts the norm
        // of a d-dimensional draw near 1.
        let codes = init_latents(1000, 256, 4);
        let mean_norm: f64 = codes.iter().map(|z| z.norm()).sum::<f64>() / 1000.0;
        assert!(mean_norm > 0.9 && mean_norm < 1.01, "mean norm {mean_norm}");
    }

    #[test]
    fn projection_cases() {
        let short = LatentCode::new(vec![0.3, 0.4]);
        assert_eq!(project_latent(&short), short);

        let long = LatentCode::new(vec![3.0, 4.0]);
        let projected = project_latent(&long);
        assert!((projected.values()[0] - 0.6).abs() < 1e-15);
        assert!((projected.values()[1] - 0.8).abs() < 1e-15);

        let twice = project_latent(&projected);
        assert_eq!(twice, projected);

        let sphere = project_latent_mode(&short, ProjectionMode::Sphere);
        assert!((sphere.norm() - 1.0).abs() < 1e-12);
        let zero = LatentCode::new(vec![0.0, 0.0]);
        assert_eq!(project_latent_mode(&zero, ProjectionMode::Sphere), zero);
    }

    #[test]
    fn step_weights_zero_lr_keeps_params() {
        let (mut params, table, patches) = tiny_setup(4);
        let before = params.clone();
        let loss = step_weights(&mut params, &table, &patches, &[0, 1], 0.0).unwrap();
        assert_eq!(params, before);
        assert!(loss.is_finite() && loss > 0.0);
    }

    #[test]
    fn step_weights_small_lr_does_not_increase_batch_loss() {
        let (mut params, table, patches) = tiny_setup(4);
        let batch = [2usize];
        let before = step_weights(&mut params, &table, &patches, &batch, 1e-4).unwrap();
        // Re-measure at the same (z, c) after the update.
        let after = step_weights(&mut params, &table, &patches, &batch, 0.0).unwrap();
        assert!(
            after <= before + 1e-12,
            "loss increased: {before} -> {after}"
        );
    }

    #[test]
    fn step_weights_rejects_empty_batch() {
        let (mut params, table, patches) = tiny_setup(2);
        assert!(matches!(
            step_weights(&mut params, &table, &patches, &[], 0.1),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn disjoint_batches_from_same_state_diverge() {
        let (params, table, patches) = tiny_setup(4);
        let mut a = params.clone();
        let mut b = params.clone();
        step_weights(&mut a, &table, &patches, &[0, 1], 0.05).unwrap();
        step_weights(&mut b, &table, &patches, &[2, 3], 0.05).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn step_latents_zero_lr_keeps_table() {
        let (params, mut table, patches) = tiny_setup(4);
        let before = table.clone();
        step_latents(&params, &mut table, &patches, &[0, 1, 2, 3], 0.0, ProjectionMode::Ball)
            .unwrap();
        assert_eq!(table, before);
    }

    #[test]
    fn step_latents_is_per_sample_independent() {
        let (params, table, patches) = tiny_setup(4);
        let mut joint = table.clone();
        step_latents(&params, &mut joint, &patches, &[1, 2], 0.1, ProjectionMode::Ball).unwrap();
        let mut split = table.clone();
        step_latents(&params, &mut split, &patches, &[1], 0.1, ProjectionMode::Ball).unwrap();
        step_latents(&params, &mut split, &patches, &[2], 0.1, ProjectionMode::Ball).unwrap();
        assert_eq!(joint, split);
    }

    #[test]
    fn step_latents_keeps_ball_and_conditions() {
        let (params, mut table, patches) = tiny_setup(4);
        let conditions_before: Vec<ConditionLabel> =
            table.entries().iter().map(|e| e.condition).collect();
        for _ in 0..5 {
            step_latents(&params, &mut table, &patches, &[0, 1, 2, 3], 0.5, ProjectionMode::Ball)
                .unwrap();
        }
        assert!(table.max_norm() <= 1.0 + BALL_TOL);
        let conditions_after: Vec<ConditionLabel> =
            table.entries().iter().map(|e| e.condition).collect();
        assert_eq!(conditions_before, conditions_after);
    }

    #[test]
    fn train_zero_epochs_returns_initial_state() {
        let config = GeneratorConfig {
            latent_dim: 4,
            output_size: 8,
            channels: 1,
            base_feat: 4,
            seed: 21,
        };
        let (_, table, patches) = tiny_setup(4);
        let conditions: Vec<ConditionLabel> = table.entries().iter().map(|e| e.condition).collect();
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (params, out_table, history) = train(&patches, &conditions, &config, &tc).unwrap();
        assert!(history.is_empty());
        assert_eq!(params, init_params(&config).unwrap());
        let fresh = init_latents(4, 4, derive_seed(tc.seed, LATENT_INIT_STREAM));
        assert_eq!(out_table, LatentTable::new(fresh, &conditions).unwrap());
    }

    #[test]
    fn train_is_deterministic_per_seed() {
        let config = GeneratorConfig {
            latent_dim: 4,
            output_size: 8,
            channels: 1,
            base_feat: 4,
            seed: 21,
        };
        let (_, table, patches) = tiny_setup(6);
        let conditions: Vec<ConditionLabel> = table.entries().iter().map(|e| e.condition).collect();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&patches, &conditions, &config, &tc).unwrap();
        let b = train(&patches, &conditions, &config, &tc).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn train_rejects_shape_mismatch() {
        let config = GeneratorConfig {
            latent_dim: 4,
            output_size: 16,
            channels: 1,
            base_feat: 4,
            seed: 21,
        };
        let (_, _, patches) = tiny_setup(4); // 8x8 patches vs 16 expected
        let conditions = vec![ConditionLabel::Background; 4];
        assert!(train(&patches, &conditions, &config, &TrainConfig::default()).is_err());
    }

    #[test]
    fn invert_zero_steps_returns_initialization() {
        let (params, _, patches) = tiny_setup(2);
        let cfg = InvertConfig {
            steps: 0,
            ..InvertConfig::default()
        };
        let (code, loss) = invert(&params, &patches[0], ConditionLabel::Background, &cfg, 123).unwrap();
        let init = init_latents(1, 4, 123).pop().unwrap();
        assert_eq!(code, init);
        let recon = forward(&params, &code, ConditionLabel::Background).unwrap();
        let expect = ops::l1_loss(recon.tensor(), patches[0].tensor()).unwrap();
        assert_eq!(loss, expect);
    }

    #[test]
    fn invert_never_exceeds_initialization_loss() {
        let (params, table, patches) = tiny_setup(4);
        let cfg = InvertConfig {
            steps: 40,
            ..InvertConfig::default()
        };
        for (i, patch) in patches.iter().enumerate() {
            let c = table.entries()[i].condition;
            let init = init_latents(1, 4, 1000 + i as u64).pop().unwrap();
            let recon = forward(&params, &init, c).unwrap();
            let init_loss = ops::l1_loss(recon.tensor(), patch.tensor()).unwrap();
            let (_, loss) = invert(&params, patch, c, &cfg, 1000 + i as u64).unwrap();
            assert!(loss <= init_loss, "inverted loss {loss} > init {init_loss}");
        }
    }

    #[test]
    fn loss_history_csv_round_numbers() {
        let h = LossHistory::from_values(vec![0.5, 0.25]);
        assert_eq!(h.to_csv(), "epoch,mean_loss\n1,0.5\n2,0.25\n");
    }
}
