//! The conditional deconvolution generator: a configurable DCGAN-style stack
//! mapping a latent code plus a binary condition label to an image patch.
//!
//! The condition enters by concatenation: the (d+1)-vector (z, c) is projected
//! to a `base_feat x 4 x 4` feature map, then upsampled by stride-2 transposed
//! convolutions (kernel 4, padding 1, each exactly doubling the side) with
//! relu between layers and tanh on the output, so patches land in (-1, 1).

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::seeding::rng_from;

/// Side length of the first spatial feature map.
const BASE_SIDE: usize = 4;
/// Transposed-conv kernel size; with stride 2 and padding 1 each layer
/// doubles the spatial side.
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PADDING: usize = 1;

/// Binary condition input: background or foreground.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionLabel {
    Background,
    Foreground,
}

impl ConditionLabel {
    pub fn value(self) -> f64 {
        match self {
            ConditionLabel::Background => 0.0,
            ConditionLabel::Foreground => 1.0,
        }
    }

    /// Accepts exactly 0 or 1.
    pub fn from_value(v: f64) -> Result<ConditionLabel> {
        if v == 0.0 {
            Ok(ConditionLabel::Background)
        } else if v == 1.0 {
            Ok(ConditionLabel::Foreground)
        } else {
            Err(Error::InvalidConfig(format!(
                "condition label must be 0 or 1, got {v}"
            )))
        }
    }

    pub fn bit(self) -> u8 {
        self.value() as u8
    }
}

/// Latent code: a d-dimensional real vector. The trainer keeps codes on the
/// unit L2 ball; the type itself only stores the values.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> LatentCode {
        LatentCode(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A square image patch with channels-first layout and values in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Patch(Tensor);

impl Patch {
    pub fn from_tensor(t: Tensor) -> Result<Patch> {
        let shape = t.shape();
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(Error::ShapeMismatch {
                op: "patch",
                expected: "[C x S x S]".into(),
                got: t.shape_str(),
            });
        }
        if t.data().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidConfig(
                "patch values must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(Patch(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn pixel(&self, c: usize, row: usize, col: usize) -> f64 {
        let s = self.size();
        self.0.data()[(c * s + row) * s + col]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Latent dimension d.
    pub latent_dim: usize,
    /// Patch side in pixels; power of two in 8..=64.
    pub output_size: usize,
    /// Output image channels (1 or 3).
    pub channels: usize,
    /// Feature-map count at the 4x4 stage; halved per upsampling layer.
    pub base_feat: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 128,
            output_size: 64,
            channels: 1,
            base_feat: 64,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32, 64].contains(&self.output_size) {
            return Err(Error::InvalidConfig(format!(
                "output_size must be one of 8, 16, 32, 64; got {}",
                self.output_size
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.base_feat == 0 {
            return Err(Error::InvalidConfig("base_feat must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of stride-2 upsampling layers: log2(output_size / 4).
    pub fn num_layers(&self) -> usize {
        (self.output_size / BASE_SIDE).trailing_zeros() as usize
    }

    /// Input width of the dense projection: latent plus one condition slot.
    pub fn input_dim(&self) -> usize {
        self.latent_dim + 1
    }

    /// Feature-map count entering upsampling layer `i` (0-based).
    fn feat(&self, i: usize) -> usize {
        (self.base_feat >> i).max(1)
    }

    /// Named parameter tensors and their shapes, in forward order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = vec![
            (
                "proj.weight".to_string(),
                vec![self.base_feat * BASE_SIDE * BASE_SIDE, self.input_dim()],
            ),
            ("proj.bias".to_string(), vec![self.base_feat * BASE_SIDE * BASE_SIDE]),
        ];
        let layers = self.num_layers();
        for i in 0..layers {
            let cin = self.feat(i);
            let cout = if i + 1 == layers { self.channels } else { self.feat(i + 1) };
            shapes.push((format!("deconv{i}.kernel"), vec![cin, cout, KERNEL, KERNEL]));
            shapes.push((format!("deconv{i}.bias"), vec![cout]));
        }
        shapes
    }
}

/// Ordered, named parameter tensors of the generator, tied to the config that
/// shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    config: GeneratorConfig,
    tensors: Vec<(String, Tensor)>,
}

impl GeneratorParams {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuild params from config plus named tensors, validating that the
    /// names and shapes are exactly the ones the config prescribes.
    pub fn from_parts(config: GeneratorConfig, tensors: Vec<(String, Tensor)>) -> Result<GeneratorParams> {
        config.validate()?;
        let expected = config.param_shapes();
        if tensors.len() != expected.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in tensors.iter().zip(&expected) {
            if name != want_name || tensor.shape() != want_shape.as_slice() {
                return Err(Error::InvalidConfig(format!(
                    "parameter {name} {} does not match expected {want_name} {}",
                    tensor.shape_str(),
                    crate::error::shape_string(want_shape),
                )));
            }
            if !tensor.all_finite() {
                return Err(Error::InvalidConfig(format!("parameter {name} has non-finite values")));
            }
        }
        Ok(GeneratorParams { config, tensors })
    }

    /// In-place gradient-descent update; names absent from `grads` are left
    /// untouched.
    pub fn apply_gradients(&mut self, grads: &crate::numerics::Gradients, lr: f64) {
        for (name, tensor) in &mut self.tensors {
            if let Some(g) = grads.get(name) {
                tensor.axpy_neg(lr, g);
            }
        }
    }
}

/// Draw kernels and projection weights i.i.d. normal with a fan-scaled
/// stddev so activations keep unit-order variance at every width; biases
/// zero. Deterministic for a fixed seed.
pub fn init_params(config: &GeneratorConfig) -> Result<GeneratorParams> {
    config.validate()?;
    let mut rng = rng_from(config.seed);
    let tensors = config
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                // Effective fan-in: dense rows see the whole input vector; a
                // stride-s transposed-conv output pixel sees cin * (K/s)^2
                // taps.
                let fan_in = if shape.len() == 2 {
                    shape[1]
                } else {
                    shape[0] * (KERNEL / STRIDE) * (KERNEL / STRIDE)
                };
                let normal =
                    Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid stddev");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            (name, Tensor::from_vec(&shape, data).unwrap())
        })
        .collect();
    Ok(GeneratorParams {
        config: config.clone(),
        tensors,
    })
}

/// Parameter tensors registered on a graph, aligned with `param_shapes`.
pub(crate) struct ParamNodes(Vec<NodeId>);

/// Register every parameter tensor on the graph. With `trainable` they become
/// named leaves that `Graph::backward` can report gradients for; otherwise
/// they are anonymous constants.
pub(crate) fn register_params(
    graph: &mut Graph,
    params: &GeneratorParams,
    trainable: bool,
) -> Result<ParamNodes> {
    let mut nodes = Vec::with_capacity(params.tensors.len());
    for (name, tensor) in &params.tensors {
        let id = if trainable {
            graph.leaf(name, tensor.clone())?
        } else {
            graph.constant(tensor.clone())
        };
        nodes.push(id);
    }
    Ok(ParamNodes(nodes))
}

/// Append the generator forward pass to `graph` and return the output node.
pub(crate) fn forward_nodes(
    graph: &mut Graph,
    config: &GeneratorConfig,
    params: &ParamNodes,
    z: NodeId,
    c: ConditionLabel,
) -> Result<NodeId> {
    if graph.value(z).shape() != [config.latent_dim] {
        return Err(Error::ShapeMismatch {
            op: "generator forward",
            expected: format!("latent [{}]", config.latent_dim),
            got: graph.value(z).shape_str(),
        });
    }
    let cond = graph.constant(Tensor::vector(&[c.value()]));
    let joined = graph.concat(&[z, cond])?;
    let projected = graph.dense(joined, params.0[0], params.0[1])?;
    let mut x = graph.reshape(projected, &[config.base_feat, BASE_SIDE, BASE_SIDE])?;
    let layers = config.num_layers();
    for i in 0..layers {
        x = graph.relu(x);
        x = graph.conv_transpose2d(x, params.0[2 + 2 * i], params.0[3 + 2 * i], STRIDE, PADDING)?;
    }
    Ok(graph.tanh(x))
}

/// Generate a patch from a latent code and condition label.
pub fn forward(params: &GeneratorParams, z: &LatentCode, c: ConditionLabel) -> Result<Patch> {
    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params, false)?;
    let zn = graph.constant(Tensor::vector(z.values()));
    let out = forward_nodes(&mut graph, &params.config, &nodes, zn, c)?;
    Patch::from_tensor(graph.value(out).clone())
}

/// Verify reverse-mode gradients of `l1_loss(forward(W, z, c), target)`
/// against central finite differences at `n_coords` random coordinates of
/// the flattened (parameters, latent) vector. The target patch and probe
/// coordinates are drawn from `seed`.
pub fn generator_grad_check(
    config: &GeneratorConfig,
    n_coords: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<crate::numerics::GradCheckReport> {
    use rand::Rng;

    config.validate()?;
    let params = init_params(config)?;
    let mut rng = rng_from(seed);
    let z0: Vec<f64> = (0..config.latent_dim)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    let out_shape = [config.channels, config.output_size, config.output_size];
    let n_pixels: usize = out_shape.iter().product();
    let target = Tensor::from_vec(
        &out_shape,
        (0..n_pixels).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let condition = ConditionLabel::Background;

    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, &params, true)?;
    let zn = graph.leaf("z", Tensor::vector(&z0))?;
    let out = forward_nodes(&mut graph, config, &nodes, zn, condition)?;
    let tn = graph.constant(target.clone());
    let loss = graph.l1_loss(out, tn)?;
    let mut names: Vec<&str> = params.tensors().iter().map(|(n, _)| n.as_str()).collect();
    names.push("z");
    let grads = graph.backward(loss, &names)?;

    let mut at = Vec::with_capacity(params.total_values() + config.latent_dim);
    let mut analytic = Vec::with_capacity(at.capacity());
    for (name, tensor) in params.tensors() {
        at.extend_from_slice(tensor.data());
        analytic.extend_from_slice(grads.get(name).unwrap().data());
    }
    at.extend_from_slice(&z0);
    analytic.extend_from_slice(grads.get("z").unwrap().data());

    let mut coords = rand::seq::index::sample(&mut rng, at.len(), n_coords.min(at.len())).into_vec();
    coords.sort_unstable();

    let shapes = config.param_shapes();
    let eval = |flat: &[f64]| {
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            let n: usize = shape.iter().product();
            tensors.push((
                name.clone(),
                Tensor::from_vec(shape, flat[offset..offset + n].to_vec()).unwrap(),
            ));
            offset += n;
        }
        let probe = GeneratorParams {
            config: config.clone(),
            tensors,
        };
        let mut g = Graph::new();
        let pn = register_params(&mut g, &probe, false).unwrap();
        let zn = g.constant(Tensor::vector(&flat[offset..]));
        let o = forward_nodes(&mut g, config, &pn, zn, condition).unwrap();
        let t = g.constant(target.clone());
        let l = g.l1_loss(o, t).unwrap();
        g.scalar_value(l)
    };
    Ok(crate::numerics::finite_diff_check(eval, &at, &analytic, &coords, h, tol))
}

/// Elementwise equal to mapping `forward` over the pairs.
pub fn forward_batch(
    params: &GeneratorParams,
    latents: &[LatentCode],
    conditions: &[ConditionLabel],
) -> Result<Vec<Patch>> {
    if latents.len() != conditions.len() {
        return Err(Error::ShapeMismatch {
            op: "forward_batch",
            expected: format!("{} conditions", latents.len()),
            got: conditions.len().to_string(),
        });
    }
    latents
        .iter()
        .zip(conditions)
        .map(|(z, &c)| forward(params, z, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, ops};

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: 3,
            output_size: 8,
            channels: 1,
            base_feat: 4,
            seed: 11,
        }
    }

    fn zeroed_params(config: &GeneratorConfig) -> GeneratorParams {
        let tensors = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        GeneratorParams::from_parts(config.clone(), tensors).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = small_config();
        let a = init_params(&config).unwrap();
        let b = init_params(&config).unwrap();
        assert_eq!(a, b);

        let other = GeneratorConfig { seed: 12, ..config };
        let c = init_params(&other).unwrap();
        assert_ne!(a.tensors()[0].1, c.tensors()[0].1);
    }

    #[test]
    fn layer_count_follows_output_size() {
        for (size, layers) in [(8, 1), (16, 2), (32, 3), (64, 4)] {
            let config = GeneratorConfig {
                output_size: size,
                ..small_config()
            };
            assert_eq!(config.num_layers(), layers);
            let kernels = config
                .param_shapes()
                .iter()
                .filter(|(n, _)| n.ends_with(".kernel"))
                .count();
            assert_eq!(kernels, layers);
        }
    }

    #[test]
    fn zero_params_zero_latent_give_zero_patch() {
        let config = small_config();
        let params = zeroed_params(&config);
        let z = LatentCode::new(vec![0.0; config.latent_dim]);
        let patch = forward(&params, &z, ConditionLabel::Background).unwrap();
        assert!(patch.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_and_range_across_config_grid() {
        for size in [8, 16, 32, 64] {
            for channels in [1, 3] {
                let config = GeneratorConfig {
                    latent_dim: 4,
                    output_size: size,
                    channels,
                    base_feat: 8,
                    seed: 5,
                };
                let params = init_params(&config).unwrap();
                let z = LatentCode::new(vec![0.3; 4]);
                let patch = forward(&params, &z, ConditionLabel::Foreground).unwrap();
                assert_eq!(patch.tensor().shape(), &[channels, size, size]);
                assert!(patch.tensor().data().iter().all(|&v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn condition_flip_changes_output() {
        let params = init_params(&small_config()).unwrap();
        let z = LatentCode::new(vec![0.2, -0.4, 0.1]);
        let bg = forward(&params, &z, ConditionLabel::Background).unwrap();
        let fg = forward(&params, &z, ConditionLabel::Foreground).unwrap();
        let dist = ops::l1_loss(bg.tensor(), fg.tensor()).unwrap();
        assert!(dist > 0.0, "condition input had no effect");
    }

    #[test]
    fn latent_length_mismatch_is_rejected() {
        let params = init_params(&small_config()).unwrap();
        let z = LatentCode::new(vec![0.0; 5]);
        assert!(forward(&params, &z, ConditionLabel::Background).is_err());
    }

    #[test]
    fn batch_matches_single_calls_bitwise() {
        let params = init_params(&small_config()).unwrap();
        let latents: Vec<LatentCode> = (0..8)
            .map(|i| LatentCode::new(vec![0.1 * i as f64, -0.05 * i as f64, 0.02]))
            .collect();
        let conditions: Vec<ConditionLabel> = (0..8)
            .map(|i| {
                if i % 2 == 0 {
                    ConditionLabel::Background
                } else {
                    ConditionLabel::Foreground
                }
            })
            .collect();
        let batch = forward_batch(&params, &latents, &conditions).unwrap();
        for ((z, &c), got) in latents.iter().zip(&conditions).zip(&batch) {
            assert_eq!(got, &forward(&params, z, c).unwrap());
        }
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        // Small generator, a few coordinates of both a kernel and the latent.
        let config = small_config();
        let params = init_params(&config).unwrap();
        let z0 = vec![0.31, -0.22, 0.45];
        let target = {
            let other = init_params(&GeneratorConfig { seed: 99, ..config.clone() }).unwrap();
            forward(&other, &LatentCode::new(vec![0.5, 0.1, -0.3]), ConditionLabel::Foreground)
                .unwrap()
        };

        let mut graph = Graph::new();
        let nodes = register_params(&mut graph, &params, true).unwrap();
        let zn = graph.leaf("z", Tensor::vector(&z0)).unwrap();
        let out = forward_nodes(&mut graph, &config, &nodes, zn, ConditionLabel::Background).unwrap();
        let tn = graph.constant(target.tensor().clone());
        let loss = graph.l1_loss(out, tn).unwrap();
        let grads = graph.backward(loss, &["z", "deconv0.kernel"]).unwrap();

        let eval_z = |z: &[f64]| {
            let p = forward(&params, &LatentCode::new(z.to_vec()), ConditionLabel::Background).unwrap();
            ops::l1_loss(p.tensor(), target.tensor()).unwrap()
        };
        let report = finite_diff_check(eval_z, &z0, grads.get("z").unwrap().data(), &[], 1e-5, 1e-3);
        assert!(report.passed, "latent gradient: {}", report.summary());

        let kernel0 = params.get("deconv0.kernel").unwrap().clone();
        let eval_k = |k: &[f64]| {
            let mut tensors: Vec<(String, Tensor)> = params.tensors().to_vec();
            for (name, t) in &mut tensors {
                if name == "deconv0.kernel" {
                    *t = Tensor::from_vec(kernel0.shape(), k.to_vec()).unwrap();
                }
            }
            let p2 = GeneratorParams::from_parts(config.clone(), tensors).unwrap();
            let patch = forward(&p2, &LatentCode::new(z0.clone()), ConditionLabel::Background).unwrap();
            ops::l1_loss(patch.tensor(), target.tensor()).unwrap()
        };
        let coords = [0usize, 7, 19, 33, 60];
        let report = finite_diff_check(
            eval_k,
            kernel0.data(),
            grads.get("deconv0.kernel").unwrap().data(),
            &coords,
            1e-5,
            1e-3,
        );
        assert!(report.passed, "kernel gradient: {}", report.summary());
    }
}
