use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BnMode, LayerKind, NetGraph};
use crate::error::{Error, Result};
use crate::tensor::{Padding, RunningStats, Scalar, Tape, Tensor, Var};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    /// Running statistics are buffers, not trained; `counted` marks those
    /// included in the published parameter totals.
    RunningMean { counted: bool },
    RunningVar { counted: bool },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    /// Index of the owning graph node.
    pub node: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trainable(&self) -> bool {
        !matches!(self.role, ParamRole::RunningMean { .. } | ParamRole::RunningVar { .. })
    }

    /// Contribution to the parameter count.
    pub fn counted(&self) -> usize {
        match self.role {
            ParamRole::RunningMean { counted } | ParamRole::RunningVar { counted } if !counted => 0,
            _ => self.len(),
        }
    }
}

pub(crate) fn param_specs(graph: &NetGraph) -> Vec<ParamSpec> {
    let channels = graph.channels();
    let mut specs = Vec::new();
    for (i, node) in graph.nodes().iter().enumerate() {
        let l = &node.layer;
        let mut push = |name: String, shape: Vec<usize>, role| {
            specs.push(ParamSpec {
                name,
                shape,
                role,
                node: i,
            })
        };
        let cin = node.inputs.first().map(|&j| channels[j]).unwrap_or(0);
        let bn = |push: &mut dyn FnMut(String, Vec<usize>, ParamRole), prefix: &str, c: usize, mode: BnMode| {
            if mode == BnMode::None {
                return;
            }
            let counted = mode == BnMode::Tracked;
            push(format!("{prefix}.gamma"), vec![c], ParamRole::Gamma);
            push(format!("{prefix}.beta"), vec![c], ParamRole::Beta);
            push(format!("{prefix}.running_mean"), vec![c], ParamRole::RunningMean { counted });
            push(format!("{prefix}.running_var"), vec![c], ParamRole::RunningVar { counted });
        };
        match l.kind {
            LayerKind::Conv | LayerKind::DilatedConv => {
                let k = l.kernel_size;
                for r in 0..l.repeat {
                    let c = if r == 0 { cin } else { l.kernels };
                    let p = format!("{}.{r}", l.name);
                    push(
                        format!("{p}.weight"),
                        vec![l.kernels, c, k, k],
                        ParamRole::Weight { fan_in: c * k * k },
                    );
                    push(format!("{p}.bias"), vec![l.kernels], ParamRole::Bias);
                    bn(&mut push, &p, l.kernels, l.batchnorm);
                }
            }
            LayerKind::TransposeConv => {
                // k = stride = 2: every output pixel sees exactly one input
                // pixel per channel, so the effective fan-in is `cin`.
                push(
                    format!("{}.weight", l.name),
                    vec![cin, l.kernels, 2, 2],
                    ParamRole::Weight { fan_in: cin },
                );
                push(format!("{}.bias", l.name), vec![l.kernels], ParamRole::Bias);
                bn(&mut push, &l.name, l.kernels, l.batchnorm);
            }
            LayerKind::Output => {
                push(
                    format!("{}.weight", l.name),
                    vec![1, cin, 1, 1],
                    ParamRole::Weight { fan_in: cin },
                );
                push(format!("{}.bias", l.name), vec![1], ParamRole::Bias);
            }
            LayerKind::Input | LayerKind::MaxPool | LayerKind::ConcatCrop => {}
        }
    }
    specs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub spec: ParamSpec,
    pub data: Vec<T>,
}

/// Result of recording one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub output: Var,
    /// Pre-sigmoid activations of the output layer.
    pub logits: Var,
    /// Tape handle of every trainable parameter that took part, indexed like
    /// [`Network::params`]; `None` for buffers and pruned nodes.
    pub params: Vec<Option<Var>>,
}

/// A graph together with its parameter values.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    graph: NetGraph,
    params: Vec<Param<T>>,
}

impl<T: Scalar> Network<T> {
    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases, unit
    /// gamma; reproducible per seed.
    pub fn new(graph: NetGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_specs(&graph)
            .into_iter()
            .map(|spec| {
                let n = spec.len();
                let data = match spec.role {
                    ParamRole::Weight { fan_in } => {
                        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                        (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect()
                    }
                    ParamRole::Gamma | ParamRole::RunningVar { .. } => vec![T::one(); n],
                    _ => vec![T::zero(); n],
                };
                Param { spec, data }
            })
            .collect();
        Self { graph, params }
    }

    /// Wraps existing values; they must match the graph's layout exactly.
    pub fn from_params(graph: NetGraph, values: Vec<Vec<T>>) -> Result<Self> {
        let specs = param_specs(&graph);
        if specs.len() != values.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors expected, got {}",
                specs.len(),
                values.len()
            )));
        }
        let params = specs
            .into_iter()
            .zip(values)
            .map(|(spec, data)| {
                if data.len() != spec.len() {
                    return Err(Error::shape(format!("{}: {} values for {:?}", spec.name, data.len(), spec.shape)));
                }
                Ok(Param { spec, data })
            })
            .collect::<Result<_>>()?;
        Ok(Self { graph, params })
    }

    pub fn graph(&self) -> &NetGraph {
        &self.graph
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn count_params(&self) -> u64 {
        self.graph.count_params()
    }

    pub fn output_extent(&self) -> usize {
        super::shape_trace(&self.graph, self.graph.config.input_extent)
            .map(|t| t.output_extent())
            .expect("graph was validated at build time")
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            graph: self.graph.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    spec: p.spec.clone(),
                    data: p.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    fn leaf(&self, tape: &mut Tape<T>, i: usize, track: bool, handles: &mut [Option<Var>]) -> Var {
        let p = &self.params[i];
        let mut t = Tensor::new(&p.spec.shape, p.data.clone()).expect("spec shape");
        if track {
            t = t.with_grad();
        }
        let v = tape.leaf(t);
        handles[i] = Some(v);
        v
    }

    /// Records conv/transpose output -> batchnorm (if any); returns the
    /// normalized value and the index of the next parameter.
    #[allow(clippy::too_many_arguments)]
    fn maybe_bn(
        &mut self,
        tape: &mut Tape<T>,
        y: Var,
        next: usize,
        mode: BnMode,
        training: bool,
        handles: &mut [Option<Var>],
    ) -> Result<(Var, usize)> {
        if mode == BnMode::None {
            return Ok((y, next));
        }
        let gamma = self.leaf(tape, next, training, handles);
        let beta = self.leaf(tape, next + 1, training, handles);
        handles[next + 2] = None;
        handles[next + 3] = None;
        let mut stats = RunningStats {
            mean: std::mem::take(&mut self.params[next + 2].data),
            var: std::mem::take(&mut self.params[next + 3].data),
        };
        let out = tape.batchnorm2d(
            y,
            gamma,
            beta,
            &mut stats,
            T::lit(BN_MOMENTUM),
            T::lit(BN_EPS),
            training,
        );
        self.params[next + 2].data = stats.mean;
        self.params[next + 3].data = stats.var;
        Ok((out?, next + 4))
    }

    /// Records a forward pass on `tape`. `x` must be `N x 1 x E x E` with
    /// `E` the configured input extent. In training mode parameters are
    /// recorded as differentiable leaves, batchnorm uses batch statistics
    /// (and updates the running ones) and dropout is active.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardPass> {
        let e = self.graph.config.input_extent;
        let shape = tape.value(x).shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != e || shape[3] != e {
            return Err(Error::shape(format!("expected N x 1 x {e} x {e} input, got {shape:?}")));
        }
        let live = self.graph.reachable();
        let mut handles = vec![None; self.params.len()];
        let mut first_param = vec![usize::MAX; self.graph.nodes().len()];
        for (i, p) in self.params.iter().enumerate().rev() {
            first_param[p.spec.node] = i;
        }
        let mut values: Vec<Option<Var>> = vec![None; self.graph.nodes().len()];
        let mut logits = None;
        let nodes = self.graph.nodes().to_vec();
        for (i, node) in nodes.iter().enumerate() {
            if !live[i] {
                continue;
            }
            let l = &node.layer;
            let input = |k: usize| values[node.inputs[k]].expect("inputs precede consumers");
            let mut next = first_param[i];
            let out = match l.kind {
                LayerKind::Input => x,
                LayerKind::Conv | LayerKind::DilatedConv => {
                    let mut cur = input(0);
                    for _ in 0..l.repeat {
                        let w = self.leaf(tape, next, training, &mut handles);
                        let b = self.leaf(tape, next + 1, training, &mut handles);
                        let y = tape.conv2d(cur, w, Some(b), l.dilation, Padding::Valid)?;
                        let (y, n) = self.maybe_bn(tape, y, next + 2, l.batchnorm, training, &mut handles)?;
                        next = n;
                        let y = tape.relu(y);
                        cur = tape.dropout(y, l.dropout, training, rng)?;
                    }
                    cur
                }
                LayerKind::MaxPool => {
                    let v = input(0);
                    let [_, _, h, w] = tape.value(v).dims4()?;
                    let v = tape.crop(v, 0, 0, h - h % 2, w - w % 2)?;
                    tape.maxpool2d(v)?
                }
                LayerKind::TransposeConv => {
                    let w = self.leaf(tape, next, training, &mut handles);
                    let b = self.leaf(tape, next + 1, training, &mut handles);
                    let y = tape.conv_transpose(input(0), w, Some(b), 2)?;
                    self.maybe_bn(tape, y, next + 2, l.batchnorm, training, &mut handles)?.0
                }
                LayerKind::ConcatCrop => {
                    let srcs: Vec<Var> = (0..node.inputs.len()).map(input).collect();
                    tape.concat_crop(&srcs)?
                }
                LayerKind::Output => {
                    let w = self.leaf(tape, next, training, &mut handles);
                    let b = self.leaf(tape, next + 1, training, &mut handles);
                    let y = tape.conv2d(input(0), w, Some(b), 1, Padding::Valid)?;
                    logits = Some(y);
                    tape.sigmoid(y)
                }
            };
            values[i] = Some(out);
        }
        Ok(ForwardPass {
            output: values[self.graph.output()].expect("output is live"),
            logits: logits.expect("every graph ends in an output layer"),
            params: handles,
        })
    }

    /// Inference-mode prediction for a batch `N x 1 x E x E`.
    pub fn predict(&mut self, batch: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fp = self.forward(&mut tape, x, false, &mut rng)?;
        Ok(tape.value(fp.output).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchConfig, ModelKind};

    fn net(kind: ModelKind, base: usize, seed: u64) -> Network<f32> {
        let g = NetGraph::build(kind, ArchConfig::default().with_filter_base(base)).unwrap();
        Network::new(g, seed)
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = net(ModelKind::BowNet, 4, 7);
        let b = net(ModelKind::BowNet, 4, 7);
        let c = net(ModelKind::BowNet, 4, 8);
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn he_init_spread() {
        let g = NetGraph::build(ModelKind::BowNet, ArchConfig::default()).unwrap();
        let n: Network<f64> = Network::new(g, 3);
        // CONV-6 of the full-size BowNet: 64 kernels over a 128-channel concat.
        let p = n.params().iter().find(|p| p.spec.name == "CONV-6.0.weight").unwrap();
        let fan_in = 128.0 * 9.0;
        let m = p.data.iter().sum::<f64>() / p.data.len() as f64;
        let var = p.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (p.data.len() - 1) as f64;
        let expected = (2.0f64 / fan_in).sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.1);
    }

    #[test]
    fn forward_shapes_for_all_kinds() {
        for k in ModelKind::ALL {
            let mut n = net(k, 2, 1);
            let out = n.predict(Tensor::zeros(&[2, 1, 128, 128])).unwrap();
            assert_eq!(out.shape(), &[2, 1, 82, 82], "{k}");
            assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_input_gives_half() {
        let mut n = net(ModelKind::WBowNet, 2, 1);
        let out = n.predict(Tensor::zeros(&[1, 1, 128, 128])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let mut n = net(ModelKind::SUNet, 2, 1);
        assert!(n.predict(Tensor::zeros(&[1, 1, 64, 64])).is_err());
        assert!(n.predict(Tensor::zeros(&[1, 2, 128, 128])).is_err());
    }

    #[test]
    fn pruned_parameters_get_no_handle() {
        let mut n = net(ModelKind::WBowNet, 2, 1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 128, 128]));
        let fp = n.forward(&mut tape, x, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let d2b = n.graph().find("CONV-D2-2").unwrap();
        for (p, h) in n.params().iter().zip(&fp.params) {
            if p.spec.node == d2b || !p.spec.trainable() {
                assert!(h.is_none(), "{}", p.spec.name);
            } else {
                assert!(h.is_some(), "{}", p.spec.name);
            }
        }
    }
}
