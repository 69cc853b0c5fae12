//! Parameter storage and the small layers the networks are built from.
//!
//! Layers are plain descriptions (names and sizes). Their tensors live in a
//! [`ParamStore`] keyed by canonical dotted names such as
//! `encoder.stage1.conv1.weight`; a forward pass binds the store to a
//! [`Graph`] through [`Ctx`].

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use std::cell::RefCell;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// Uniform on `[-a, a]`.
    Uniform(f64),
    /// Identity convolution kernel: a unit centre tap from each input
    /// channel to the same output channel.
    Dirac,
}

fn dirac<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let [cout, cin, kh, kw] = shape else {
        panic!("identity init needs a conv kernel shape, got {shape:?}");
    };
    let mut t = Tensor::zeros(shape.to_vec());
    for c in 0..*cout.min(cin) {
        t.data_mut()[((c * cin + c) * kh + kh / 2) * kw + kw / 2] = T::one();
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn param_specs(&self, out: &mut Vec<ParamSpec>);

    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        self.param_specs(&mut v);
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    /// Draws every parameter in declaration order.
    pub fn init<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        for s in specs {
            let t = match s.init {
                Init::Zeros => Tensor::zeros(s.shape.clone()),
                Init::Ones => Tensor::ones(s.shape.clone()),
                Init::Normal(std) => Tensor::randn(s.shape.clone(), std, rng),
                Init::Uniform(a) => Tensor::uniform(s.shape.clone(), -a, a, rng),
                Init::Dirac => dirac(&s.shape),
            };
            store.params.insert(s.name.clone(), t);
        }
        store
    }

    /// Checks names and shapes against the declared specs.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            match self.params.get(&s.name) {
                None => {
                    return Err(Error::Checkpoint(format!(
                        "missing parameter `{}`",
                        s.name
                    )))
                }
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::ParamShape {
                        name: s.name.clone(),
                        expected: s.shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if self.params.len() != specs.len() {
            let declared: std::collections::BTreeSet<&str> =
                specs.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.params.keys().find(|k| !declared.contains(k.as_str())) {
                return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Sets every parameter whose name matches `pred` to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, t) in self.params.iter_mut() {
            if pred(name) {
                t.data_mut().fill(T::zero());
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Parameter gradients keyed by name.
pub type ParamGrads<T> = BTreeMap<String, Tensor<T>>;

/// A parameter store bound to a graph for one forward pass.
pub struct Ctx<'g, T: Scalar> {
    graph: &'g Graph<T>,
    store: &'g ParamStore<T>,
    bound: RefCell<BTreeMap<String, Var<'g, T>>>,
}

impl<'g, T: Scalar> Ctx<'g, T> {
    pub fn new(graph: &'g Graph<T>, store: &'g ParamStore<T>) -> Self {
        Ctx {
            graph,
            store,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    /// The named parameter as a graph leaf (bound once per pass).
    pub fn param(&self, name: &str) -> Var<'g, T> {
        if let Some(v) = self.bound.borrow().get(name) {
            return v.clone();
        }
        let t = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not in store"))
            .clone();
        let v = if self.graph.is_recording() {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v.clone());
        v
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'g, T> {
        self.graph.constant(t)
    }

    /// Gradients of every parameter used in this pass; unused parameters
    /// are absent.
    pub fn param_grads(&self, grads: &Gradients<T>) -> ParamGrads<T> {
        self.bound
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), grads.wrt(v)))
            .collect()
    }
}

fn join(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

/// 2-D convolution with bias, "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub identity_init: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Conv2d {
            name: name.into(),
            cin,
            cout,
            kernel,
            identity_init: false,
        }
    }

    /// Starts as the identity map (requires `cin == cout` and an odd kernel).
    pub fn identity_initialized(mut self) -> Self {
        assert!(self.cin == self.cout && self.kernel % 2 == 1);
        self.identity_init = true;
        self
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let w = cx.param(&join(&self.name, "weight"));
        let b = cx.param(&join(&self.name, "bias"));
        x.conv2d(&w, Some(&b))
    }

    /// Multiply–accumulates at `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (h * w * self.cout * self.cin * self.kernel * self.kernel) as u64
    }
}

impl Module for Conv2d {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = (self.cin * self.kernel * self.kernel) as f64;
        out.push(ParamSpec {
            name: join(&self.name, "weight"),
            shape: vec![self.cout, self.cin, self.kernel, self.kernel],
            init: if self.identity_init {
                Init::Dirac
            } else {
                Init::Normal((2.0 / fan_in).sqrt())
            },
        });
        out.push(ParamSpec {
            name: join(&self.name, "bias"),
            shape: vec![self.cout],
            init: Init::Zeros,
        });
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
}

pub const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(name: impl Into<String>, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "group norm: {channels} channels not divisible by {groups} groups"
            )));
        }
        Ok(GroupNorm {
            name: name.into(),
            channels,
            groups,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let g = cx.param(&join(&self.name, "weight"));
        let b = cx.param(&join(&self.name, "bias"));
        x.group_norm(self.groups, &g, &b, T::lit(NORM_EPS))
    }
}

impl Module for GroupNorm {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: join(&self.name, "weight"),
            shape: vec![self.channels],
            init: Init::Ones,
        });
        out.push(ParamSpec {
            name: join(&self.name, "bias"),
            shape: vec![self.channels],
            init: Init::Zeros,
        });
    }
}

/// Token-wise affine map, weight stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub bias: bool,
    pub zero_init: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Linear {
            name: name.into(),
            input,
            output,
            bias: true,
            zero_init: false,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn zero_initialized(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn weight_name(&self) -> String {
        join(&self.name, "weight")
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let w = cx.param(&self.weight_name());
        if self.bias {
            let b = cx.param(&join(&self.name, "bias"));
            x.linear(&w, Some(&b))
        } else {
            x.linear(&w, None)
        }
    }

    pub fn macs(&self, tokens: usize) -> u64 {
        (tokens * self.input * self.output) as u64
    }
}

impl Module for Linear {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        let limit = (6.0 / (self.input + self.output) as f64).sqrt();
        out.push(ParamSpec {
            name: self.weight_name(),
            shape: vec![self.input, self.output],
            init: if self.zero_init {
                Init::Zeros
            } else {
                Init::Uniform(limit)
            },
        });
        if self.bias {
            out.push(ParamSpec {
                name: join(&self.name, "bias"),
                shape: vec![self.output],
                init: Init::Zeros,
            });
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        LayerNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let g = cx.param(&join(&self.name, "weight"));
        let b = cx.param(&join(&self.name, "bias"));
        x.layer_norm(&g, &b, T::lit(NORM_EPS))
    }
}

impl Module for LayerNorm {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: join(&self.name, "weight"),
            shape: vec![self.channels],
            init: Init::Ones,
        });
        out.push(ParamSpec {
            name: join(&self.name, "bias"),
            shape: vec![self.channels],
            init: Init::Zeros,
        });
    }
}

/// Two linear maps with a GELU between; `fc2` is the output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(name: &str, channels: usize, ratio: usize) -> Self {
        Mlp {
            fc1: Linear::new(join(name, "fc1"), channels, channels * ratio),
            fc2: Linear::new(join(name, "fc2"), channels * ratio, channels),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        self.fc2.forward(cx, &self.fc1.forward(cx, x).gelu())
    }

    pub fn macs(&self, tokens: usize) -> u64 {
        self.fc1.macs(tokens) + self.fc2.macs(tokens)
    }
}

impl Module for Mlp {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.fc1.param_specs(out);
        self.fc2.param_specs(out);
    }
}
