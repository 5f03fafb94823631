//! Candidate models for both sub-tasks.
//!
//! Task1 models map each tau candidate's normalized jet `(pt, eta, phi, m)`
//! and its three 16×16 images to a calibrated `(pt, eta, phi)`. Both
//! candidates of an event go through the same parameters. Task2 models map
//! the six calibrated values of an event to one H-vs-Z logit.

mod layers;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::datagen::{IMAGE_PIXELS, IMAGE_SIDE, TAU_MASS};
use crate::seed::derive_seed;
use layers::{Conv, Dense, Init, LstmLayer, Registrar};

pub const TASK1_OUTPUTS: usize = 6;
const HIDDEN_LSTM: usize = 32;
const MASS_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model {kind} is not a {task} candidate")]
    WrongTask { kind: ModelKind, task: Task },
    #[error("LSTM expects 2 time steps, got {0}")]
    SequenceLength(usize),
    #[error("unphysical system mass: squared mass {0}")]
    Unphysical(f64),
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "task1")]
    Task1,
    #[serde(rename = "task2")]
    Task2,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Task1 => "Task1",
            Task::Task2 => "Task2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Mlp1,
    Cnn1,
    Sf,
    Mlp2,
    Lstm2,
    Mass,
    Zeros,
    Noise,
}

impl ModelKind {
    pub const TASK1: [ModelKind; 3] = [ModelKind::Mlp1, ModelKind::Cnn1, ModelKind::Sf];
    pub const TASK2: [ModelKind; 3] = [ModelKind::Mlp2, ModelKind::Lstm2, ModelKind::Mass];
    pub const DUMMIES: [ModelKind; 2] = [ModelKind::Zeros, ModelKind::Noise];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp1 => "MLP1",
            ModelKind::Cnn1 => "CNN1",
            ModelKind::Sf => "SF",
            ModelKind::Mlp2 => "MLP2",
            ModelKind::Lstm2 => "LSTM2",
            ModelKind::Mass => "MASS",
            ModelKind::Zeros => "ZEROS",
            ModelKind::Noise => "NOISE",
        }
    }

    pub fn is_dummy(self) -> bool {
        matches!(self, ModelKind::Zeros | ModelKind::Noise)
    }

    pub fn valid_for(self, task: Task) -> bool {
        self.is_dummy()
            || match task {
                Task::Task1 => Self::TASK1.contains(&self),
                Task::Task2 => Self::TASK2.contains(&self),
            }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::TASK1, Self::TASK2].concat().into_iter().chain(Self::DUMMIES)
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: Task,
    pub kind: ModelKind,
    pub replica: usize,
    pub seed: u64,
}

impl ModelSpec {
    /// Init seed is derived from the run seed, the kind and the replica index.
    pub fn new(task: Task, kind: ModelKind, replica: usize, run_seed: u64) -> Result<Self, ModelError> {
        if !kind.valid_for(task) {
            return Err(ModelError::WrongTask { kind, task });
        }
        let seed = derive_seed(run_seed, &format!("{task}/{kind}/{replica}"));
        Ok(Self { task, kind, replica, seed })
    }

    /// Human-readable id: the kind, plus `#r` for replicas beyond the first.
    pub fn id(&self) -> String {
        if self.replica == 0 {
            self.kind.name().to_string()
        } else {
            format!("{}#{}", self.kind.name(), self.replica)
        }
    }

    fn prefix(&self) -> String {
        let t = match self.task {
            Task::Task1 => "t1",
            Task::Task2 => "t2",
        };
        format!("{t}.{}", self.id())
    }
}

/// `k` copies of every base spec with replica indices `0..k`, each with its
/// own init seed.
pub fn replicate_models(base: &[ModelSpec], k: usize, run_seed: u64) -> Result<Vec<ModelSpec>, ModelError> {
    let mut out = Vec::with_capacity(base.len() * k);
    for r in 0..k.max(1) {
        for spec in base {
            if r == 0 {
                out.push(*spec);
            } else {
                out.push(ModelSpec::new(spec.task, spec.kind, r, run_seed)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Arch {
    Mlp1 { feature: [Dense; 2], correction: [Dense; 2] },
    Cnn1 { conv: [Conv; 2], feature: Dense, correction: [Dense; 2] },
    Sf { a: ParamId, b: ParamId },
    Mlp2 { layers: [Dense; 4] },
    Lstm2 { cells: [LstmLayer; 3], head: Dense },
    Mass { layers: [Dense; 3] },
    Zeros,
    Noise,
}

/// Task1 inputs for a batch of `B` events, candidates interleaved so row
/// `2b + k` is candidate `k` of event `b`.
#[derive(Debug, Clone, Copy)]
pub struct Task1Input {
    /// `[2B, 4]` normalized jet features.
    pub jets: Var,
    /// `[2B, 16, 16, 3]` images, channels tracker/EM/hadronic.
    pub images: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    arch: Arch,
    params: Vec<ParamId>,
}

impl Model {
    /// Registers the model's parameters in `store` and initialises them
    /// from the ModelSpec seed.
    pub fn build<T: Scalar>(spec: ModelSpec, store: &mut ParamStore<T>) -> Result<Self, ModelError> {
        if !spec.kind.valid_for(spec.task) {
            return Err(ModelError::WrongTask {
                kind: spec.kind,
                task: spec.task,
            });
        }
        let mut r = Registrar {
            store,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            prefix: spec.prefix(),
            ids: Vec::new(),
        };
        let correction = |r: &mut Registrar<'_, T>| -> Result<[Dense; 2], AutodiffError> {
            Ok([
                Dense::new(r, "corr0", 4 + 64, 64, Init::FanIn)?,
                Dense::new(r, "residual", 64, 3, Init::Zero)?,
            ])
        };
        let arch = match spec.kind {
            ModelKind::Mlp1 => {
                let feature = [
                    Dense::new(&mut r, "feat0", 3 * IMAGE_PIXELS, 128, Init::FanIn)?,
                    Dense::new(&mut r, "feat1", 128, 64, Init::FanIn)?,
                ];
                Arch::Mlp1 {
                    feature,
                    correction: correction(&mut r)?,
                }
            }
            ModelKind::Cnn1 => {
                let conv = [Conv::new(&mut r, "conv0", 3, 3, 16)?, Conv::new(&mut r, "conv1", 3, 16, 32)?];
                let flat = (IMAGE_SIDE / 4) * (IMAGE_SIDE / 4) * 32;
                let feature = Dense::new(&mut r, "feat", flat, 64, Init::FanIn)?;
                Arch::Cnn1 {
                    conv,
                    feature,
                    correction: correction(&mut r)?,
                }
            }
            ModelKind::Sf => {
                let a = r.add("a", Tensor::full(vec![1, 3], T::one()))?;
                let b = r.add("b", Tensor::zeros(vec![3]))?;
                Arch::Sf { a, b }
            }
            ModelKind::Mlp2 => Arch::Mlp2 {
                layers: [
                    Dense::new(&mut r, "dense0", TASK1_OUTPUTS, 32, Init::FanIn)?,
                    Dense::new(&mut r, "dense1", 32, 32, Init::FanIn)?,
                    Dense::new(&mut r, "dense2", 32, 32, Init::FanIn)?,
                    Dense::new(&mut r, "logit", 32, 1, Init::Zero)?,
                ],
            },
            ModelKind::Lstm2 => Arch::Lstm2 {
                cells: [
                    LstmLayer::new(&mut r, "lstm0", 3, HIDDEN_LSTM)?,
                    LstmLayer::new(&mut r, "lstm1", HIDDEN_LSTM, HIDDEN_LSTM)?,
                    LstmLayer::new(&mut r, "lstm2", HIDDEN_LSTM, HIDDEN_LSTM)?,
                ],
                head: Dense::new(&mut r, "logit", HIDDEN_LSTM, 1, Init::Zero)?,
            },
            ModelKind::Mass => Arch::Mass {
                layers: [
                    Dense::new(&mut r, "dense0", 1, 64, Init::FanIn)?,
                    Dense::new(&mut r, "dense1", 64, 64, Init::FanIn)?,
                    Dense::new(&mut r, "logit", 64, 1, Init::Zero)?,
                ],
            },
            ModelKind::Zeros => Arch::Zeros,
            ModelKind::Noise => Arch::Noise,
        };
        let params = r.ids;
        Ok(Self { spec, arch, params })
    }

    pub fn id(&self) -> String {
        self.spec.id()
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn task(&self) -> Task {
        self.spec.task
    }

    /// Trainable parameters in registration order; empty for dummies.
    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn n_params<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.count(&self.params)
    }

    /// Calibrated `[B, 6]` output `(pt₁, eta₁, phi₁, pt₂, eta₂, phi₂)`.
    pub fn forward_task1<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        input: Task1Input,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var, ModelError> {
        if self.spec.task != Task::Task1 {
            return Err(ModelError::WrongTask {
                kind: self.spec.kind,
                task: Task::Task1,
            });
        }
        let rows = g.shape(input.jets)[0];
        if rows % 2 != 0 || g.shape(input.jets) != [rows, 4] {
            return Err(shape_error(g, "task1 input", format!("jets {:?}", g.shape(input.jets))));
        }
        let events = rows / 2;
        let out = match &self.arch {
            Arch::Mlp1 { feature, correction } => {
                let flat = g.reshape(input.images, &[rows, 3 * IMAGE_PIXELS])?;
                let h = g.relu(feature[0].forward(g, store, flat)?)?;
                let h = g.relu(feature[1].forward(g, store, h)?)?;
                residual_output(g, store, input.jets, h, correction)?
            }
            Arch::Cnn1 {
                conv,
                feature,
                correction,
            } => {
                let h = g.maxpool2x2(g.relu(conv[0].forward(g, store, input.images)?)?)?;
                let h = g.maxpool2x2(g.relu(conv[1].forward(g, store, h)?)?)?;
                let flat_len = g.shape(h)[1..].iter().product();
                let h = g.reshape(h, &[rows, flat_len])?;
                let h = g.relu(feature.forward(g, store, h)?)?;
                residual_output(g, store, input.jets, h, correction)?
            }
            Arch::Sf { a, b } => {
                let x = g.slice(input.jets, 1, 0, 3)?;
                let ones = g.constant(Tensor::full(vec![rows, 1], T::one()));
                let scale = g.matmul(ones, g.param(store, *a))?;
                g.add_row(g.mul(x, scale)?, g.param(store, *b))?
            }
            Arch::Zeros => return Ok(g.constant(Tensor::zeros(vec![events, TASK1_OUTPUTS]))),
            Arch::Noise => return Ok(g.constant(noise(rng, &[events, TASK1_OUTPUTS]))),
            _ => unreachable!("task checked above"),
        };
        Ok(g.reshape(out, &[events, TASK1_OUTPUTS])?)
    }

    /// `[B, 1]` logits from `[B, 6]` calibrated features.
    pub fn forward_task2<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var, ModelError> {
        if self.spec.task != Task::Task2 {
            return Err(ModelError::WrongTask {
                kind: self.spec.kind,
                task: Task::Task2,
            });
        }
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != TASK1_OUTPUTS {
            return Err(shape_error(g, "task2 input", format!("{shape:?}")));
        }
        let batch = shape[0];
        match &self.arch {
            Arch::Mlp2 { layers } => {
                let mut h = x;
                for layer in &layers[..3] {
                    h = g.relu(layer.forward(g, store, h)?)?;
                }
                Ok(layers[3].forward(g, store, h)?)
            }
            Arch::Lstm2 { .. } => {
                let steps = [g.slice(x, 1, 0, 3)?, g.slice(x, 1, 3, 3)?];
                self.lstm_sequence(g, store, &steps)
            }
            Arch::Mass { layers } => {
                let m = system_mass(g, x)?;
                let h = g.relu(layers[0].forward(g, store, m)?)?;
                let h = g.relu(layers[1].forward(g, store, h)?)?;
                Ok(layers[2].forward(g, store, h)?)
            }
            Arch::Zeros => Ok(g.constant(Tensor::zeros(vec![batch, 1]))),
            Arch::Noise => Ok(g.constant(noise(rng, &[batch, 1]))),
            _ => unreachable!("task checked above"),
        }
    }

    /// LSTM logits from a sequence of `[B, 3]` steps, leading tau first.
    pub fn lstm_sequence<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, steps: &[Var]) -> Result<Var, ModelError> {
        let Arch::Lstm2 { cells, head } = &self.arch else {
            return Err(ModelError::WrongTask {
                kind: self.spec.kind,
                task: Task::Task2,
            });
        };
        if steps.len() != 2 {
            return Err(ModelError::SequenceLength(steps.len()));
        }
        let mut seq = steps.to_vec();
        for cell in cells {
            seq = cell.forward(g, store, &seq)?;
        }
        Ok(head.forward(g, store, *seq.last().expect("two steps"))?)
    }
}

fn shape_error<T: Scalar>(g: &Graph<T>, op: &'static str, detail: String) -> ModelError {
    ModelError::Autodiff(AutodiffError::ShapeMismatch {
        node: g.len(),
        op,
        detail,
    })
}

fn noise<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::from_f64(z)
    })
}

/// `jet (pt, eta, phi) + residual(concat(jet, features))`.
fn residual_output<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    jets: Var,
    features: Var,
    correction: &[Dense; 2],
) -> Result<Var, AutodiffError> {
    let h = g.concat(&[jets, features], 1)?;
    let h = g.relu(correction[0].forward(g, store, h)?)?;
    let residual = correction[1].forward(g, store, h)?;
    g.add(g.slice(jets, 1, 0, 3)?, residual)
}

/// System mass of the two taus in `[B, 6]` normalized features, divided by
/// 100 GeV; shape `[B, 1]`. Each tau gets the tau mass attached.
pub fn system_mass<T: Scalar>(g: &Graph<T>, x: Var) -> Result<Var, ModelError> {
    let m2 = T::from_f64(TAU_MASS * TAU_MASS);
    let mut sums: Option<[Var; 4]> = None;
    for k in 0..2 {
        let pt = g.affine(g.exp(g.slice(x, 1, 3 * k, 1)?)?, T::one(), T::from_f64(-0.1))?;
        let eta = g.slice(x, 1, 3 * k + 1, 1)?;
        let phi = g.slice(x, 1, 3 * k + 2, 1)?;
        let p2 = g.mul(g.square(pt)?, g.square(g.cosh(eta)?)?)?;
        let e = g.sqrt(g.affine(p2, T::one(), m2)?)?;
        let px = g.mul(pt, g.cos(phi)?)?;
        let py = g.mul(pt, g.sin(phi)?)?;
        let pz = g.mul(pt, g.sinh(eta)?)?;
        let v = [e, px, py, pz];
        sums = Some(match sums {
            None => v,
            Some(s) => [g.add(s[0], v[0])?, g.add(s[1], v[1])?, g.add(s[2], v[2])?, g.add(s[3], v[3])?],
        });
    }
    let [e, px, py, pz] = sums.expect("two taus");
    let p2 = g.add(g.add(g.square(px)?, g.square(py)?)?, g.square(pz)?)?;
    let e2 = g.square(e)?;
    let mass2 = g.sub(e2, p2)?;
    {
        let (m2v, e2v) = (g.value(mass2), g.value(e2));
        for (&m, &e) in m2v.data().iter().zip(e2v.data()) {
            if m.as_f64() < -1e-6 * e.as_f64().max(1.0) {
                return Err(ModelError::Unphysical(m.as_f64()));
            }
        }
    }
    let mass = g.sqrt(g.max_scalar(mass2, T::from_f64(1e-12))?)?;
    Ok(g.scale(mass, T::from_f64(1.0 / MASS_SCALE))?)
}
