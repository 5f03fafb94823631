use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// How a layer's weights start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)` weights, zero bias.
    FanIn,
    Zero,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.gen_range(-bound..bound)))
}

pub(crate) struct Registrar<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: ChaCha8Rng,
    pub prefix: String,
    pub ids: Vec<ParamId>,
}

impl<T: Scalar> Registrar<'_, T> {
    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, AutodiffError> {
        let id = self.store.add(format!("{}/{}", self.prefix, name), value)?;
        self.ids.push(id);
        Ok(id)
    }

    fn weights(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> Result<ParamId, AutodiffError> {
        let value = match init {
            Init::FanIn => uniform(&mut self.rng, shape, 1.0 / (fan_in as f64).sqrt()),
            Init::Zero => Tensor::zeros(shape.to_vec()),
        };
        self.add(name, value)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(r: &mut Registrar<'_, T>, name: &str, fan_in: usize, out: usize, init: Init) -> Result<Self, AutodiffError> {
        let w = r.weights(&format!("{name}.w"), &[fan_in, out], fan_in, init)?;
        let b = r.add(&format!("{name}.b"), Tensor::zeros(vec![out]))?;
        Ok(Self { w, b })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        let y = g.matmul(x, g.param(store, self.w))?;
        g.add_row(y, g.param(store, self.b))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub k: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn new<T: Scalar>(r: &mut Registrar<'_, T>, name: &str, size: usize, cin: usize, cout: usize) -> Result<Self, AutodiffError> {
        let fan_in = size * size * cin;
        let k = r.weights(&format!("{name}.k"), &[size, size, cin, cout], fan_in, Init::FanIn)?;
        let b = r.add(&format!("{name}.b"), Tensor::zeros(vec![cout]))?;
        Ok(Self { k, b })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        g.conv2d(x, g.param(store, self.k), g.param(store, self.b))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<T: Scalar>(r: &mut Registrar<'_, T>, name: &str, input: usize, hidden: usize) -> Result<Self, AutodiffError> {
        let w_ih = r.weights(&format!("{name}.w_ih"), &[input, 4 * hidden], hidden, Init::FanIn)?;
        let w_hh = r.weights(&format!("{name}.w_hh"), &[hidden, 4 * hidden], hidden, Init::FanIn)?;
        let b = r.add(&format!("{name}.b"), Tensor::zeros(vec![4 * hidden]))?;
        Ok(Self { w_ih, w_hh, b, hidden })
    }

    /// Runs the layer over `steps`, returning the hidden state at each step.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, steps: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let batch = match steps.first() {
            Some(&x) => g.shape(x)[0],
            None => return Ok(Vec::new()),
        };
        let zeros = g.constant(Tensor::zeros(vec![batch, self.hidden]));
        let (mut h, mut c) = (zeros, zeros);
        let (w_ih, w_hh, b) = (g.param(store, self.w_ih), g.param(store, self.w_hh), g.param(store, self.b));
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            let hc = g.lstm_cell(x, h, c, w_ih, w_hh, b)?;
            h = g.slice(hc, 1, 0, self.hidden)?;
            c = g.slice(hc, 1, self.hidden, self.hidden)?;
            out.push(h);
        }
        Ok(out)
    }
}
