use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Layer widths and skip wiring.
///
/// Neuron layers are numbered from 1 (the input). A layer listed in
/// `skip_layers` receives the raw input concatenated after the previous
/// layer's activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub skip_layers: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            widths: vec![7, 512, 256, 128, 1],
            skip_layers: vec![3, 4, 5],
            leaky_slope: 0.01,
        }
    }
}

impl MlpSpec {
    pub fn with_widths(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Parameter(format!("invalid widths {:?}", self.widths)));
        }
        if self.widths[n - 1] != 1 {
            return Err(Error::Parameter("output width must be 1".into()));
        }
        if let Some(&bad) = self.skip_layers.iter().find(|&&l| l < 3 || l > n) {
            return Err(Error::Parameter(format!(
                "skip layer {bad} outside 3..={n}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Whether linear map `l` (0-based) takes the raw input as well.
    fn skips_into(&self, l: usize) -> bool {
        self.skip_layers.contains(&(l + 2))
    }

    /// Input width of linear map `l`.
    pub fn fan_in(&self, l: usize) -> usize {
        self.widths[l] + if self.skips_into(l) { self.widths[0] } else { 0 }
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Weight (`out x in`) and bias of one linear map. Also used for gradients
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

impl OccupancyMlp {
    /// Fan-in scaled uniform initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..spec.layer_count())
            .map(|l| {
                let (out, inp) = (spec.widths[l + 1], spec.fan_in(l));
                let bound = 1.0 / (inp as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..bound));
                let bias = Array1::from_shape_simple_fn(out, || rng.random_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.layer_count())
            .map(|l| Layer::zeros(spec.widths[l + 1], spec.fan_in(l)))
            .collect();
        Ok(Self { spec, layers })
    }

    /// Assembles a network from explicit layers, checking their shapes.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layer_count() {
            return Err(Error::Parameter(format!(
                "{} layers for {} linear maps",
                layers.len(),
                spec.layer_count()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let want = (spec.widths[l + 1], spec.fan_in(l));
            if layer.weight.dim() != want || layer.bias.len() != want.0 {
                return Err(Error::Parameter(format!(
                    "layer {l} has shape {:?}, expected {want:?}",
                    layer.weight.dim()
                )));
            }
        }
        let net = Self { spec, layers };
        if !net.is_finite() {
            return Err(Error::Parameter("non-finite network parameters".into()));
        }
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::Evaluation(format!(
                "feature dimension {} != {}",
                x.ncols(),
                self.spec.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("non-finite feature".into()));
        }
        Ok(())
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.spec.leaky_slope * z
        }
    }

    /// Runs the network, keeping each linear map's input and
    /// pre-activation.
    fn forward_cached(&self, x: ArrayView2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array1<f64>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l > 0 && self.spec.skips_into(l) {
                concatenate(Axis(1), &[h.view(), x]).expect("row counts agree")
            } else {
                h
            };
            let z = input.dot(&layer.weight.t()) + &layer.bias;
            h = if l == last {
                z.mapv(sigmoid)
            } else {
                z.mapv(|v| self.leaky(v))
            };
            inputs.push(input);
            pre.push(z);
        }
        (inputs, pre, h.column(0).to_owned())
    }

    /// Occupancy in (0, 1) for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&x)?;
        if x.nrows() == 0 {
            return Ok(Array1::zeros(0));
        }
        Ok(self.forward_cached(x).2)
    }

    pub fn forward(&self, feature: &[f64]) -> Result<f64> {
        let x = ArrayView2::from_shape((1, feature.len()), feature)
            .map_err(|e| Error::Evaluation(e.to_string()))?;
        Ok(self.forward_batch(x)?[0])
    }

    /// Mean squared error against `labels` and its gradient with respect
    /// to every layer.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[f64]) -> Result<(f64, Vec<Layer>)> {
        self.check_input(&x)?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Parameter("empty training batch".into()));
        }
        if labels.len() != n {
            return Err(Error::Parameter(format!(
                "{} labels for {n} samples",
                labels.len()
            )));
        }
        let (inputs, pre, y) = self.forward_cached(x);
        let mut mse = 0.0;
        let last = self.layers.len() - 1;
        let mut delta = Array2::zeros((n, 1));
        for (i, (&yi, &ti)) in y.iter().zip(labels).enumerate() {
            let r = yi - ti;
            mse += r * r;
            delta[[i, 0]] = 2.0 * r / n as f64 * yi * (1.0 - yi);
        }
        mse /= n as f64;

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let weight = delta.t().dot(&inputs[l]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weight, bias });
            if l == 0 {
                break;
            }
            let d_input = delta.dot(&layer.weight);
            let width = self.spec.widths[l];
            let slope = self.spec.leaky_slope;
            let mut d_h = d_input.slice(s![.., ..width]).to_owned();
            d_h.zip_mut_with(&pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d *= slope;
                }
            });
            delta = d_h;
        }
        grads.reverse();
        Ok((mse, grads))
    }
}
