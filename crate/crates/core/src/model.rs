//! The stacked operator: encoder, `L` pairs of (linear-attention block,
//! orthogonal-attention stage), and the final FFN acting as the projection to
//! solution channels.

use crate::attention::{Mode, OrthoAttentionLayer};
use crate::autodiff::{Tape, Tensor, Var};
use crate::blocks::{EncoderMlp, LinearAttnBlock};
use crate::linalg::DenseMatrix;
use crate::params::{Bound, ParamStore};
use crate::rng::stream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of stages `L`.
    pub layers: usize,
    /// Width `d` of the solution pathway.
    pub width: usize,
    /// Width `d′` of the feature pathway.
    pub feature_width: usize,
    /// Number of eigenmaps `k` per stage.
    pub eigen_count: usize,
    pub ema_momentum: f64,
    /// Scale the `ψᵀh` contraction by `1/M`.
    pub attn_normalization: bool,
    pub seed: u64,
    /// Coordinate dimension `d₀` of the mesh.
    pub coord_dim: usize,
    /// Input-function channels `d_f`.
    pub in_channels: usize,
    /// Solution channels `d_u`.
    pub out_channels: usize,
    pub init_std: f64,
    /// FFN activation; only `"gelu"` is implemented.
    pub activation: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 64,
            feature_width: 64,
            eigen_count: 16,
            ema_momentum: 0.1,
            attn_normalization: true,
            seed: 0,
            coord_dim: 2,
            in_channels: 1,
            out_channels: 1,
            init_std: 0.02,
            activation: "gelu".into(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("width", self.width),
            ("feature_width", self.feature_width),
            ("eigen_count", self.eigen_count),
            ("coord_dim", self.coord_dim),
            ("out_channels", self.out_channels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ema_momentum must lie in (0, 1], got {}",
                self.ema_momentum
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::InvalidConfig("init_std must be positive".into()));
        }
        if self.activation != "gelu" {
            return Err(Error::InvalidConfig(format!(
                "unsupported activation {:?}",
                self.activation
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count for this architecture.
    pub fn expected_param_count(&self) -> usize {
        let (d, dp, k) = (self.width, self.feature_width, self.eigen_count);
        let c_in = self.coord_dim + self.in_channels;
        let linear = |i: usize, o: usize, bias: bool| i * o + if bias { o } else { 0 };
        let ffn = |i: usize, o: usize| linear(i, 4 * i, true) + linear(4 * i, o, true);
        let encoder = linear(c_in, 2 * dp, true) + linear(2 * dp, dp, true) + linear(2 * dp, d, true);
        let block = 3 * dp * dp + 4 * dp + ffn(dp, dp);
        let ortho = |out: usize| dp * k + d * d + k + 2 * d + ffn(d, out);
        encoder
            + self.layers * block
            + (self.layers - 1) * ortho(d)
            + ortho(self.out_channels)
    }
}

/// Per-channel affine normalization of inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(in_channels: usize, out_channels: usize) -> Self {
        Self {
            input_mean: vec![0.0; in_channels],
            input_std: vec![1.0; in_channels],
            output_mean: vec![0.0; out_channels],
            output_std: vec![1.0; out_channels],
        }
    }

    pub fn normalize_input(&self, values: &DenseMatrix) -> DenseMatrix {
        affine(values, &self.input_mean, &self.input_std, false)
    }

    pub fn denormalize_input(&self, values: &DenseMatrix) -> DenseMatrix {
        affine(values, &self.input_mean, &self.input_std, true)
    }

    pub fn normalize_output(&self, values: &DenseMatrix) -> DenseMatrix {
        affine(values, &self.output_mean, &self.output_std, false)
    }

    pub fn denormalize_output(&self, values: &DenseMatrix) -> DenseMatrix {
        affine(values, &self.output_mean, &self.output_std, true)
    }
}

fn affine(values: &DenseMatrix, mean: &[f64], std: &[f64], inverse: bool) -> DenseMatrix {
    let mut out = values.clone();
    let c = values.cols();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        let j = idx % c;
        *v = if inverse {
            *v * std[j] + mean[j]
        } else {
            (*v - mean[j]) / std[j]
        };
    }
    out
}

/// Input function sampled on a mesh: `M x d₀` coordinates and `M x d_f` values.
#[derive(Debug, Clone, Copy)]
pub struct FieldInput<'a> {
    pub points: &'a DenseMatrix,
    pub values: &'a DenseMatrix,
}

/// One (feature block, orthogonal attention) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub block: LinearAttnBlock,
    pub ortho: OrthoAttentionLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnoModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: EncoderMlp,
    pub stages: Vec<Stage>,
    pub normalizer: Normalizer,
}

impl OnoModel {
    /// Builds a freshly initialized model from the `"init"` stream of `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, "init");
        let mut params = ParamStore::new();
        let std = config.init_std;
        let encoder = EncoderMlp::new(
            &mut params,
            &mut rng,
            config.coord_dim + config.in_channels,
            config.feature_width,
            config.width,
            std,
        );
        let mut stages = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let block = LinearAttnBlock::new(&mut params, &mut rng, &format!("stage{l}.block"), config.feature_width, std);
            let out_dim = if l + 1 == config.layers {
                config.out_channels
            } else {
                config.width
            };
            let ortho = OrthoAttentionLayer::new(
                &mut params,
                &mut rng,
                &format!("stage{l}.ortho"),
                config.feature_width,
                config.width,
                config.eigen_count,
                out_dim,
                config.ema_momentum,
                config.attn_normalization,
                std,
            )?;
            stages.push(Stage { block, ortho });
        }
        let normalizer = Normalizer::identity(config.in_channels, config.out_channels);
        Ok(Self {
            config,
            params,
            encoder,
            stages,
            normalizer,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_input(&self, input: &FieldInput<'_>) -> Result<()> {
        let (m, d0) = input.points.shape();
        if d0 != self.config.coord_dim
            || input.values.cols() != self.config.in_channels
            || input.values.rows() != m
        {
            return Err(Error::ShapeMismatch(format!(
                "input mesh {m}x{d0} with values {:?}; model expects d0={} d_f={}",
                input.values.shape(),
                self.config.coord_dim,
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// `[x_j, normalized f(x_j)]` rows.
    fn input_features(&self, points: &DenseMatrix, values: &DenseMatrix) -> Tensor {
        let nv = self.normalizer.normalize_input(values);
        let (m, d0) = points.shape();
        let dfc = nv.cols();
        let mut data = Vec::with_capacity(m * (d0 + dfc));
        for i in 0..m {
            data.extend_from_slice(points.row(i));
            data.extend_from_slice(nv.row(i));
        }
        Tensor::matrix(m, d0 + dfc, data)
    }

    fn decode(&self, tape: &mut Tape, out: Var) -> Result<Var> {
        let std = tape.constant(Tensor::row_vector(self.normalizer.output_std.clone()))?;
        let mean = tape.constant(Tensor::row_vector(self.normalizer.output_mean.clone()))?;
        let scaled = tape.mul(out, std)?;
        Ok(tape.add(scaled, mean)?)
    }

    /// Batched forward. In train mode every stage's covariance buffer is
    /// updated from the batch before that stage attends.
    pub fn forward_batch(
        &mut self,
        tape: &mut Tape,
        p: &Bound,
        inputs: &[FieldInput<'_>],
        mode: Mode,
    ) -> Result<Vec<Var>> {
        if mode == Mode::Eval {
            return inputs.iter().map(|inp| self.forward(tape, p, inp)).collect();
        }
        let k = self.config.eigen_count;
        let mut gs = Vec::with_capacity(inputs.len());
        let mut hs = Vec::with_capacity(inputs.len());
        for inp in inputs {
            self.check_input(inp)?;
            if inp.points.rows() < k {
                return Err(Error::MeshTooSmall {
                    points: inp.points.rows(),
                    k,
                });
            }
            let x = tape.constant(self.input_features(inp.points, inp.values))?;
            let (g, h) = self.encoder.encode(tape, p, x)?;
            gs.push(g);
            hs.push(h);
        }
        for stage in self.stages.iter_mut() {
            for g in gs.iter_mut() {
                *g = stage.block.forward(tape, p, *g)?;
            }
            hs = stage.ortho.layer_forward(tape, p, &gs, &hs, mode)?;
        }
        hs.into_iter().map(|h| self.decode(tape, h)).collect()
    }

    /// Eval-mode forward of one sample; the buffers are read-only.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, input: &FieldInput<'_>) -> Result<Var> {
        self.check_input(input)?;
        let x = tape.constant(self.input_features(input.points, input.values))?;
        let (mut g, mut h) = self.encoder.encode(tape, p, x)?;
        for stage in &self.stages {
            g = stage.block.forward(tape, p, g)?;
            h = stage.ortho.apply(tape, p, g, h)?;
        }
        self.decode(tape, h)
    }

    /// Eval-mode prediction on a query mesh `Y` from an input sampled on `X`.
    ///
    /// The first stage is a cross attention `ψ(Y) diag(μ) ψ(X)ᵀ h(X)` without a
    /// residual; later stages are self-attention on `Y` with residuals. The
    /// feature pathway at `Y` attends to the features at `X`, and its input
    /// values at `Y` are taken from the nearest mesh point of `X`.
    pub fn forward_query(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: &FieldInput<'_>,
        query: &DenseMatrix,
    ) -> Result<Var> {
        self.check_input(input)?;
        if query.cols() != self.config.coord_dim {
            return Err(Error::ShapeMismatch(format!(
                "query points have {} coordinates, model expects {}",
                query.cols(),
                self.config.coord_dim
            )));
        }
        let query_values = nearest_values(input.points, input.values, query);
        let x = tape.constant(self.input_features(input.points, input.values))?;
        let y = tape.constant(self.input_features(query, &query_values))?;
        let (mut gx, hx) = self.encoder.encode(tape, p, x)?;
        let (mut gy, _) = self.encoder.encode(tape, p, y)?;
        let mut hy = None;
        for stage in &self.stages {
            let gy_next = stage.block.forward_cross(tape, p, gy, gx)?;
            gx = stage.block.forward(tape, p, gx)?;
            gy = gy_next;
            let ortho = &stage.ortho;
            let ghat_y = ortho.project(tape, p, gy)?;
            let psi_y = ortho.orthonormalize(tape, ghat_y)?;
            hy = Some(match hy {
                None => {
                    let ghat_x = ortho.project(tape, p, gx)?;
                    let psi_x = ortho.orthonormalize(tape, ghat_x)?;
                    let a = ortho.attend(tape, p, psi_y, psi_x, hx)?;
                    ortho.nonlinearity(tape, p, a, None)?
                }
                Some(h) => {
                    let a = ortho.attend(tape, p, psi_y, psi_y, h)?;
                    ortho.nonlinearity(tape, p, a, Some(h))?
                }
            });
        }
        let h = hy.expect("at least one stage");
        self.decode(tape, h)
    }

    /// Eval-mode prediction on the input mesh.
    pub fn predict(&self, input: &FieldInput<'_>) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let out = self.forward(&mut tape, &p, input)?;
        Ok(tape.value(out).to_dense())
    }

    /// Eval-mode prediction on a separate query mesh.
    pub fn predict_query(&self, input: &FieldInput<'_>, query: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let out = self.forward_query(&mut tape, &p, input, query)?;
        Ok(tape.value(out).to_dense())
    }
}

/// For each query point, the values at the nearest point of `points` (first wins ties).
pub fn nearest_values(points: &DenseMatrix, values: &DenseMatrix, query: &DenseMatrix) -> DenseMatrix {
    let rows: Vec<usize> = (0..query.rows())
        .map(|q| {
            let y = query.row(q);
            let mut best = (f64::INFINITY, 0usize);
            for i in 0..points.rows() {
                let d: f64 = points
                    .row(i)
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect();
    values.select_rows(&rows)
}
