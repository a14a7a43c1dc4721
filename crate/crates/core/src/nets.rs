//! The networks: feature extractor G, bias-free classifier head, and the two
//! three-layer discriminators, plus the classification loss and the shared
//! adversarial pair loss they feed.
//!
//! Networks are plain parameter containers. Each training iteration registers
//! their parameters as leaves on a fresh [`Tape`] and builds the forward pass
//! on top; after `backward`, gradients are read back out by node id.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{DenseArray, NodeId, Tape, LOG_CLAMP_HI, LOG_CLAMP_LO};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Stream};

/// Fully connected layer, weight `[in, out]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseArray,
    pub bias: DenseArray,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut Stream) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let values: Vec<f64> = (0..input * output)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Linear {
            weight: DenseArray::matrix(input, output, values).expect("finite init"),
            bias: DenseArray::zeros(&[output]),
        }
    }

    fn register(&self, tape: &mut Tape) -> LinearNodes {
        LinearNodes {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl LinearNodes {
    fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let z = tape.matmul(x, self.weight)?;
        tape.add(z, self.bias)
    }
}

/// Feature extractor G: rectified hidden layers, linear output of width
/// `feature_dim`. No dropout anywhere in G.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub layers: Vec<Linear>,
}

impl FeatureExtractor {
    pub fn init(input_dim: usize, hidden: &[usize], feature_dim: usize, rng: &mut Stream) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Linear::init(prev, h, rng));
            prev = h;
        }
        layers.push(Linear::init(prev, feature_dim, rng));
        FeatureExtractor { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.cols()
    }

    pub fn register(&self, tape: &mut Tape) -> ExtractorNodes {
        ExtractorNodes {
            layers: self.layers.iter().map(|l| l.register(tape)).collect(),
        }
    }

    /// Standalone forward pass (builds a throwaway graph).
    pub fn features(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape);
        let xn = tape.leaf(x.clone());
        let f = nodes.forward(&mut tape, xn)?;
        Ok(tape.value(f).clone())
    }
}

#[derive(Debug, Clone)]
pub struct ExtractorNodes {
    pub layers: Vec<LinearNodes>,
}

impl ExtractorNodes {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Classifier head: the last fully connected layer, weight `[classes,
/// feature_dim]`, deliberately bias-free so its columns carry the complete
/// label relevance of each feature element.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weight: DenseArray,
}

impl ClassifierHead {
    pub fn init(classes: usize, feature_dim: usize, rng: &mut Stream) -> Self {
        let limit = (6.0 / (classes + feature_dim) as f64).sqrt();
        let values: Vec<f64> = (0..classes * feature_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        ClassifierHead {
            weight: DenseArray::matrix(classes, feature_dim, values).expect("finite init"),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn register(&self, tape: &mut Tape) -> HeadNodes {
        HeadNodes {
            weight: tape.leaf(self.weight.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub weight: NodeId,
}

impl HeadNodes {
    /// `(logits, probabilities)` for features `f [m, feature_dim]`:
    /// logits `o = f·wᵀ`, probabilities row-softmax of the logits.
    pub fn classify(&self, tape: &mut Tape, f: NodeId) -> Result<(NodeId, NodeId)> {
        let logits = tape.matmul_nt(f, self.weight)?;
        let probs = tape.softmax_rows(logits);
        Ok((logits, probs))
    }
}

/// Binary discriminator: three fully connected layers, rectifier + dropout
/// after the first two, logistic output clamped into `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub layers: [Linear; 3],
    pub dropout_rate: f64,
}

impl Discriminator {
    pub fn init(input_dim: usize, hidden: usize, dropout_rate: f64, rng: &mut Stream) -> Self {
        Discriminator {
            layers: [
                Linear::init(input_dim, hidden, rng),
                Linear::init(hidden, hidden, rng),
                Linear::init(hidden, 1, rng),
            ],
            dropout_rate,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn register(&self, tape: &mut Tape) -> DiscriminatorNodes {
        DiscriminatorNodes {
            layers: [
                self.layers[0].register(tape),
                self.layers[1].register(tape),
                self.layers[2].register(tape),
            ],
            dropout_rate: self.dropout_rate,
        }
    }

    /// Standalone forward pass; dropout masks are drawn from `rng` only when
    /// `training` is set.
    pub fn discriminate(
        &self,
        z: &DenseArray,
        training: bool,
        rng: &mut Stream,
    ) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape);
        let zn = tape.leaf(z.clone());
        let out = nodes.forward(&mut tape, zn, if training { Some(rng) } else { None })?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorNodes {
    pub layers: [LinearNodes; 3],
    pub dropout_rate: f64,
}

impl DiscriminatorNodes {
    /// Output in `[LOG_CLAMP_LO, LOG_CLAMP_HI]`, so `log D` and `log(1-D)`
    /// are always finite. Dropout is active only when an rng is supplied.
    pub fn forward(
        &self,
        tape: &mut Tape,
        z: NodeId,
        mut dropout_rng: Option<&mut Stream>,
    ) -> Result<NodeId> {
        let mut h = z;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < 2 {
                h = tape.relu(h);
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    if self.dropout_rate > 0.0 {
                        h = tape.dropout(h, self.dropout_rate, rng)?;
                    }
                }
            }
        }
        let s = tape.logistic(h);
        Ok(tape.clamp(s, LOG_CLAMP_LO, LOG_CLAMP_HI))
    }
}

/// Mean negative log-likelihood of the true classes:
/// `-(1/n) Σ log p[i, y_i]`, with `labels` 1-based in `1..=classes`.
pub fn classification_loss(
    tape: &mut Tape,
    probs: NodeId,
    labels: &[usize],
    classes: usize,
) -> Result<NodeId> {
    let rows = tape.value(probs).rows();
    if labels.len() != rows {
        return Err(Error::Dimension {
            context: "classification_loss",
            left: vec![rows],
            right: vec![labels.len()],
        });
    }
    let mut cols = Vec::with_capacity(labels.len());
    for (row, &y) in labels.iter().enumerate() {
        if y < 1 || y > classes {
            return Err(Error::Data(format!(
                "label {y} out of range 1..={classes} at row {row}"
            )));
        }
        cols.push(y - 1);
    }
    let picked = tape.pick_per_row(probs, &cols)?;
    let clamped = tape.clamp(picked, LOG_CLAMP_LO, LOG_CLAMP_HI);
    let logged = tape.log(clamped);
    let mean = tape.mean_all(logged);
    Ok(tape.scale(mean, -1.0))
}

/// How an adversarial loss participates in the backward pass.
///
/// In `Train` mode the loss evaluates to the adversarial value `V` but routes
/// gradients so that one minimizing step *ascends* `V` for the discriminator
/// and *descends* it for everything upstream of the feature-side reversal:
/// the value node is wrapped in a unit gradient reversal (flipping the
/// discriminator's sign), and the caller wraps the generator-side inputs in
/// `grad_reverse(scale)` (flipping the generator path back, net `+scale`).
///
/// `Plain` mode inserts no reversal nodes anywhere, so backward produces the
/// true partial derivatives of `V` — this is what finite-difference checks
/// and the explicit max/min reference updates use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvMode {
    Train { scale: f64 },
    Plain,
}

impl AdvMode {
    /// Wrap a generator-side input (applied by the loss builders that own the
    /// feature path).
    pub fn generator_side(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match *self {
            AdvMode::Train { scale } => tape.grad_reverse(x, scale),
            AdvMode::Plain => Ok(x),
        }
    }

    fn value_side(&self, tape: &mut Tape, v: NodeId) -> Result<NodeId> {
        match *self {
            AdvMode::Train { .. } => tape.grad_reverse(v, 1.0),
            AdvMode::Plain => Ok(v),
        }
    }
}

/// `V = mean[log D(pos)] + mean[log(1 - D(neg))]` for a discriminator `D`.
///
/// Both batches must be non-empty. The discriminator output is already
/// clamped into `[1e-7, 1-1e-7]`, which bounds every log argument away from
/// zero on both sides.
pub fn adversarial_pair(
    tape: &mut Tape,
    disc: &DiscriminatorNodes,
    pos: NodeId,
    neg: NodeId,
    mode: AdvMode,
    mut dropout_rng: Option<&mut Stream>,
) -> Result<NodeId> {
    if tape.value(pos).rows() == 0 || tape.value(neg).rows() == 0 {
        return Err(Error::Contract(
            "adversarial loss requires non-empty batches".into(),
        ));
    }
    let d_pos = disc.forward(tape, pos, dropout_rng.as_deref_mut())?;
    let log_pos = tape.log(d_pos);
    let mean_pos = tape.mean_all(log_pos);

    let d_neg = disc.forward(tape, neg, dropout_rng.as_deref_mut())?;
    let one_minus = tape.one_minus(d_neg);
    let log_neg = tape.log(one_minus);
    let mean_neg = tape.mean_all(log_neg);

    let v = tape.add(mean_pos, mean_neg)?;
    mode.value_side(tape, v)
}

// ---------------------------------------------------------------------------
// Network aggregate and checkpointing
// ---------------------------------------------------------------------------

/// Architecture hyperparameters shared by every network constructor.
/// `d2_input_dim` depends on what the source/target discriminator sees:
/// `feature_dim` for marginal alignment, `feature_dim · classes` for
/// conditional alignment on joint embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub classes: usize,
    pub discriminator_hidden: usize,
    pub dropout_rate: f64,
    pub d2_input_dim: usize,
}

/// All four trainable networks. `d1` separates the two source domains on
/// element-weighted features; `d2` separates source from target.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
    pub d1: Discriminator,
    pub d2: Discriminator,
}

/// Learning-rate group of a parameter: the extractor plays the backbone role,
/// everything downstream of it counts as a newly added layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    NewLayers,
}

pub struct NetworkNodes {
    pub extractor: ExtractorNodes,
    pub head: HeadNodes,
    pub d1: DiscriminatorNodes,
    pub d2: DiscriminatorNodes,
}

impl Networks {
    pub fn init(arch: &ArchConfig, seed: u64) -> Self {
        let extractor = FeatureExtractor::init(
            arch.input_dim,
            &arch.extractor_hidden,
            arch.feature_dim,
            &mut stream(seed, Purpose::InitExtractor),
        );
        let head = ClassifierHead::init(
            arch.classes,
            arch.feature_dim,
            &mut stream(seed, Purpose::InitHead),
        );
        let d1 = Discriminator::init(
            arch.feature_dim,
            arch.discriminator_hidden,
            arch.dropout_rate,
            &mut stream(seed, Purpose::InitDisc1),
        );
        let d2 = Discriminator::init(
            arch.d2_input_dim,
            arch.discriminator_hidden,
            arch.dropout_rate,
            &mut stream(seed, Purpose::InitDisc2),
        );
        Networks {
            extractor,
            head,
            d1,
            d2,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> NetworkNodes {
        NetworkNodes {
            extractor: self.extractor.register(tape),
            head: self.head.register(tape),
            d1: self.d1.register(tape),
            d2: self.d2.register(tape),
        }
    }

    /// Canonical parameter order: extractor layers, head, d1, d2. Checkpoints,
    /// the optimizer, and gradient collection all share this order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.extractor.layers.len() {
            names.push(format!("g.{i}.weight"));
            names.push(format!("g.{i}.bias"));
        }
        names.push("head.weight".into());
        for (tag, d) in [("d1", &self.d1), ("d2", &self.d2)] {
            for i in 0..d.layers.len() {
                names.push(format!("{tag}.{i}.weight"));
                names.push(format!("{tag}.{i}.bias"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&DenseArray> {
        let mut out = Vec::new();
        for l in &self.extractor.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.head.weight);
        for d in [&self.d1, &self.d2] {
            for l in &d.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut out = Vec::new();
        for l in &mut self.extractor.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.weight);
        for d in [&mut self.d1, &mut self.d2] {
            for l in &mut d.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = vec![ParamGroup::Backbone; self.extractor.layers.len() * 2];
        let new_layer_count = 1 + self.d1.layers.len() * 2 + self.d2.layers.len() * 2;
        groups.extend(std::iter::repeat(ParamGroup::NewLayers).take(new_layer_count));
        groups
    }

    /// Leaf node of every parameter, in canonical order.
    pub fn param_nodes(nodes: &NetworkNodes) -> Vec<NodeId> {
        let mut out = Vec::new();
        for l in &nodes.extractor.layers {
            out.push(l.weight);
            out.push(l.bias);
        }
        out.push(nodes.head.weight);
        for d in [&nodes.d1, &nodes.d2] {
            for l in &d.layers {
                out.push(l.weight);
                out.push(l.bias);
            }
        }
        out
    }
}

/// Write all parameters as one record per line:
/// `<name> <d0>x<d1>x... <v0> <v1> ...`. Values use Rust's shortest
/// round-trip float formatting, so a load reproduces every bit.
pub fn save_checkpoint(nets: &Networks, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("msda-few-checkpoint v1\n");
    for (name, param) in nets.param_names().iter().zip(nets.params()) {
        let dims: Vec<String> = param.shape().iter().map(|d| d.to_string()).collect();
        write!(out, "{name} {}", dims.join("x")).expect("string write");
        for v in param.values() {
            write!(out, " {v}").expect("string write");
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Rebuild networks from a checkpoint written by [`save_checkpoint`]. The
/// dropout rate is a runtime setting, not a parameter, and must be supplied.
pub fn load_checkpoint(path: &Path, dropout_rate: f64) -> Result<Networks> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Data("empty checkpoint file".into()))?;
    if header.trim() != "msda-few-checkpoint v1" {
        return Err(Error::Data(format!(
            "unrecognized checkpoint header: {header:?}"
        )));
    }
    let mut records: Vec<(String, DenseArray)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 2;
        let mut fields = line.split_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| Error::Data(format!("missing name at line {row}")))?
            .to_string();
        let shape_str = fields
            .next()
            .ok_or_else(|| Error::Data(format!("missing shape at line {row}")))?;
        let shape: Vec<usize> = shape_str
            .split('x')
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::Data(format!("bad dimension {d:?} at line {row}")))
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad value {v:?} at line {row}")))
            })
            .collect::<Result<_>>()?;
        records.push((name, DenseArray::new(shape, values)?));
    }
    networks_from_records(records, dropout_rate)
}

fn take_record(records: &mut Vec<(String, DenseArray)>, name: &str) -> Option<DenseArray> {
    let pos = records.iter().position(|(n, _)| n == name)?;
    Some(records.remove(pos).1)
}

fn take_linear(
    records: &mut Vec<(String, DenseArray)>,
    prefix: &str,
    index: usize,
) -> Result<Option<Linear>> {
    let weight = take_record(records, &format!("{prefix}.{index}.weight"));
    let bias = take_record(records, &format!("{prefix}.{index}.bias"));
    match (weight, bias) {
        (Some(weight), Some(bias)) => Ok(Some(Linear { weight, bias })),
        (None, None) => Ok(None),
        _ => Err(Error::Data(format!(
            "checkpoint has an unpaired weight/bias for {prefix}.{index}"
        ))),
    }
}

fn networks_from_records(
    mut records: Vec<(String, DenseArray)>,
    dropout_rate: f64,
) -> Result<Networks> {
    let mut g_layers = Vec::new();
    while let Some(layer) = take_linear(&mut records, "g", g_layers.len())? {
        g_layers.push(layer);
    }
    if g_layers.is_empty() {
        return Err(Error::Data("checkpoint has no extractor layers".into()));
    }
    let head_weight = take_record(&mut records, "head.weight")
        .ok_or_else(|| Error::Data("checkpoint missing head.weight".into()))?;
    let head = ClassifierHead {
        weight: head_weight,
    };
    let mut discs = Vec::new();
    for tag in ["d1", "d2"] {
        let mut layers = Vec::new();
        for i in 0..3 {
            layers.push(
                take_linear(&mut records, tag, i)?
                    .ok_or_else(|| Error::Data(format!("checkpoint missing {tag}.{i} layer")))?,
            );
        }
        let layers: [Linear; 3] = layers.try_into().expect("exactly three layers");
        discs.push(Discriminator {
            layers,
            dropout_rate,
        });
    }
    if let Some((name, _)) = records.first() {
        return Err(Error::Data(format!(
            "checkpoint has unrecognized record {name:?}"
        )));
    }
    let d2 = discs.pop().expect("two discriminators");
    let d1 = discs.pop().expect("two discriminators");
    Ok(Networks {
        extractor: FeatureExtractor { layers: g_layers },
        head,
        d1,
        d2,
    })
}
