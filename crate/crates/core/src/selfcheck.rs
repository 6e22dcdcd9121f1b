//! Finite-difference gradient checks of every differentiable model component
//! on reduced dimensions in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Classifier, ClassifierConfig, GraphMode};
use crate::encoder::{ArtConfig, ArtEncoder, ConvLayerSpec, TokenizerMode};
use crate::error::Result;
use crate::numerics::{gradient_check, Bound, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};

/// Components covered by [`run_component`].
pub const COMPONENTS: &[&str] = &[
    "tokenizer",
    "tokenizer-fixed-patch",
    "embeddings",
    "encoder-transformer",
    "projection-head",
    "gat",
    "gcn",
    "channel-transformer",
    "classifier-head",
    "nt-xent",
    "cross-entropy",
];

#[derive(Debug)]
pub struct ComponentCheck {
    pub component: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

const N_CHANNELS: usize = 4;
const RATES: [u32; 2] = [16, 24];

fn art_config(tokenizer: TokenizerMode, projection_head: bool) -> ArtConfig {
    let mut art = ArtConfig::new(6, &RATES);
    art.n_patches = 4;
    art.d_model = 8;
    art.n_layers = 1;
    art.n_heads = 2;
    art.d_ff = 12;
    art.conv = vec![
        ConvLayerSpec {
            out_channels: 3,
            kernel: 5,
            stride: 2,
        },
        ConvLayerSpec {
            out_channels: 4,
            kernel: 3,
            stride: 1,
        },
    ];
    art.tokenizer = tokenizer;
    art.projection_head = projection_head;
    art
}

fn clf_config(mode: GraphMode) -> ClassifierConfig {
    let mut c = ClassifierConfig::new(N_CHANNELS, 3, mode);
    c.d_in = 8;
    c.d_model = 8;
    c.gat_heads = 2;
    c.tx_layers = 1;
    c.tx_heads = 2;
    c.tx_d_ff = 12;
    c
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Reduces an output to a scalar through fixed random weights.
fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let n = g.value(out).numel();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = g.mul_const(out, w);
    g.sum(y)
}

/// Splits the leaves into the module parameters and any trailing inputs.
fn split(vars: &[Var], n_params: usize) -> (Bound, &[Var]) {
    (Bound::from_vars(vars[..n_params].to_vec()), &vars[n_params..])
}

fn check(
    names: Vec<String>,
    tensors: Vec<Tensor<f64>>,
    seed: u64,
    forward: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    gradient_check(forward, &names, &tensors, &opts)
}

fn with_inputs(
    mut names: Vec<String>,
    mut tensors: Vec<Tensor<f64>>,
    inputs: Vec<(&str, Tensor<f64>)>,
) -> (Vec<String>, Vec<Tensor<f64>>) {
    for (n, t) in inputs {
        names.push(n.to_string());
        tensors.push(t);
    }
    (names, tensors)
}

fn check_encoder(component: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokenizer = if component == "tokenizer-fixed-patch" {
        TokenizerMode::FixedPatch
    } else {
        TokenizerMode::Adaptive
    };
    let enc = ArtEncoder::<f64>::new(art_config(tokenizer, component == "projection-head"), &mut rng)?;
    let names = enc.params().names().to_vec();
    let tensors = enc.params().tensors().to_vec();
    let n_params = tensors.len();
    let d = enc.config().d_model;
    let np = enc.config().n_patches;
    match component {
        "tokenizer" | "tokenizer-fixed-patch" => {
            // Two lengths exercise the grouped path.
            let a: Vec<f64> = random(&mut rng, &[32]).data().to_vec();
            let b: Vec<f64> = random(&mut rng, &[48]).data().to_vec();
            let c: Vec<f64> = random(&mut rng, &[32]).data().to_vec();
            check(names, tensors, seed, move |g, v| {
                let (p, _) = split(v, n_params);
                let t = enc.tokenize(g, &p, &[&a, &b, &c])?;
                Ok(probe(g, t, seed))
            })
        }
        "embeddings" => {
            let (names, tensors) = with_inputs(names, tensors, vec![("patches", random(&mut rng, &[3, np, d]))]);
            check(names, tensors, seed, move |g, v| {
                let (p, x) = split(v, n_params);
                let e = enc.embed(g, &p, x[0], &[0, 5, 3], &[1, 0, 1])?;
                Ok(probe(g, e, seed))
            })
        }
        "encoder-transformer" => {
            let (names, tensors) = with_inputs(names, tensors, vec![("tokens", random(&mut rng, &[2, np, d]))]);
            check(names, tensors, seed, move |g, v| {
                let (p, x) = split(v, n_params);
                let (t, _) = enc.encode(g, &p, x[0]);
                Ok(probe(g, t, seed))
            })
        }
        _ => {
            let (names, tensors) = with_inputs(names, tensors, vec![("repr", random(&mut rng, &[3, d]))]);
            check(names, tensors, seed, move |g, v| {
                let (p, x) = split(v, n_params);
                let z = enc.project(g, &p, x[0]);
                Ok(probe(g, z, seed))
            })
        }
    }
}

fn check_classifier(component: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = match component {
        "gat" => GraphMode::Gat,
        "gcn" => GraphMode::Gcn,
        _ => GraphMode::NoGraph,
    };
    let clf = Classifier::<f64>::new(clf_config(mode), &mut rng)?;
    let names = clf.params().names().to_vec();
    let tensors = clf.params().tensors().to_vec();
    let n_params = tensors.len();
    let batch = 2;
    let d_in = clf.config().d_in;
    let (names, tensors) = with_inputs(
        names,
        tensors,
        vec![("reprs", random(&mut rng, &[batch * N_CHANNELS, d_in]))],
    );
    let logits_only = component == "classifier-head";
    check(names, tensors, seed, move |g, v| {
        let (p, x) = split(v, n_params);
        let out = clf.forward_from_reprs(g, &p, x[0], batch, None)?;
        let target = if logits_only { out.logits } else { out.pooled };
        let a = probe(g, target, seed);
        let b = probe(g, out.nodes, seed + 1);
        Ok(g.add(a, b))
    })
}

fn check_loss(component: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if component == "nt-xent" {
        let z = random(&mut rng, &[8, 5]);
        check(vec!["z".into()], vec![z], seed, |g, v| g.nt_xent(v[0], 0.5))
    } else {
        let logits = random(&mut rng, &[6, 3]);
        check(vec!["logits".into()], vec![logits], seed, |g, v| {
            g.cross_entropy(v[0], &[0, 2, 1, 1, 0, 2])
        })
    }
}

/// Gradient check of one named component at one seed.
pub fn run_component(component: &str, seed: u64) -> Result<ComponentCheck> {
    let report = match component {
        "tokenizer" | "tokenizer-fixed-patch" | "embeddings" | "encoder-transformer" | "projection-head" => {
            check_encoder(component, seed)?
        }
        "gat" | "gcn" | "channel-transformer" | "classifier-head" => check_classifier(component, seed)?,
        "nt-xent" | "cross-entropy" => check_loss(component, seed)?,
        other => {
            return Err(crate::Error::InvalidArgument(format!(
                "unknown component {other:?}; expected one of {COMPONENTS:?}"
            )))
        }
    };
    Ok(ComponentCheck {
        component: component.to_string(),
        seed,
        report,
    })
}

/// Every component at every seed.
pub fn run_all(seeds: &[u64]) -> Result<Vec<ComponentCheck>> {
    let mut out = Vec::new();
    for c in COMPONENTS {
        for &s in seeds {
            out.push(run_component(c, s)?);
        }
    }
    Ok(out)
}
