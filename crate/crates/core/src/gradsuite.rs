//! Finite-difference checks over every primitive, the style cross, the
//! network blocks and every loss term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    aaic_loss, ambiguity_loss, asym_am_softmax, cross_entropy, orthogonality_loss, triplet_loss, AaicForm,
    ContrastLabeling,
};
use crate::nn::{Cwsa, Encoder, EncoderConfig, Head, HeadKind, Module};
use crate::stylecross::{style_cross_batch, LevelPairings, StylePlan};
use crate::tensor::gradcheck::{finite_diff_check, GradReport};
use crate::tensor::{apply_primitive, Primitive, PrimitiveKind, Tensor};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const ENCODER_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub report: GradReport,
}

impl CaseReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<28} max_rel_err = {:.3e}",
            if self.report.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.report.max_rel_error()
        )
    }
}

type Objective = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

struct Case {
    name: String,
    f: Objective,
    inputs: Vec<Tensor>,
}

struct Gen(ChaCha8Rng);

impl Gen {
    /// Uniform values in ±[0.05, 1), away from the ReLU kink.
    fn signed(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let m: f64 = self.0.gen_range(0.05..1.0);
                if self.0.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::new(shape, data).expect("valid shape")
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.0.gen_range(0.2..2.0)).collect()).expect("valid shape")
    }

    fn unit_rows(&mut self, rows: usize, cols: usize) -> Tensor {
        let t = self.signed(&[rows, cols]);
        t.l2_normalize(1).expect("2D").detach()
    }
}

/// `Σ r ⊙ y` for a fixed random `r`, so every output element matters.
fn project(y: Tensor, seed: u64) -> Result<Tensor> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let r = g.signed(y.shape());
    y.mul(&r)?.sum()
}

fn primitive_case(kind: PrimitiveKind, g: &mut Gen) -> Case {
    let proj_seed = g.0.gen();
    let (op, inputs): (Primitive, Vec<Tensor>) = match kind {
        PrimitiveKind::Conv2d => (
            Primitive::Conv2d { stride: 2, padding: 1 },
            vec![g.signed(&[2, 3, 6, 6]), g.signed(&[4, 3, 3, 3]), g.signed(&[4])],
        ),
        PrimitiveKind::Linear => (Primitive::Linear, vec![g.signed(&[3, 5]), g.signed(&[4, 5]), g.signed(&[4])]),
        PrimitiveKind::Relu => (Primitive::Relu, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Sigmoid => (Primitive::Sigmoid, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Softmax => (Primitive::Softmax { axis: 1 }, vec![g.signed(&[3, 4])]),
        PrimitiveKind::L2Normalize => (Primitive::L2Normalize { axis: 1 }, vec![g.signed(&[3, 4])]),
        PrimitiveKind::ChannelMean => (Primitive::ChannelMean, vec![g.signed(&[2, 3, 3, 4])]),
        PrimitiveKind::ChannelStd => (Primitive::ChannelStd { eps: 1e-6 }, vec![g.signed(&[2, 3, 3, 4])]),
        PrimitiveKind::GlobalAvgPool => (Primitive::GlobalAvgPool, vec![g.signed(&[2, 3, 3, 4])]),
        PrimitiveKind::Concat => (Primitive::Concat { axis: 1 }, vec![g.signed(&[2, 3]), g.signed(&[2, 2])]),
        PrimitiveKind::Add => (Primitive::Add, vec![g.signed(&[3, 4]), g.signed(&[3, 4])]),
        PrimitiveKind::Mul => (Primitive::Mul, vec![g.signed(&[3, 4]), g.signed(&[3, 4])]),
        PrimitiveKind::Scale => (Primitive::Scale { factor: -1.7, offset: 0.3 }, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Matmul => (Primitive::Matmul, vec![g.signed(&[3, 4]), g.signed(&[4, 2])]),
        PrimitiveKind::Transpose => (Primitive::Transpose, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Sum => (Primitive::Sum, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Mean => (Primitive::Mean, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Square => (Primitive::Square, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Log => (Primitive::Log, vec![g.positive(&[3, 4])]),
        PrimitiveKind::Exp => (Primitive::Exp, vec![g.signed(&[3, 4])]),
        PrimitiveKind::Slice => (Primitive::Slice { axis: 1, start: 1, len: 2 }, vec![g.signed(&[3, 4])]),
        PrimitiveKind::BroadcastChannel => {
            (Primitive::BroadcastChannel { height: 2, width: 3 }, vec![g.signed(&[2, 3])])
        }
    };
    Case {
        name: format!("primitive/{kind}"),
        f: Box::new(move |p| {
            let refs: Vec<&Tensor> = p.iter().collect();
            project(apply_primitive(op.clone(), &refs)?, proj_seed)
        }),
        inputs,
    }
}

/// Copy of `m` whose parameters are `values`, in `params()` order.
fn with_params<M: Module + Clone>(m: &M, values: &[Tensor]) -> M {
    let mut out = m.clone();
    for ((_, t), v) in out.params_mut().into_iter().zip(values) {
        *t = v.clone();
    }
    out
}

fn module_inputs<M: Module>(m: &M) -> Vec<Tensor> {
    m.params().into_iter().map(|(_, t)| t.detach()).collect()
}

fn model_cases(g: &mut Gen) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.0.gen());
    let mut cases = Vec::new();

    let perm = vec![2, 0, 3, 1];
    let x = g.signed(&[4, 3, 3, 3]);
    let seed = g.0.gen();
    cases.push(Case {
        name: "style_cross".into(),
        f: Box::new(move |p| project(style_cross_batch(&p[0], &perm)?, seed)),
        inputs: vec![x],
    });

    let cwsa = Cwsa::new(&mut rng, 8, 2)?;
    let mut inputs = module_inputs(&cwsa);
    inputs.push(g.signed(&[3, 8, 2, 2]));
    let seed = g.0.gen();
    cases.push(Case {
        name: "cwsa".into(),
        f: Box::new(move |p| {
            let (w, x) = p.split_at(p.len() - 1);
            project(with_params(&cwsa, w).forward(&x[0])?, seed)
        }),
        inputs,
    });

    let head = Head::new(&mut rng, HeadKind::Discriminator, 3, 5)?;
    let mut inputs = module_inputs(&head);
    inputs.push(g.signed(&[4, 5]));
    let seed = g.0.gen();
    cases.push(Case {
        name: "cosine_head".into(),
        f: Box::new(move |p| project(with_params(&head, &p[..1]).forward(&p[1], 2.0)?.probs, seed)),
        inputs,
    });

    Ok(cases)
}

/// The full encoder with style flows. ReLU kinks inside make central
/// differences at the default step unreliable, so this case runs with a
/// finer step of its own.
fn encoder_case(g: &mut Gen) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.0.gen());
    let cfg = EncoderConfig {
        input_size: 16,
        stage_channels: [3, 4, 4],
        feature_dim: 4,
        cwsa_enabled: true,
        cwsa_reduction: 2,
    };
    let enc = Encoder::new(&mut rng, cfg)?;
    let plan: StylePlan = "M+H".parse()?;
    let keys = [0usize, 0, 1, 1];
    let pairings = LevelPairings::sample(&plan, &keys, &mut rng);
    // Zero-initialized biases put ReLU inputs of dead neighbourhoods exactly
    // on the kink, so the check runs at random biases.
    let mut inputs: Vec<Tensor> = enc
        .params()
        .into_iter()
        .map(|(n, t)| if n.ends_with("bias") { g.signed(t.shape()) } else { t.detach() })
        .collect();
    inputs.push(g.positive(&[4, 3, 16, 16]));
    let seed = g.0.gen();
    Ok(Case {
        name: "encoder_with_style_flows".into(),
        f: Box::new(move |p| {
            let (w, x) = p.split_at(p.len() - 1);
            let e = with_params(&enc, w).encode(&x[0], Some(&plan), &pairings)?;
            let mut parts = vec![&e.features];
            parts.extend(e.augmented.iter());
            project(Tensor::concat(&parts, 0)?, seed)
        }),
        inputs,
    })
}

fn loss_cases(g: &mut Gen) -> Vec<Case> {
    let mut cases = Vec::new();
    cases.push(Case {
        name: "loss/orthogonality".into(),
        f: Box::new(|p| orthogonality_loss(&p[0].l2_normalize(1)?, &p[1].l2_normalize(1)?)),
        inputs: vec![g.unit_rows(4, 5), g.unit_rows(3, 5)],
    });
    cases.push(Case {
        name: "loss/ambiguity".into(),
        f: Box::new(|p| ambiguity_loss(&p[0].softmax(1)?)),
        inputs: vec![g.signed(&[4, 3])],
    });
    let is_live = [true, false, true, false];
    for form in [AaicForm::AsWritten, AaicForm::Log] {
        let labeling = ContrastLabeling::fas(&is_live, 1);
        cases.push(Case {
            name: format!("loss/aaic_{form}"),
            f: Box::new(move |p| aaic_loss(&p[0], &labeling, 0.5, form)),
            inputs: vec![g.signed(&[8, 5])],
        });
    }
    cases.push(Case {
        name: "loss/triplet".into(),
        f: Box::new(|p| triplet_loss(&p[0], &[0, 0, 1, 1, 0, 1], 1.0)),
        inputs: vec![g.signed(&[6, 5])],
    });
    cases.push(Case {
        name: "loss/cross_entropy".into(),
        f: Box::new(|p| cross_entropy(&p[0], &[2, 0, 1, 2])),
        inputs: vec![g.signed(&[4, 3])],
    });
    cases.push(Case {
        name: "loss/asym_am_softmax".into(),
        f: Box::new(|p| asym_am_softmax(&p[0], &[0, 1, 1, 0], 4.0, 0.4, 0.1)),
        inputs: vec![g.signed(&[4, 2])],
    });
    cases
}

/// Names of every case, in run order.
pub fn case_names() -> Vec<String> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(0));
    let mut names: Vec<String> = PrimitiveKind::ALL.iter().map(|k| format!("primitive/{k}")).collect();
    names.extend(model_cases(&mut g).expect("fixed shapes").into_iter().map(|c| c.name));
    names.extend(loss_cases(&mut g).into_iter().map(|c| c.name));
    names
}

fn check(c: Case, step: f64, tol: f64) -> Result<CaseReport> {
    Ok(CaseReport { report: finite_diff_check(&c.f, &c.inputs, step, tol)?, name: c.name })
}

/// Runs every case with central differences of size `step`.
pub fn run_suite(seed: u64, step: f64, tol: f64) -> Result<Vec<CaseReport>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut cases: Vec<Case> = PrimitiveKind::ALL.iter().map(|&k| primitive_case(k, &mut g)).collect();
    cases.extend(model_cases(&mut g)?);
    cases.extend(loss_cases(&mut g));
    cases.into_iter().map(|c| check(c, step, tol)).collect()
}

/// Checks the composed encoder, style flows and CWSA included.
pub fn run_encoder_check(seed: u64, step: f64, tol: f64) -> Result<CaseReport> {
    check(encoder_case(&mut Gen(ChaCha8Rng::seed_from_u64(seed)))?, step, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_is_covered() {
        let names = case_names();
        for k in PrimitiveKind::ALL {
            assert!(names.contains(&format!("primitive/{k}")), "{k}");
        }
        assert!(names.iter().any(|n| n.starts_with("loss/aaic")));
    }

    #[test]
    fn suite_passes() {
        for case in run_suite(1, DEFAULT_STEP, DEFAULT_TOL).unwrap() {
            assert!(case.report.passed(), "{}", case.line());
        }
    }

    #[test]
    fn composed_encoder_passes() {
        for seed in 0..5 {
            let case = run_encoder_check(seed, ENCODER_STEP, DEFAULT_TOL).unwrap();
            assert!(case.report.passed(), "seed {seed}: {}", case.line());
        }
    }
}
