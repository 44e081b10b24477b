#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikedistill::losses::{
    cls_loss_integrated, cls_loss_tet, hckd_loss, hit_signal, tckd_loss, total_loss, AlphaSchedule,
    Distance, DistillSignals, LossConfig,
};
use spikedistill::tensorgrad::{Graph, Tensor, Var};
use spikedistill::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-6;
/// Entries smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn objective(g: &mut Graph, out: Var, proj: &Tensor) -> Var {
    if g.value(out).is_scalar() {
        return out;
    }
    let w = g.constant(proj.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn eval(inputs: &[Tensor], f: &Build<'_>, proj: &Tensor) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let s = objective(&mut g, out, proj);
    g.value(s).item()
}

/// Largest relative error between the reverse-mode gradient and central
/// differences, for the output projected onto fixed random weights. Only
/// the first `wrt` inputs are differentiated; the rest are constants.
pub fn gradcheck(inputs: &[Tensor], wrt: usize, f: &Build<'_>, rng: &mut impl Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i < wrt {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = f(&mut g, &vars).unwrap();
    let shape = g.shape(out).to_vec();
    let proj = uniform(&shape, -1.0, 1.0, rng);
    let s = objective(&mut g, out, &proj);
    g.backward(s).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate().take(wrt) {
        let analytic = g
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus, f, &proj) - eval(&minus, f, &proj)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    worst
}

pub struct OpCase {
    pub name: String,
    /// Leading inputs that receive gradients.
    pub wrt: usize,
    pub inputs: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>,
    pub build: Box<Build<'static>>,
}

fn case(
    name: &str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name: name.to_string(),
        wrt: usize::MAX,
        inputs: Box::new(inputs),
        build: Box::new(build),
    }
}

fn shapes(list: &'static [&'static [usize]]) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> {
    move |r| list.iter().map(|s| uniform(s, -1.0, 1.0, r)).collect()
}

/// Logits `[T, N_c]` with a margin between the top two entries of every
/// row so that argmax decisions are stable under the finite-difference step.
pub fn separated_logits(t: usize, c: usize, rng: &mut impl Rng) -> Tensor {
    let mut o = uniform(&[t, c], -2.0, 2.0, rng);
    for row in 0..t {
        let top = rng.gen_range(0..c);
        o.data_mut()[row * c + top] = 2.5 + rng.gen_range(0.0..1.0);
    }
    o
}

fn signals(vars: &[Var], teacher: Tensor, label: usize) -> DistillSignals {
    DistillSignals {
        student: vars[0],
        teacher,
        label,
    }
}

/// Every differentiable graph operation and every loss term.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        case("add", shapes(&[&[3, 4], &[3, 4]]), |g, v| g.add(v[0], v[1])),
        case("sub", shapes(&[&[3, 4], &[3, 4]]), |g, v| g.sub(v[0], v[1])),
        case("mul", shapes(&[&[3, 4], &[3, 4]]), |g, v| g.mul(v[0], v[1])),
        case("mul_scalar", shapes(&[&[2, 3], &[]]), |g, v| {
            g.mul(v[0], v[1])
        }),
        case("scale", shapes(&[&[5]]), |g, v| Ok(g.scale(v[0], -1.7))),
        case("add_scalar", shapes(&[&[5]]), |g, v| {
            Ok(g.add_scalar(v[0], 0.3))
        }),
        case(
            "relu",
            |r| {
                let t = uniform(&[4, 4], -1.0, 1.0, r);
                vec![t.map(|x| x + 0.1 * x.signum())]
            },
            |g, v| Ok(g.relu(v[0])),
        ),
        case("softmax_rows", shapes(&[&[3, 5]]), |g, v| {
            g.softmax(v[0], 1)
        }),
        case("softmax_cols", shapes(&[&[3, 5]]), |g, v| {
            g.softmax(v[0], 0)
        }),
        case("log_softmax", shapes(&[&[3, 5]]), |g, v| {
            g.log_softmax(v[0], 1)
        }),
        case(
            "ln_floor",
            |r| vec![uniform(&[6], 0.2, 2.0, r)],
            |g, v| Ok(g.ln_floor(v[0], 1e-12)),
        ),
        case("sum", shapes(&[&[2, 3]]), |g, v| Ok(g.sum(v[0]))),
        case("mean_all", shapes(&[&[2, 3]]), |g, v| Ok(g.mean_all(v[0]))),
        case("sum_axis", shapes(&[&[2, 3, 4]]), |g, v| {
            g.sum_axis(v[0], 1)
        }),
        case("mean_axis0", shapes(&[&[2, 3, 4]]), |g, v| g.mean(v[0], 0)),
        case("mean_axis2", shapes(&[&[2, 3, 4]]), |g, v| g.mean(v[0], 2)),
        case("avg_pool2d", shapes(&[&[1, 2, 4, 4]]), |g, v| {
            g.avg_pool2d(v[0], 2)
        }),
        case(
            "conv2d_same",
            shapes(&[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]]),
            |g, v| g.conv2d(v[0], v[1], v[2], 1, 1),
        ),
        case(
            "conv2d_strided",
            shapes(&[&[1, 1, 6, 6], &[2, 1, 3, 3], &[2]]),
            |g, v| g.conv2d(v[0], v[1], v[2], 2, 0),
        ),
        case("linear", shapes(&[&[3, 4], &[5, 4], &[5]]), |g, v| {
            g.linear(v[0], v[1], v[2])
        }),
        case("reshape", shapes(&[&[2, 6]]), |g, v| {
            let r = g.reshape(v[0], vec![3, 4])?;
            g.mul(r, r)
        }),
        case("concat_rows", shapes(&[&[1, 3], &[2, 3]]), |g, v| {
            g.concat(&[v[0], v[1]], 0)
        }),
        case("concat_cols", shapes(&[&[2, 1], &[2, 3]]), |g, v| {
            g.concat(&[v[0], v[1]], 1)
        }),
        case("gather_rows", shapes(&[&[4, 3]]), |g, v| {
            g.gather_rows(v[0], &[2, 0, 2])
        }),
        case(
            "cls_loss_tet",
            |r| vec![uniform(&[4, 7], -2.0, 2.0, r)],
            |g, v| cls_loss_tet(g, v[0], 3),
        ),
        case(
            "cls_loss_integrated",
            |r| vec![uniform(&[4, 7], -2.0, 2.0, r)],
            |g, v| cls_loss_integrated(g, v[0], 5),
        ),
        case(
            "hit_signal",
            |r| vec![separated_logits(4, 7, r)],
            |g, v| {
                // label chosen as the argmax of the first row so some rows hit
                let first = g.value(v[0]).row(0).to_vec();
                let y = spikedistill::losses::argmax(&first);
                hit_signal(g, v[0], y)
            },
        ),
    ];
    let student_only = |mut c: OpCase| {
        c.wrt = 1;
        c
    };
    for d in [Distance::Mse, Distance::Ce, Distance::Kld] {
        cases.push(student_only(case(
            &format!("hckd_{d:?}"),
            |r| vec![separated_logits(4, 7, r), separated_logits(4, 7, r)],
            move |g, v| {
                let teacher = g.value(v[1]).clone();
                let y = spikedistill::losses::argmax(g.value(v[0]).row(0));
                hckd_loss(g, &signals(v, teacher, y), d)
            },
        )));
        for tet in [true, false] {
            cases.push(student_only(case(
                &format!("tckd_{d:?}_tet{tet}"),
                |r| {
                    vec![
                        uniform(&[4, 7], -2.0, 2.0, r),
                        uniform(&[4, 7], -2.0, 2.0, r),
                    ]
                },
                move |g, v| {
                    let teacher = g.value(v[1]).clone();
                    tckd_loss(g, &signals(v, teacher, 0), d, tet)
                },
            )));
        }
        for epoch in [0usize, 30, 60] {
            cases.push(student_only(case(
                &format!("total_loss_{d:?}_epoch{epoch}"),
                |r| vec![separated_logits(4, 7, r), separated_logits(4, 7, r)],
                move |g, v| {
                    let teacher = g.value(v[1]).clone();
                    let y = spikedistill::losses::argmax(g.value(v[0]).row(1));
                    let cfg = LossConfig {
                        schedule: AlphaSchedule::default(),
                        ..LossConfig::default().with_distance(d)
                    };
                    Ok(total_loss(g, &signals(v, teacher, y), epoch, &cfg)?.0)
                },
            )));
        }
    }
    cases
}

/// Runs every case over `seeds`; returns `(name, worst error)` per case.
pub fn check_all(seeds: std::ops::Range<u64>) -> Vec<(String, f64)> {
    op_cases()
        .iter()
        .map(|c| {
            let worst = seeds
                .clone()
                .map(|s| {
                    let mut r = rng(s);
                    let inputs = (c.inputs)(&mut r);
                    gradcheck(&inputs, c.wrt, c.build.as_ref(), &mut r)
                })
                .fold(0.0, f64::max);
            (c.name.clone(), worst)
        })
        .collect()
}

/// Reference arctan surrogate derivative, written out independently of the
/// library.
pub fn arctan_surrogate(x: f64, alpha: f64) -> f64 {
    let z = std::f64::consts::PI / 2.0 * alpha * x;
    alpha / 2.0 / (1.0 + z * z)
}
