use serde::Serialize;

use super::tape::Branch;
use super::{Result, Tape, Tensor, TensorError, Var};

/// Worst finite-difference disagreement for one parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F>(
    f: &F,
    params: &[(String, Tensor)],
    record: bool,
    branches: &[Branch],
) -> Result<(Tape, Var, Vec<Var>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if record {
        tape.record_branches();
    } else {
        tape.replay_branches(branches.to_vec());
    }
    let vars: Vec<Var> = params
        .iter()
        .map(|(_, t)| {
            if record {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.shape() != (1, 1) || !v.item().is_finite() {
        return Err(TensorError::NonFinite("grad_check objective"));
    }
    Ok((tape, loss, vars))
}

/// Compares tape gradients of the scalar `f` against central differences
/// `(f(θ+ε) - f(θ-ε)) / 2ε`, coordinate by coordinate.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// ReLU-type activations and row maxima keep the branch they took at the
/// base point in every perturbed evaluation, so a step that straddles a kink
/// still measures the slope the tape differentiates.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(
        (1e-7..=1e-4).contains(&eps),
        "finite-difference step {eps} outside [1e-7, 1e-4]"
    );
    let (mut tape, loss, vars) = evaluate(&f, params, true, &[])?;
    let branches = tape.take_branches();
    tape.backward(loss);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, (_, t))| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        max_rel_error: 0.0,
    };
    for p in 0..params.len() {
        let mut worst = ParamError {
            name: params[p].0.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..params[p].1.len() {
            let orig = params[p].1.data()[k];
            work[p].1.data_mut()[k] = orig + eps;
            let (t_plus, l_plus, _) = evaluate(&f, &work, false, &branches)?;
            work[p].1.data_mut()[k] = orig - eps;
            let (t_minus, l_minus, _) = evaluate(&f, &work, false, &branches)?;
            work[p].1.data_mut()[k] = orig;
            let numeric = (t_plus.value(l_plus).item() - t_minus.value(l_minus).item()) / (2.0 * eps);
            let a = analytic[p].data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > worst.max_rel_error || k == 0 {
                worst = ParamError {
                    name: params[p].0.clone(),
                    max_rel_error: rel,
                    worst_index: k,
                    analytic: a,
                    numeric,
                };
            }
        }
        report.max_rel_error = report.max_rel_error.max(worst.max_rel_error);
        report.params.push(worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn square_is_exact() {
        let params = vec![("theta".to_string(), Tensor::scalar(3.0))];
        let r = grad_check(|t, v| t.mul(v[0], v[0]), &params, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn two_layer_mlp_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_t(1, 4, &mut rng);
        let params = vec![
            ("w1".to_string(), rand_t(4, 6, &mut rng)),
            ("b1".to_string(), rand_t(1, 6, &mut rng)),
            ("w2".to_string(), rand_t(6, 2, &mut rng)),
            ("b2".to_string(), rand_t(1, 2, &mut rng)),
        ];
        let r = grad_check(
            |t, v| {
                let x = t.constant(x.clone());
                let h = t.matmul(x, v[0])?;
                let h = t.add_row(h, v[1])?;
                let h = t.relu(h);
                let o = t.matmul(h, v[2])?;
                let o = t.add_row(o, v[3])?;
                let p = t.softmax_rows(o, None, None)?;
                t.binary_cross_entropy(p, 1.0)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let params = vec![("x".to_string(), Tensor::scalar(1.0))];
        let err = grad_check(|t, v| Ok(t.scale(v[0], f64::INFINITY)), &params, 1e-5);
        assert!(matches!(err, Err(TensorError::NonFinite(_))));
    }

    fn sum_all(t: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
        // weighted sum so the upstream gradient is not uniform
        let w = t.constant(weights.clone());
        let m = t.mul(x, w)?;
        let (r, c) = t.value(m).shape();
        let left = t.constant(Tensor::filled(1, r, 1.0));
        let right = t.constant(Tensor::filled(c, 1, 1.0));
        let s = t.matmul(left, m)?;
        t.matmul(s, right)
    }

    /// Keeps inputs clear of the ReLU kink so central differences are valid.
    fn away_from_zero(t: Tensor) -> Tensor {
        t.map(|x| if x.abs() < 1e-2 { 1e-2f64.copysign(x) } else { x })
    }

    type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

    fn op_cases() -> Vec<(&'static str, Vec<(usize, usize)>, OpFn)> {
        vec![
            ("matmul", vec![(3, 4), (4, 3)], |t, v| t.matmul(v[0], v[1])),
            ("transpose", vec![(3, 3)], |t, v| Ok(t.transpose(v[0]))),
            ("add", vec![(3, 3), (3, 3)], |t, v| t.add(v[0], v[1])),
            ("add_row", vec![(3, 3), (1, 3)], |t, v| t.add_row(v[0], v[1])),
            ("add_col", vec![(3, 3), (3, 1)], |t, v| t.add_col(v[0], v[1])),
            ("mul", vec![(3, 3), (3, 3)], |t, v| t.mul(v[0], v[1])),
            ("mul_const", vec![(3, 3)], |t, v| {
                t.mul_const(v[0], &Tensor::from_fn(3, 3, |i, j| ((i + j) % 2) as f64))
            }),
            ("add_const", vec![(3, 3)], |t, v| t.add_const(v[0], &Tensor::filled(3, 3, 0.3))),
            ("scale", vec![(3, 3)], |t, v| Ok(t.scale(v[0], -1.7))),
            ("scale_by", vec![(1, 1), (3, 3)], |t, v| t.scale_by(v[0], v[1])),
            ("leaky_relu", vec![(3, 3)], |t, v| Ok(t.leaky_relu(v[0], 0.2))),
            ("relu", vec![(3, 3)], |t, v| Ok(t.relu(v[0]))),
            ("sigmoid", vec![(3, 3)], |t, v| Ok(t.sigmoid(v[0]))),
            ("softmax", vec![(3, 3)], |t, v| {
                t.softmax_rows(v[0], Some(&Tensor::from_fn(3, 3, |i, j| -0.5 * (i as f64 - j as f64).abs())), None)
            }),
            ("masked_softmax", vec![(3, 3)], |t, v| {
                t.softmax_rows(v[0], None, Some(&Tensor::from_fn(3, 3, |i, j| ((i + j + 1) % 2) as f64)))
            }),
            ("layer_norm", vec![(3, 4), (1, 4), (1, 4)], |t, v| t.layer_norm(v[0], v[1], v[2])),
            ("concat_cols", vec![(3, 2), (3, 1)], |t, v| t.concat_cols(&[v[0], v[1]])),
            ("slice_cols", vec![(3, 4)], |t, v| Ok(t.slice_cols(v[0], 1, 2))),
            ("outer_sum", vec![(3, 1), (3, 1)], |t, v| t.outer_sum(v[0], v[1])),
            ("element", vec![(3, 3)], |t, v| Ok(t.element(v[0], 1, 2))),
            ("max_rows", vec![(4, 3)], |t, v| Ok(t.max_rows(v[0]))),
            ("gather_rows", vec![(5, 3)], |t, v| Ok(t.gather_rows(v[0], &[0, 3, 3]))),
            ("binary_cross_entropy", vec![(1, 2)], |t, v| {
                let p = t.softmax_rows(v[0], None, None)?;
                t.binary_cross_entropy(p, 1.0)
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn every_op_passes_gradcheck(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (name, shapes, op) in op_cases() {
                let params: Vec<(String, Tensor)> = shapes
                    .iter()
                    .enumerate()
                    .map(|(k, &(r, c))| (format!("{name}.{k}"), away_from_zero(rand_t(r, c, &mut rng))))
                    .collect();
                let probe = {
                    let mut t = Tape::new();
                    let v: Vec<Var> = params.iter().map(|(_, p)| t.constant(p.clone())).collect();
                    let out = op(&mut t, &v).unwrap();
                    t.value(out).shape()
                };
                let weights = rand_t(probe.0, probe.1, &mut rng);
                let r = grad_check(|t, v| {
                    let out = op(t, v)?;
                    sum_all(t, out, &weights)
                }, &params, 1e-5).unwrap();
                prop_assert!(r.max_rel_error < 1e-4, "{}: {:?}", name, r);
            }
        }
    }
}
