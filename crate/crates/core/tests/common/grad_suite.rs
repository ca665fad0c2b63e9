//! Finite-difference and oracle checks shared by the gradient tests and
//! the acceptance suite. Each check panics on failure.

use rand::Rng;
use sinmotion::autodiff::{Tape, Var};
use sinmotion::tensor::Tensor;

use super::{central_diff, random_model, rel_err, rng, tiny_config, weighted_sum};

pub const STEP: f64 = 1e-5;

/// Compares tape gradients of `weighted_sum(build(inputs))` against central
/// differences for up to `per_input` coordinates of every input.
pub fn check_kernel<F>(name: &str, inputs: &[Tensor<f64>], per_input: usize, tol: f64, build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
            .collect();
        let out = build(&mut tape, &vars);
        let loss = weighted_sum(&mut tape, out, 99);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(inputs);
    tape.backward(loss).unwrap();
    let scale = vars
        .iter()
        .flat_map(|&v| tape.grad(v).unwrap().to_vec())
        .fold(0.0, |m: f64, g| m.max(g.abs()));
    let mut pick = rng(7);
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).expect("input has gradient").to_vec();
        let n = input.numel();
        let coords: Vec<usize> = if n <= per_input {
            (0..n).collect()
        } else {
            (0..per_input).map(|_| pick.random_range(0..n)).collect()
        };
        for i in coords {
            let mut data = input.data().to_vec();
            let numeric = central_diff(&mut data, i, STEP, |d| {
                let mut vals = inputs.to_vec();
                vals[k] = Tensor::new(input.shape(), d.to_vec()).unwrap();
                let (tape, _, loss) = eval(&vals);
                tape.scalar(loss)
            });
            let e = rel_err(analytic[i], numeric, scale);
            assert!(
                e < tol,
                "{name}: input {k} coord {i}: analytic {} numeric {numeric} (rel {e:e})",
                analytic[i]
            );
        }
    }
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut rng(seed))
}

pub fn conv1d_gradients() {
    for (s, &(b, ci, co, n, k)) in [(2, 4, 3, 8, 3), (1, 2, 5, 7, 5), (3, 3, 2, 4, 1)].iter().enumerate() {
        let s = s as u64 * 10;
        let inputs = [randn(&[b, ci, n], s), randn(&[co, ci, k], s + 1), randn(&[co], s + 2)];
        check_kernel("conv1d", &inputs, 64, 1e-6, |t, v| t.conv1d(v[0], v[1], v[2]).unwrap());
    }
}

pub fn linear_gradients() {
    for (s, shape) in [vec![5, 3], vec![2, 4, 6], vec![1, 3, 2, 4]].into_iter().enumerate() {
        let s = s as u64 * 10;
        let d_in = *shape.last().unwrap();
        let inputs = [randn(&shape, s), randn(&[3, d_in], s + 1), randn(&[3], s + 2)];
        check_kernel("linear", &inputs, 64, 1e-6, |t, v| t.linear(v[0], v[1], v[2]).unwrap());
    }
}

pub fn softmax_gradients() {
    for (s, (shape, axis)) in [(vec![4, 5], 1), (vec![3, 4, 2], 1), (vec![6], 0)]
        .into_iter()
        .enumerate()
    {
        let inputs = [randn(&shape, s as u64)];
        check_kernel("softmax", &inputs, 64, 1e-6, |t, v| t.softmax(v[0], axis).unwrap());
    }
}

pub fn group_norm_gradients() {
    for (s, &(b, c, n, g)) in [(2, 6, 5, 2), (1, 6, 3, 2), (3, 3, 7, 1)].iter().enumerate() {
        let s = s as u64 * 10;
        let inputs = [randn(&[b, c, n], s), randn(&[b, c], s + 1), randn(&[b, c], s + 2)];
        check_kernel("group_norm", &inputs, 64, 1e-6, |t, v| {
            t.group_norm(v[0], g, Some(v[1]), Some(v[2])).unwrap()
        });
        check_kernel("group_norm plain", &inputs[..1], 64, 1e-6, |t, v| {
            t.group_norm(v[0], g, None, None).unwrap()
        });
    }
}

pub fn elementwise_gradients() {
    for (s, shape) in [vec![7], vec![3, 4], vec![2, 3, 5]].into_iter().enumerate() {
        let s = s as u64 * 10;
        let inputs = [randn(&shape, s), randn(&shape, s + 1)];
        check_kernel("silu", &inputs[..1], 64, 1e-6, |t, v| t.silu(v[0]));
        check_kernel("add", &inputs, 64, 1e-6, |t, v| t.add(v[0], v[1]).unwrap());
        check_kernel("mul", &inputs, 64, 1e-6, |t, v| t.mul(v[0], v[1]).unwrap());
        check_kernel("scale", &inputs[..1], 64, 1e-6, |t, v| t.scale(v[0], -1.7));
        check_kernel("dropout", &inputs[..1], 64, 1e-6, |t, v| {
            t.dropout(v[0], 0.3, true, &mut rng(5)).unwrap()
        });
        check_kernel("mse", &inputs, 64, 1e-6, |t, v| t.mse(v[0], v[1]).unwrap());
        check_kernel("mean", &inputs[..1], 64, 1e-6, |t, v| t.mean(v[0]));
    }
}

pub fn structural_gradients() {
    for (s, &(b, c, n)) in [(2, 3, 4), (1, 2, 6), (3, 1, 2)].iter().enumerate() {
        let s = s as u64 * 10;
        let a = randn(&[b, c, n], s);
        let other = randn(&[b, c + 1, n], s + 1);
        check_kernel("concat", &[a.clone(), other], 64, 1e-6, |t, v| {
            t.concat(&[v[0], v[1]], 1).unwrap()
        });
        check_kernel("slice", std::slice::from_ref(&a), 64, 1e-6, |t, v| {
            t.slice(v[0], 2, 1, n - 1).unwrap()
        });
        check_kernel("transpose", std::slice::from_ref(&a), 64, 1e-6, |t, v| {
            t.transpose12(v[0]).unwrap()
        });
        check_kernel("reshape", std::slice::from_ref(&a), 64, 1e-6, |t, v| {
            t.reshape(v[0], &[b * c, n]).unwrap()
        });
        check_kernel("avg_pool2", std::slice::from_ref(&a), 64, 1e-6, |t, v| {
            t.avg_pool2(v[0]).unwrap()
        });
        check_kernel("upsample2", &[a], 64, 1e-6, |t, v| t.upsample2(v[0]).unwrap());
    }
}

pub fn local_attention_gradients() {
    for (s, &(b, n, h, dh, w)) in [(2, 6, 2, 3, 3), (1, 5, 1, 4, 5), (2, 3, 3, 2, 5)].iter().enumerate() {
        let s = s as u64 * 10;
        let inputs = [
            randn(&[b, n, h * dh], s),
            randn(&[b, n, h * dh], s + 1),
            randn(&[h, dh], s + 2),
        ];
        check_kernel("local_attention", &inputs, 64, 1e-6, |t, v| {
            t.local_attention(v[0], v[1], v[2], w).unwrap()
        });
    }
}

pub fn denoiser_parameter_gradients() {
    let mut cfg = tiny_config(3, 2);
    cfg.dropout = 0.2;
    let model = random_model(cfg, 40);
    let x = randn(&[2, 8, 3], 41);
    let steps = [3, 70];
    let loss_of = |m: &sinmotion::denoiser::Denoiser<f64>, grad: bool| {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, grad);
        let xv = tape.constant(x.clone());
        let out = m.forward(&mut tape, &bound, xv, &steps, true, &mut rng(42)).unwrap();
        let loss = weighted_sum(&mut tape, out, 43);
        (tape, bound, loss)
    };
    let (mut tape, bound, loss) = loss_of(&model, true);
    tape.backward(loss).unwrap();
    let scale = bound
        .vars()
        .flat_map(|(_, v)| tape.grad(v).unwrap().to_vec())
        .fold(0.0, |m: f64, g| m.max(g.abs()));
    let names: Vec<String> = model.params().keys().cloned().collect();
    let mut pick = rng(44);
    for _ in 0..50 {
        let name = &names[pick.random_range(0..names.len())];
        let n = model.params()[name].numel();
        let i = pick.random_range(0..n);
        let var = bound.vars().find(|(k, _)| k == name).unwrap().1;
        let analytic = tape.grad(var).unwrap()[i];
        let mut data = model.params()[name].data().to_vec();
        let numeric = central_diff(&mut data, i, STEP, |d| {
            let mut m = model.clone();
            for (k, p) in m.params_mut() {
                if k == name {
                    p.data_mut().copy_from_slice(d);
                }
            }
            let (tape, _, loss) = loss_of(&m, false);
            tape.scalar(loss)
        });
        let e = rel_err(analytic, numeric, scale);
        assert!(
            e < 1e-4,
            "{name}[{i}]: analytic {analytic} numeric {numeric} (rel {e:e})"
        );
    }
}

/// Dense attention over all positions with a banded mask: each head scores
/// every frame, masks `|i − j| > r`, and normalizes the survivors.
pub fn dense_banded_attention(k: &Tensor<f64>, v: &Tensor<f64>, q: &Tensor<f64>, window: usize) -> Vec<f64> {
    let (b, n, d) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let (h, dh) = (q.shape()[0], q.shape()[1]);
    let r = (window as i64 - 1) / 2;
    let at = |t: &Tensor<f64>, bi: usize, j: usize, c: usize| t.data()[(bi * n + j) * d + c];
    let mut out = vec![0.0; b * n * d];
    for bi in 0..b {
        for i in 0..n {
            for hh in 0..h {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        if (i as i64 - j as i64).abs() > r {
                            f64::NEG_INFINITY
                        } else {
                            (0..dh)
                                .map(|c| q.data()[hh * dh + c] * at(k, bi, j, hh * dh + c))
                                .sum::<f64>()
                                / (dh as f64).sqrt()
                        }
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    out[(bi * n + i) * d + hh * dh + c] =
                        (0..n).map(|j| e[j] / z * at(v, bi, j, hh * dh + c)).sum::<f64>();
                }
            }
        }
    }
    out
}

pub fn local_attention_matches_dense_banded_oracle() {
    let mut r = rng(50);
    for case in 0..20 {
        let b = r.random_range(1..=3);
        let n = r.random_range(1..=24);
        let h = r.random_range(1..=4);
        let dh = r.random_range(1..=6);
        let window = 2 * r.random_range(0..=n) + 1;
        let window = window.min(2 * n - 1);
        let k = Tensor::<f64>::randn(&[b, n, h * dh], &mut r);
        let v = Tensor::<f64>::randn(&[b, n, h * dh], &mut r);
        let q = Tensor::<f64>::randn(&[h, dh], &mut r).map(|x| 2.0 * x);
        let mut tape = Tape::new();
        let (kv, vv, qv) = (
            tape.constant(k.clone()),
            tape.constant(v.clone()),
            tape.constant(q.clone()),
        );
        let z = tape.local_attention(kv, vv, qv, window).unwrap();
        let oracle = dense_banded_attention(&k, &v, &q, window);
        for (i, (&a, &o)) in tape.value(z).iter().zip(&oracle).enumerate() {
            assert!(
                (a - o).abs() < 1e-5,
                "case {case} (b{b} n{n} h{h} dh{dh} w{window}) index {i}: {a} vs {o}"
            );
        }
    }
}
