//! Finite-difference verification of tape gradients.
//!
//! Two harnesses: [`check_leaves`] rebuilds a small graph from scratch for
//! every perturbed evaluation (exhaustive, used per-op), and [`check_params`]
//! spot-checks a full model's parameter gradients against central differences
//! of a caller-supplied loss function.

use rand::Rng;

use super::error::NumResult;
use super::params::{ParamId, Params};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Relative error that treats values below 1 as absolute error:
/// `|a - n| / max(1, |a|, |n|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks every element of every leaf against a central difference with step
/// `h`, returning the worst relative error. `build` must construct the same
/// graph each call (seed any internal randomness deterministically).
pub fn check_leaves<F>(leaves: &[Tensor<f64>], h: f64, build: F) -> NumResult<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NumResult<NodeId>,
{
    let eval = |ls: &[Tensor<f64>]| -> NumResult<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ls.iter().map(|t| tape.var(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.scalar_value(loss))
    };

    // Analytic gradients from one backward pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| tape.var(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(leaves.iter())
        .map(|(&id, t)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        for (e, &a) in analytic[li].iter().enumerate() {
            let mut plus = leaves.to_vec();
            plus[li] = leaf.perturbed(e, h);
            let mut minus = leaves.to_vec();
            minus[li] = leaf.perturbed(e, -h);
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}

/// Spot-checks model parameter gradients. `analytic` comes from a backward
/// pass over the real loss; `eval` recomputes that loss for perturbed
/// parameters. At most `max_entries_per_param` randomly chosen elements are
/// probed per parameter. Returns the worst relative error seen.
pub fn check_params<F, R>(
    params: &Params<f64>,
    analytic: &[(ParamId, Vec<f64>)],
    h: f64,
    max_entries_per_param: usize,
    rng: &mut R,
    eval: F,
) -> f64
where
    F: Fn(&Params<f64>) -> f64,
    R: Rng,
{
    let mut worst = 0.0f64;
    for (id, grad) in analytic {
        let numel = grad.len();
        let indices: Vec<usize> = if numel <= max_entries_per_param {
            (0..numel).collect()
        } else {
            rand::seq::index::sample(rng, numel, max_entries_per_param).into_vec()
        };
        for e in indices {
            let plus = eval(&params.with_perturbed(*id, e, h));
            let minus = eval(&params.with_perturbed(*id, e, -h));
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(grad[e], numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::tape::Reduction;
    use crate::numcore::tensor::Mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    const SEEDS: u64 = 20;

    fn randt(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, rng)
    }

    /// Shifts every element at least 0.3 away from zero so ReLU's kink never
    /// sits inside a finite-difference interval.
    fn off_kink(t: &Tensor<f64>) -> Tensor<f64> {
        let data = t
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v + 0.3 } else { v - 0.3 })
            .collect();
        Tensor::from_vec(t.shape().to_vec(), data).unwrap()
    }

    /// Loss = sum(y * w) with fixed weights, making every output element
    /// matter with a distinct coefficient.
    fn weighted<F>(name: &str, leaves: &[Tensor<f64>], w: Tensor<f64>, op: F)
    where
        F: Fn(&mut Tape<f64>, &[NodeId]) -> NumResult<NodeId>,
    {
        let worst = check_leaves(leaves, H, |tape, ids| {
            let y = op(tape, ids)?;
            let wn = tape.constant(w.clone());
            let prod = tape.mul(y, wn)?;
            tape.sum_all(prod)
        })
        .unwrap();
        assert!(worst < TOL, "{name}: worst rel err {worst}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x23 = randt(&mut rng, vec![2, 3]);
            let y23 = randt(&mut rng, vec![2, 3]);
            let w23 = randt(&mut rng, vec![2, 3]);

            weighted("add", &[x23.clone(), y23.clone()], w23.clone(), |t, ids| {
                t.add(ids[0], ids[1])
            });
            weighted("mul", &[x23.clone(), y23.clone()], w23.clone(), |t, ids| {
                t.mul(ids[0], ids[1])
            });
            weighted("scale", std::slice::from_ref(&x23), w23.clone(), |t, ids| {
                t.scale(ids[0], 0.7)
            });
            let b3 = randt(&mut rng, vec![3]);
            weighted("add_bias", &[x23.clone(), b3], w23.clone(), |t, ids| {
                t.add_bias(ids[0], ids[1])
            });
            weighted("relu", &[off_kink(&x23)], w23.clone(), |t, ids| {
                t.relu(ids[0])
            });

            let a32 = randt(&mut rng, vec![3, 2]);
            let w22 = randt(&mut rng, vec![2, 2]);
            weighted("matmul", &[x23.clone(), a32], w22.clone(), |t, ids| {
                t.matmul(ids[0], ids[1])
            });
            let a223 = randt(&mut rng, vec![2, 2, 3]);
            let b32 = randt(&mut rng, vec![3, 2]);
            let w222 = randt(&mut rng, vec![2, 2, 2]);
            weighted(
                "matmul broadcast rhs",
                &[a223, b32],
                w222.clone(),
                |t, ids| t.matmul(ids[0], ids[1]),
            );
            let a123 = randt(&mut rng, vec![1, 2, 3]);
            let b232 = randt(&mut rng, vec![2, 3, 2]);
            weighted("matmul broadcast lhs", &[a123, b232], w222, |t, ids| {
                t.matmul(ids[0], ids[1])
            });

            let w32 = randt(&mut rng, vec![3, 2]);
            weighted("transpose", std::slice::from_ref(&x23), w32, |t, ids| {
                t.transpose(ids[0])
            });

            let x24 = randt(&mut rng, vec![2, 4]);
            let w24 = randt(&mut rng, vec![2, 4]);
            weighted("softmax", std::slice::from_ref(&x24), w24.clone(), |t, ids| {
                t.softmax(ids[0], None)
            });

            // Mask keeps a seed-dependent subset, never emptying a row.
            let mut keep = vec![false; 8];
            for r in 0..2 {
                keep[r * 4 + (seed as usize + r) % 4] = true;
                keep[r * 4 + (seed as usize + r + 2) % 4] = true;
            }
            let mask = Mask::from_keep(vec![2, 4], keep.clone()).unwrap();
            weighted("softmax masked", std::slice::from_ref(&x24), w24.clone(), |t, ids| {
                t.softmax(ids[0], Some(&mask))
            });
            // The fill constant (-1e9) swamps an h of 1e-5 in the difference;
            // the op is linear, so a coarse step keeps the check exact.
            let worst = check_leaves(std::slice::from_ref(&x24), 0.5, |t, ids| {
                let y = t.mask_fill(ids[0], &mask)?;
                let wn = t.constant(w24.clone());
                let prod = t.mul(y, wn)?;
                t.sum_all(prod)
            })
            .unwrap();
            assert!(worst < TOL, "mask_fill: worst rel err {worst}");

            let gain = randt(&mut rng, vec![4]);
            let bias = randt(&mut rng, vec![4]);
            weighted(
                "layer_norm",
                &[x24.clone(), gain, bias],
                w24.clone(),
                |t, ids| t.layer_norm(ids[0], ids[1], ids[2], 1e-5),
            );

            let logits = randt(&mut rng, vec![3, 5]);
            for reduction in [Reduction::Sum, Reduction::Mean] {
                let name = format!("cross_entropy {reduction:?}");
                let worst = check_leaves(std::slice::from_ref(&logits), H, |t, ids| {
                    let ce = t.cross_entropy(ids[0], &[1, 0, 4], reduction, None)?;
                    t.scale(ce, 1.3)
                })
                .unwrap();
                assert!(worst < TOL, "{name}: worst rel err {worst}");
            }
            // Masked variant: keep three classes per row including targets.
            let ce_keep: Vec<bool> = (0..15).map(|i| i % 5 < 3 || i % 5 == 4).collect();
            let ce_mask = Mask::from_keep(vec![3, 5], ce_keep).unwrap();
            let worst = check_leaves(std::slice::from_ref(&logits), H, |t, ids| {
                t.cross_entropy(ids[0], &[1, 0, 4], Reduction::Sum, Some(&ce_mask))
            })
            .unwrap();
            assert!(worst < TOL, "cross_entropy masked: worst rel err {worst}");

            let table = randt(&mut rng, vec![4, 3]);
            let w43 = randt(&mut rng, vec![4, 3]);
            weighted("gather", &[table], w43, |t, ids| {
                t.gather(ids[0], &[2, 0, 2, 3])
            });

            let x34 = randt(&mut rng, vec![3, 4]);
            let w14 = randt(&mut rng, vec![1, 4]);
            weighted("row", &[x34], w14, |t, ids| t.row(ids[0], 1));

            let x25 = randt(&mut rng, vec![2, 5]);
            let w23b = randt(&mut rng, vec![2, 3]);
            weighted("slice_cols", &[x25], w23b, |t, ids| {
                t.slice_cols(ids[0], 1, 3)
            });

            let x22 = randt(&mut rng, vec![2, 2]);
            let w25 = randt(&mut rng, vec![2, 5]);
            weighted(
                "concat_cols",
                &[x22, randt(&mut rng, vec![2, 3])],
                w25,
                |t, ids| t.concat_cols(&[ids[0], ids[1]]),
            );

            let worst = check_leaves(std::slice::from_ref(&x23), H, |t, ids| {
                let s = t.sum_all(ids[0])?;
                t.scale(s, 0.9)
            })
            .unwrap();
            assert!(worst < TOL, "sum_all: worst rel err {worst}");
            let worst = check_leaves(std::slice::from_ref(&x23), H, |t, ids| {
                let m = t.mean_all(ids[0])?;
                t.scale(m, -1.7)
            })
            .unwrap();
            assert!(worst < TOL, "mean_all: worst rel err {worst}");

            let drop_seed = seed * 7 + 1;
            weighted("dropout", std::slice::from_ref(&x24), w24, |t, ids| {
                let mut drng = ChaCha8Rng::seed_from_u64(drop_seed);
                t.dropout(ids[0], 0.5, &mut drng)
            });
        }
    }

    #[test]
    fn attention_shaped_composite_chain() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let q = randt(&mut rng, vec![2, 3]);
            let k = randt(&mut rng, vec![2, 3]);
            let v = randt(&mut rng, vec![2, 4]);
            let w = randt(&mut rng, vec![2, 4]);
            weighted("attention chain", &[q, k, v], w, |t, ids| {
                let kt = t.transpose(ids[1])?;
                let scores = t.matmul(ids[0], kt)?;
                let scaled = t.scale(scores, 1.0 / 3.0f64.sqrt())?;
                let probs = t.softmax(scaled, None)?;
                t.matmul(probs, ids[2])
            });
        }
    }

    #[test]
    fn check_params_catches_a_wrong_gradient() {
        let mut params = Params::<f64>::new();
        let id = params.add("p", Tensor::from_vec(vec![2], vec![1.5, -0.5]).unwrap());
        // Loss = p0^2 + 3 p1; true gradient [3.0, 3.0] at p0 = 1.5.
        let eval =
            |ps: &Params<f64>| ps.get(id).data()[0].powi(2) + 3.0 * ps.get(id).data()[1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let good = check_params(&params, &[(id, vec![3.0, 3.0])], H, 10, &mut rng, eval);
        assert!(good < TOL, "good gradient flagged: {good}");
        let bad = check_params(&params, &[(id, vec![3.0, 2.0])], H, 10, &mut rng, eval);
        assert!(bad > 0.2, "wrong gradient not flagged: {bad}");
    }
}
