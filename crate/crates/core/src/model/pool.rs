//! Learned-query multi-head attention pooling over sets of rows.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{HeadParams, PoolParams};
use crate::error::{Error, Result};

/// Pools one set: every row of `z_s` is a member.
pub fn attention_pool(z_s: ArrayView2<'_, f64>, params: &PoolParams) -> Result<Array1<f64>> {
    attention_pool_with_weights(z_s, params).map(|(out, _)| out)
}

/// Like [`attention_pool`], also returning the per-head softmax weights.
pub fn attention_pool_with_weights(
    z_s: ArrayView2<'_, f64>,
    params: &PoolParams,
) -> Result<(Array1<f64>, Vec<Vec<f64>>)> {
    if z_s.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty set".into()));
    }
    if z_s.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            actual: z_s.ncols(),
        });
    }
    let members: Vec<usize> = (0..z_s.nrows()).collect();
    let (out, cache) = pool_sets(z_s, &[members], params)?;
    let weights = cache.weights.into_iter().collect();
    Ok((out.row(0).to_owned(), weights))
}

/// Per-direction intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PoolCache {
    /// Per head: projected keys and values of every source row.
    pub keys: Vec<Array2<f64>>,
    pub values: Vec<Array2<f64>>,
    /// Per head: raw attention logits and softmax weights, laid out set by set.
    pub logits: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    /// Start of each set within the flat logit/weight vectors.
    pub offsets: Vec<usize>,
}

fn scale(params: &PoolParams) -> f64 {
    (params.head_dim() as f64).sqrt()
}

/// Pools every set of source rows. Sets index rows of `input`; members are
/// visited in the order given, which callers keep ascending.
pub fn pool_sets(
    input: ArrayView2<'_, f64>,
    sets: &[Vec<usize>],
    params: &PoolParams,
) -> Result<(Array2<f64>, PoolCache)> {
    let dh = params.head_dim();
    let sc = scale(params);
    let mut offsets = Vec::with_capacity(sets.len() + 1);
    offsets.push(0);
    for set in sets {
        if set.is_empty() {
            return Err(Error::InvalidArgument("cannot pool an empty set".into()));
        }
        offsets.push(offsets.last().unwrap() + set.len());
    }
    let total = *offsets.last().unwrap();
    let mut out = Array2::<f64>::zeros((sets.len(), params.output_dim()));
    let mut cache = PoolCache {
        keys: Vec::with_capacity(params.heads.len()),
        values: Vec::with_capacity(params.heads.len()),
        logits: Vec::with_capacity(params.heads.len()),
        weights: Vec::with_capacity(params.heads.len()),
        offsets,
    };
    for (i, head) in params.heads.iter().enumerate() {
        let keys = input.dot(&head.key);
        let values = input.dot(&head.value);
        let mut logits = vec![0.0; total];
        let mut weights = vec![0.0; total];
        for (si, set) in sets.iter().enumerate() {
            let off = cache.offsets[si];
            let lg = &mut logits[off..off + set.len()];
            for (j, &m) in set.iter().enumerate() {
                lg[j] = head.query.dot(&keys.row(m)) / sc;
            }
            let max = lg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = &mut weights[off..off + set.len()];
            let mut z = 0.0;
            for j in 0..set.len() {
                w[j] = (lg[j] - max).exp();
                z += w[j];
            }
            for wj in w.iter_mut() {
                *wj /= z;
            }
            let mut o = out.slice_mut(s![si, i * dh..(i + 1) * dh]);
            for (j, &m) in set.iter().enumerate() {
                o.scaled_add(w[j], &values.row(m));
            }
        }
        cache.keys.push(keys);
        cache.values.push(values);
        cache.logits.push(logits);
        cache.weights.push(weights);
    }
    Ok((out, cache))
}

/// Gradients of one pooling direction given the upstream gradient of its output.
/// Returns parameter gradients and the gradient with respect to `input`.
pub fn pool_sets_backward(
    input: ArrayView2<'_, f64>,
    sets: &[Vec<usize>],
    params: &PoolParams,
    cache: &PoolCache,
    upstream: ArrayView2<'_, f64>,
) -> (PoolParams, Array2<f64>) {
    let dh = params.head_dim();
    let sc = scale(params);
    let n = input.nrows();
    let mut d_input = Array2::<f64>::zeros(input.raw_dim());
    let mut grads = Vec::with_capacity(params.heads.len());
    for (i, head) in params.heads.iter().enumerate() {
        let keys = &cache.keys[i];
        let values = &cache.values[i];
        let weights = &cache.weights[i];
        let mut d_keys = Array2::<f64>::zeros((n, dh));
        let mut d_values = Array2::<f64>::zeros((n, dh));
        let mut d_query = Array1::<f64>::zeros(dh);
        let mut dw = Vec::new();
        for (si, set) in sets.iter().enumerate() {
            let g = upstream.slice(s![si, i * dh..(i + 1) * dh]);
            let off = cache.offsets[si];
            let w = &weights[off..off + set.len()];
            dw.clear();
            let mut mean = 0.0;
            for (j, &m) in set.iter().enumerate() {
                let d = g.dot(&values.row(m));
                mean += w[j] * d;
                dw.push(d);
                d_values.row_mut(m).scaled_add(w[j], &g);
            }
            for (j, &m) in set.iter().enumerate() {
                let dl = w[j] * (dw[j] - mean) / sc;
                if dl != 0.0 {
                    d_query.scaled_add(dl, &keys.row(m));
                    d_keys.row_mut(m).scaled_add(dl, &head.query);
                }
            }
        }
        let t = input.t();
        grads.push(HeadParams {
            query: d_query,
            key: standard(t.dot(&d_keys)),
            value: standard(t.dot(&d_values)),
        });
        d_input += &d_keys.dot(&head.key.t());
        d_input += &d_values.dot(&head.value.t());
    }
    (PoolParams { heads: grads }, d_input)
}

/// Sum of softmax weights per set, for invariant checks.
pub fn weight_sums(cache: &PoolCache) -> impl Iterator<Item = f64> + '_ {
    cache.weights.iter().flat_map(move |w| {
        cache
            .offsets
            .windows(2)
            .map(move |r| w[r[0]..r[1]].iter().sum::<f64>())
    })
}

pub(crate) fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Row-major copy when a product came back in another layout.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn sum_rows(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(0))
}
