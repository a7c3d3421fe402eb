//! Central-difference gradient checking.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::layers::{Attention, Mlp};
use crate::numerics::params::{seeded_init, ParamSpec, ParamStore};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<GradCheckEntry>,
    pub checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_loss<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::Shape("gradient check needs a scalar loss".into()));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {x}")));
    }
    Ok(x)
}

/// Compares backprop gradients against `(f(w + h) - f(w - h)) / 2h` for up to
/// `per_param` evenly spaced entries of each named parameter.
pub fn grad_check<F>(
    store: &ParamStore,
    names: &[&str],
    h: f64,
    per_param: usize,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;
    let analytic = grads.param_grads(&g, store);
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = store.clone();
    for &name in names {
        let n = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?
            .len();
        let count = per_param.min(n).max(1);
        for k in 0..count {
            let index = k * n / count;
            let orig = store.get(name).unwrap().data()[index];
            probe.get_mut(name).unwrap().data_mut()[index] = orig + h;
            let up = eval_loss(&probe, &build)?;
            probe.get_mut(name).unwrap().data_mut()[index] = orig - h;
            let down = eval_loss(&probe, &build)?;
            probe.get_mut(name).unwrap().data_mut()[index] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[name].data()[index];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}[{index}]")));
            }
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(GradCheckEntry {
                    param: name.to_string(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Step used by [`primitive_suite`].
pub const PRIMITIVE_STEP: f64 = 1e-5;

fn toy_store(specs: &[(&str, &[usize])], seed: u64) -> Result<ParamStore> {
    let specs: Vec<ParamSpec> = specs
        .iter()
        .map(|(n, s)| ParamSpec::weight(*n, s))
        .collect();
    seeded_init(&specs, seed)
}

/// Weighted sum so that every output element gets a distinct upstream
/// gradient.
fn weigh(g: &mut Graph, v: Var) -> Result<Var> {
    let t = g.value(v);
    let w = Tensor::new(
        t.shape().to_vec(),
        (0..t.len())
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0)
            .collect(),
    )?;
    let w = g.input(w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

/// Gradient checks that together exercise every graph operation and layer.
pub fn primitive_suite(per_param: usize) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let h = PRIMITIVE_STEP;
    let mut out = Vec::new();

    let s = toy_store(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[3, 4])], 1)?;
    let r = grad_check(&s, &["a", "b", "c"], h, per_param, |g, s| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let c = g.param(s, "c")?;
        let ab = g.matmul(a, b)?;
        let ac = g.matmul_nt(a, c)?;
        let t = g.tanh(ab);
        let sg = g.sigmoid(ac);
        let x = g.concat_cols(&[t, sg])?;
        let d = g.add_const(c, 2.0);
        let q = g.div(a, d)?;
        let q = g.sub(q, c)?;
        let q = g.abs(q);
        let l1 = weigh(g, x)?;
        let l2 = weigh(g, q)?;
        g.add(l1, l2)
    })?;
    out.push(("elementwise_matmul", r));

    let s = toy_store(&[("x", &[3, 5]), ("p", &[5]), ("k", &[1])], 2)?;
    let r = grad_check(&s, &["x", "p", "k"], h, per_param, |g, s| {
        let x = g.param(s, "x")?;
        let p = g.param(s, "p")?;
        let p = g.abs(p);
        let p = g.add_const(p, 0.1);
        let k = g.param(s, "k")?;
        let y = g.softmax_with_prior(x, p)?;
        let z = g.softmax(x);
        let m = g.mean_rows(y);
        let m = g.mul_scalar(m, k)?;
        let r = g.slice_rows(z, 1, 2)?;
        let r = g.slice_cols(r, 1, 3)?;
        let r = g.reshape(r, &[6])?;
        let kb = g.broadcast(k, 6)?;
        let r = g.mul(r, kb)?;
        let st = g.concat_rows(&[y, z])?;
        let l1 = weigh(g, m)?;
        let l2 = weigh(g, r)?;
        let l3 = weigh(g, st)?;
        let l = g.add(l1, l2)?;
        let l = g.add(l, l3)?;
        let mean = g.mean(x);
        let l = g.add(l, mean)?;
        Ok(g.scale(l, 0.5))
    })?;
    out.push(("softmax_prior_reductions", r));

    let s = toy_store(&[("x", &[2, 3])], 3)?;
    let t = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.25, 0.0, 1.0])?;
    let r = grad_check(&s, &["x"], h, per_param, |g, s| {
        let x = g.param(s, "x")?;
        let x = g.scale(x, 4.0);
        g.bce_with_logits(x, t.clone())
    })?;
    out.push(("bce_logits", r));

    let mut specs = Attention::specs("att", 4);
    specs.extend(Mlp::specs("mlp", 4, 6, 3));
    specs.push(ParamSpec::weight("x", &[3, 4]));
    specs.push(ParamSpec::weight("kv", &[5, 4]));
    specs.push(ParamSpec::weight("prior", &[5]));
    let mut s = seeded_init(&specs, 4)?;
    for b in ["att.q.b", "att.v.b", "mlp.fc1.b"] {
        let t = s.get(b).expect("declared above").map(|_| 0.3);
        s.set(b, t)?;
    }
    let names: Vec<String> = s.names().map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let r = grad_check(&s, &names, h, per_param, |g, s| {
        let att = Attention::load(g, s, "att", 2)?;
        let mlp = Mlp::load(g, s, "mlp")?;
        let x = g.param(s, "x")?;
        let kv = g.param(s, "kv")?;
        let p = g.param(s, "prior")?;
        let p = g.sigmoid(p);
        let y = att.forward(g, x, kv, kv, Some(p))?;
        let z = mlp.forward(g, y)?;
        weigh(g, z)
    })?;
    out.push(("attention_mlp", r));
    Ok(out)
}
