use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, DropoutKey};

/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, all in f64. Returns the largest
/// per-element relative error.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |input: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(input);
        let out = f(&mut tape, v)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::Usage("gradcheck function must be scalar".into()));
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(v) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.numel()],
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

type Builder = fn(&mut Tape<f64>, Var, u64) -> Result<Var>;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = keyed_rng(&[seed, shape.iter().product::<usize>() as u64]);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn weights(tape: &mut Tape<f64>, shape: &[usize], seed: u64) -> Var {
    tape.constant(random(shape, seed ^ 0xABCD))
}

/// Projects onto fixed random weights so every output element matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = weights(tape, &shape, seed + 77);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Named scalar functions covering every differentiable op, each taking its
/// input tensor shape and a seed for the fixed operands.
pub fn op_cases() -> Vec<(&'static str, Vec<usize>, Builder)> {
    vec![
        ("matmul", vec![3, 4], |t, x, s| {
            let w = weights(t, &[4, 5], s);
            let y = t.matmul(x, w)?;
            project(t, y, s)
        }),
        ("matmul rhs", vec![4, 2], |t, x, s| {
            let a = weights(t, &[3, 4], s);
            let y = t.matmul(a, x)?;
            project(t, y, s)
        }),
        ("bmm", vec![2, 3, 4], |t, x, s| {
            let w = weights(t, &[2, 4, 2], s);
            let y = t.bmm(x, w)?;
            let z = t.bmm(w, y).ok();
            let _ = z;
            project(t, y, s)
        }),
        ("add/sub/mul", vec![6], |t, x, s| {
            let w = weights(t, &[6], s);
            let a = t.add(x, w)?;
            let b = t.sub(a, x)?;
            let c = t.mul(a, x)?;
            let d = t.add(b, c)?;
            project(t, d, s)
        }),
        ("bias_add", vec![4], |t, x, s| {
            let m = weights(t, &[3, 4], s);
            let y = t.bias_add(m, x, 1)?;
            let sq = t.mul(y, y)?;
            project(t, sq, s)
        }),
        ("channel bias", vec![2, 3, 2, 2], |t, x, s| {
            let b = weights(t, &[3], s);
            let y = t.bias_add(x, b, 1)?;
            let sq = t.mul(y, y)?;
            project(t, sq, s)
        }),
        ("scale_shift", vec![3, 4], |t, x, s| {
            let g = weights(t, &[4], s);
            let b = weights(t, &[4], s + 1);
            let y = t.scale_shift(x, g, b, 1)?;
            let sq = t.mul(y, y)?;
            project(t, sq, s)
        }),
        ("relu", vec![10], |t, x, s| {
            let y = t.relu(x);
            project(t, y, s)
        }),
        ("gelu", vec![10], |t, x, s| {
            let y = t.gelu(x);
            project(t, y, s)
        }),
        ("softmax axis 1", vec![3, 5], |t, x, s| {
            let y = t.softmax(x, 1)?;
            project(t, y, s)
        }),
        ("softmax axis 0", vec![3, 5], |t, x, s| {
            let y = t.softmax(x, 0)?;
            project(t, y, s)
        }),
        ("layer_norm", vec![3, 6], |t, x, s| {
            let g = weights(t, &[6], s);
            let b = weights(t, &[6], s + 1);
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, s)
        }),
        ("group normalize", vec![2, 3, 2, 2], |t, x, s| {
            let y = t.normalize(x, 1, 1e-5)?;
            project(t, y, s)
        }),
        ("concat/slice", vec![2, 3], |t, x, s| {
            let w = weights(t, &[2, 2], s);
            let y = t.concat(x, w, 1)?;
            let z = t.slice(y, 1, 1, 3)?;
            let q = t.mul(z, z)?;
            project(t, q, s)
        }),
        ("permute/reshape", vec![2, 3, 4], |t, x, s| {
            let y = t.permute(x, &[2, 0, 1])?;
            let z = t.reshape(y, &[4, 6])?;
            let q = t.mul(z, z)?;
            project(t, q, s)
        }),
        ("gather_rows", vec![4, 3], |t, x, s| {
            let y = t.gather_rows(x, &[2, 0, 2, 3])?;
            let q = t.mul(y, y)?;
            project(t, q, s)
        }),
        ("conv2d input", vec![2, 2, 5, 5], |t, x, s| {
            let w = weights(t, &[3, 2, 3, 3], s);
            let y = t.conv2d(x, w, 2, 1)?;
            project(t, y, s)
        }),
        ("conv2d kernel", vec![3, 2, 3, 3], |t, w, s| {
            let x = weights(t, &[2, 2, 5, 5], s);
            let y = t.conv2d(x, w, 1, 1)?;
            let q = t.mul(y, y)?;
            project(t, q, s)
        }),
        ("global_avg_pool", vec![2, 3, 3], |t, x, s| {
            let y = t.global_avg_pool(x)?;
            let q = t.mul(y, y)?;
            project(t, q, s)
        }),
        ("mean", vec![7], |t, x, _| {
            let q = t.mul(x, x)?;
            Ok(t.mean(q))
        }),
        ("cross_entropy", vec![3, 4], |t, x, _| t.cross_entropy(x, &[1, 0, 3])),
        ("attention", vec![3, 4], |t, x, s| {
            let k = weights(t, &[3, 4], s);
            let v = weights(t, &[3, 4], s + 1);
            let a = t.attention(x, k, v, Some(&[1, 1, 0]))?;
            let b = t.attention(k, x, x, None)?;
            let y = t.add(a.output, b.output)?;
            project(t, y, s)
        }),
        ("scale/log", vec![5], |t, x, s| {
            let sq = t.mul(x, x)?;
            let y = t.scale(sq, 2.5);
            let one = t.constant(Tensor::full(&[5], 0.5));
            let pos = t.add(y, one)?;
            let l = t.log(pos);
            project(t, l, s)
        }),
        ("transpose/sum", vec![3, 4], |t, x, s| {
            let y = t.transpose(x)?;
            let w = weights(t, &[3, 2], s);
            let z = t.matmul(y, w)?;
            let q = t.mul(z, z)?;
            Ok(t.sum(q))
        }),
        ("dropout", vec![5, 3], |t, x, s| {
            let d = t.dropout(x, 0.3, true, DropoutKey::new(s, 2, 5))?;
            let q = t.mul(d, d)?;
            project(t, q, s)
        }),
    ]
}

/// Largest relative error per op case for one seed.
pub fn check_ops(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    op_cases()
        .into_iter()
        .map(|(name, shape, build)| {
            let x = random(&shape, 1000 + seed);
            Ok((name, gradcheck(|t, v| build(t, v, seed), &x, 1e-6)?))
        })
        .collect()
}
