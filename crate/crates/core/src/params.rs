//! Named parameter storage, initialization, and the checkpoint codec.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Fusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
}

/// Shape record written to checkpoint sidecars.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Records every parameter as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.param(e.value.clone()))
            .collect();
        Bindings { vars }
    }

    /// Gradients for every parameter after `tape.backward`; unreached ones are zero.
    pub fn gradients(&self, tape: &Tape<T>, bind: &Bindings) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .zip(&bind.vars)
            .map(|(e, &v)| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); e.value.numel()],
            })
            .collect()
    }

    pub fn infos(&self) -> Vec<TensorInfo> {
        self.entries
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                group: e.group,
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    group: e.group,
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    /// Concatenated `MMT1` records in store order.
    pub fn save_tensors(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            e.value.write_to(&mut w).map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Overwrites every parameter from a checkpoint written by
    /// [`ParamStore::save_tensors`]; shapes must match exactly.
    pub fn load_tensors(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        for e in &mut self.entries {
            let t = Tensor::<T>::read_from(&mut r).map_err(|err| {
                Error::Data(format!("{}: tensor {}: {err}", path.display(), e.name))
            })?;
            if t.shape() != e.value.shape() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor {} has shape {:?} but the config expects {:?}",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )));
            }
            e.value = t;
        }
        let mut rest = [0u8; 1];
        if std::io::Read::read(&mut r, &mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::Dimension(format!(
                "checkpoint {} holds more tensors than the config's {}",
                path.display(),
                self.entries.len()
            )));
        }
        Ok(())
    }
}

/// Worst element found by [`gradcheck_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckWorst {
    pub relative_error: f64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Perturbed evaluations that changed the sign of some ReLU input. Their
    /// difference quotients straddle a kink and do not estimate a derivative.
    pub kink_crossings: usize,
}

/// Largest relative error between tape gradients and the fourth-order
/// central difference `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h` over
/// every parameter element of `store`. `f` must return a scalar.
pub fn gradcheck_params<F>(store: &ParamStore<f64>, f: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &Bindings) -> Result<Var>,
{
    Ok(gradcheck_report(store, f, step)?.relative_error)
}

/// Like [`gradcheck_params`], naming the element with the largest error.
pub fn gradcheck_report<F>(store: &ParamStore<f64>, f: F, step: f64) -> Result<GradcheckWorst>
where
    F: Fn(&mut Tape<f64>, &Bindings) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let bind = s.bind(&mut tape);
        let out = f(&mut tape, &bind)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::Usage("gradcheck function must be scalar".into()));
        }
        Ok((tape.value(out).item(), tape.relu_pattern()))
    };
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let out = f(&mut tape, &bind)?;
    tape.backward(out)?;
    let analytic = store.gradients(&tape, &bind);
    let pattern = tape.relu_pattern();

    let mut probe = store.clone();
    let mut worst = GradcheckWorst {
        relative_error: 0.0,
        param: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        kink_crossings: 0,
    };
    for (p, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = store.entries[p].value.data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.entries[p].value.data_mut()[i] = orig + offset;
                let (v, pat) = eval(&probe)?;
                if pat != pattern {
                    worst.kink_crossings += 1;
                }
                Ok(v)
            };
            let (m2, m1, p1, p2) = (at(-2.0 * step)?, at(-step)?, at(step)?, at(2.0 * step)?);
            probe.entries[p].value.data_mut()[i] = orig;
            let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * step);
            let err = crate::tensor::relative_error(a, numeric);
            if err > worst.relative_error {
                worst.relative_error = err;
                worst.param = store.entries[p].name.clone();
                worst.index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
    }
    Ok(worst)
}

/// Uniform(−a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, a, rng)
}

/// Uniform(−a, a) with `a = sqrt(6 / fan_in)`, suited to ReLU stacks.
pub fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / fan_in as f64).sqrt();
    uniform(shape, a, rng)
}

fn uniform<T: Scalar, R: Rng>(shape: &[usize], a: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect();
    Tensor::new(shape, data).expect("shape and data length agree")
}
