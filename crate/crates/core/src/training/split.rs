use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Usage(format!(
                "unknown split {s:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.10,
            test: 0.20,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must lie in [0,1] and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Sample indices per split, each list ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<usize> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Split membership per sample index.
    pub fn assignment(&self, n: usize) -> Vec<Option<Split>> {
        let mut out = vec![None; n];
        for s in Split::ALL {
            for &i in self.get(s) {
                out[i] = Some(s);
            }
        }
        out
    }
}

/// Largest-remainder allocation of `n` items over `fractions`. Remainder ties
/// go to the earlier bucket.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| n as f64 * f).collect();
    // the epsilon keeps exact products such as 10·0.7 from flooring to 6
    let mut counts: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - counts[a] as f64;
        let rb = raw[b] - counts[b] as f64;
        rb.partial_cmp(&ra).expect("finite fractions").then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-class largest-remainder split with a seeded shuffle inside each class.
/// With `stratified = false` the whole corpus is treated as one class.
pub fn stratified_split(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        let key = if spec.stratified { y } else { 0 };
        by_class.entry(key).or_default().push(i);
    }
    let mut out = SplitIndices::default();
    for (&class, members) in &by_class {
        if members.len() < 3 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; a stratified split needs at least 3",
                members.len()
            )));
        }
        let mut members = members.clone();
        members.shuffle(&mut keyed_rng(&[0x5B117, spec.seed, class as u64]));
        let counts = largest_remainder(members.len(), &spec.fractions());
        let mut start = 0;
        for (s, &c) in Split::ALL.iter().zip(&counts) {
            out.get_mut(*s).extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for s in Split::ALL {
        out.get_mut(s).sort_unstable();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fractions() {
        assert_eq!(largest_remainder(10, &[0.7, 0.1, 0.2]), vec![7, 1, 2]);
        assert_eq!(largest_remainder(3, &[0.7, 0.1, 0.2]), vec![2, 0, 1]);
    }

    #[test]
    fn too_small_class_is_data_error() {
        let labels = [0, 0, 0, 1, 1];
        assert!(matches!(
            stratified_split(&labels, &SplitSpec::default()),
            Err(Error::Data(_))
        ));
    }
}
