//! Seeded train/val/test assignment.
//!
//! Signer-dependent mode stratifies by class: each class is shuffled and cut
//! into per-split quotas that add up to globally rounded split sizes.
//! Signer-independent mode moves whole signers, largest first, into whichever
//! split is furthest below its target sample count.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    SignerDependent,
    SignerIndependent,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signer_dependent" => Ok(Self::SignerDependent),
            "signer_independent" => Ok(Self::SignerIndependent),
            other => Err(Error::Config(format!(
                "unknown split mode {other:?} (expected signer_dependent or signer_independent)"
            ))),
        }
    }
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidFractions(format!("{f:?} must all be positive")));
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidFractions(format!("{f:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Global split sizes: val and test rounded, train takes the rest.
pub fn split_sizes(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let val = (n as f64 * fractions[1]).round() as usize;
    let test = ((n as f64 * fractions[2]).round() as usize).min(n - val.min(n));
    [n - val.min(n) - test, val.min(n), test]
}

/// Integer per-class quotas whose rows sum to class counts and whose columns
/// approach the global `sizes`.
fn class_quotas(counts: &[usize], fractions: &[f64; 3], sizes: [usize; 3]) -> Vec<[usize; 3]> {
    let mut quotas: Vec<[usize; 3]> = counts
        .iter()
        .map(|&n| {
            let mut q = [0; 3];
            for k in 0..3 {
                q[k] = (n as f64 * fractions[k]).floor() as usize;
            }
            // every split sees the class when it has enough samples
            if n >= 3 {
                for k in 1..3 {
                    if q[k] == 0 {
                        q[k] = 1;
                    }
                }
            }
            while q.iter().sum::<usize>() > n {
                let k = (0..3).max_by_key(|&k| q[k]).expect("three splits");
                q[k] -= 1;
            }
            q
        })
        .collect();
    let mut deficit = [0i64; 3];
    for k in 0..3 {
        deficit[k] = sizes[k] as i64 - quotas.iter().map(|q| q[k] as i64).sum::<i64>();
    }
    // largest fractional remainders first, ties by class then split order
    let mut cells: Vec<(f64, usize, usize)> = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for k in 0..3 {
            let exact = n as f64 * fractions[k];
            cells.push((exact - exact.floor(), c, k));
        }
    }
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut left: Vec<usize> = counts.iter().zip(&quotas).map(|(&n, q)| n - q.iter().sum::<usize>()).collect();
    for &(_, c, k) in &cells {
        if left[c] > 0 && deficit[k] > 0 {
            quotas[c][k] += 1;
            left[c] -= 1;
            deficit[k] -= 1;
        }
    }
    for c in 0..counts.len() {
        while left[c] > 0 {
            let k = (0..3).max_by_key(|&k| (deficit[k], std::cmp::Reverse(k))).expect("three splits");
            quotas[c][k] += 1;
            left[c] -= 1;
            deficit[k] -= 1;
        }
    }
    quotas
}

/// Assigns every sample to a split; the input manifest is returned with `splits` set.
pub fn split_dataset(
    manifest: &DatasetManifest,
    mode: SplitMode,
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    check_fractions(&fractions)?;
    let n = manifest.samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: BTreeMap<&str, Split> = BTreeMap::new();
    match mode {
        SplitMode::SignerDependent => {
            let sizes = split_sizes(n, &fractions);
            let quotas = class_quotas(&manifest.class_counts(), &fractions, sizes);
            for (c, q) in quotas.iter().enumerate() {
                let mut ids: Vec<&str> = manifest
                    .samples
                    .iter()
                    .filter(|s| s.class_index == c)
                    .map(|s| s.id.as_str())
                    .collect();
                ids.sort_unstable();
                ids.shuffle(&mut rng);
                let mut it = ids.into_iter();
                for (k, split) in Split::ALL.into_iter().enumerate() {
                    for id in it.by_ref().take(q[k]) {
                        assigned.insert(id, split);
                    }
                }
            }
        }
        SplitMode::SignerIndependent => {
            let mut by_signer: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for s in &manifest.samples {
                by_signer.entry(s.signer_id.as_str()).or_default().push(s.id.as_str());
            }
            if by_signer.len() < 3 {
                return Err(Error::TooFewSigners { found: by_signer.len() });
            }
            let mut signers: Vec<(&str, Vec<&str>)> = by_signer.into_iter().collect();
            signers.shuffle(&mut rng);
            signers.sort_by(|a, b| b.1.len().cmp(&a.1.len()));
            let targets = fractions.map(|f| f * n as f64);
            let mut filled = [0usize; 3];
            for (_, ids) in signers {
                let k = (0..3)
                    .max_by(|&a, &b| {
                        let da = targets[a] - filled[a] as f64;
                        let db = targets[b] - filled[b] as f64;
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("three splits");
                filled[k] += ids.len();
                for id in ids {
                    assigned.insert(id, Split::ALL[k]);
                }
            }
        }
    }
    for split in Split::ALL {
        if !assigned.values().any(|&s| s == split) {
            return Err(Error::EmptySplit(split.name().to_string()));
        }
    }
    let splits: IndexMap<String, Split> = manifest
        .samples
        .iter()
        .map(|s| (s.id.clone(), assigned[s.id.as_str()]))
        .collect();
    let mut out = manifest.clone();
    out.splits = Some(splits);
    Ok(out)
}
