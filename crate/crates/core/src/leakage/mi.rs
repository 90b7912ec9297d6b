use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MiError {
    #[error("no samples")]
    EmptySample,
    #[error("bin count must be positive")]
    NoBins,
}

/// Equal-width bins over the observed range of the times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
}

impl Binning {
    pub fn over(samples: &[(usize, f64)], n_bins: usize) -> Result<Binning, MiError> {
        if n_bins == 0 {
            return Err(MiError::NoBins);
        }
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, t)| (lo.min(*t), hi.max(*t)));
        if samples.is_empty() {
            return Err(MiError::EmptySample);
        }
        // All times equal: a single bin.
        let n_bins = if hi > lo { n_bins } else { 1 };
        Ok(Binning { lo, hi, n_bins })
    }

    pub fn bin(&self, t: f64) -> usize {
        if self.n_bins == 1 {
            return 0;
        }
        let k = ((t - self.lo) / (self.hi - self.lo) * self.n_bins as f64).floor() as usize;
        k.min(self.n_bins - 1)
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        if self.n_bins == 1 {
            return (self.lo, self.hi);
        }
        let w = (self.hi - self.lo) / self.n_bins as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }
}

/// Joint counts of (class, bin).
pub fn joint_counts(samples: &[(usize, f64)], b: &Binning) -> BTreeMap<(usize, usize), u64> {
    let mut joint = BTreeMap::new();
    for (k, t) in samples {
        *joint.entry((*k, b.bin(*t))).or_insert(0) += 1;
    }
    joint
}

/// Plug-in mutual information, in bits, of a joint count table.
pub fn mi_from_counts(joint: &BTreeMap<(usize, usize), u64>) -> f64 {
    let n: u64 = joint.values().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let mut pk: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(k, b), &c) in joint {
        *pk.entry(k).or_insert(0.0) += c as f64 / n;
        *pb.entry(b).or_insert(0.0) += c as f64 / n;
    }
    let mut i = 0.0;
    for (&(k, b), &c) in joint {
        if c == 0 {
            continue;
        }
        let p = c as f64 / n;
        i += p * (p / (pk[&k] * pb[&b])).log2();
    }
    i.max(0.0)
}

/// `I(K;T)` with `T` discretized into `n_bins` equal-width bins.
pub fn mutual_information(samples: &[(usize, f64)], n_bins: usize) -> Result<f64, MiError> {
    let b = Binning::over(samples, n_bins)?;
    Ok(mi_from_counts(&joint_counts(samples, &b)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistRow {
    pub class: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

/// One row per class and bin, empty bins included.
pub fn histogram(samples: &[(usize, f64)], n_bins: usize) -> Result<Vec<HistRow>, MiError> {
    let b = Binning::over(samples, n_bins)?;
    let joint = joint_counts(samples, &b);
    let mut classes: Vec<usize> = samples.iter().map(|(k, _)| *k).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut rows = Vec::new();
    for k in classes {
        for bin in 0..b.n_bins {
            let (lo, hi) = b.bounds(bin);
            rows.push(HistRow {
                class: k,
                bin_lo: lo,
                bin_hi: hi,
                count: joint.get(&(k, bin)).copied().unwrap_or(0),
            });
        }
    }
    Ok(rows)
}

pub fn histogram_csv(rows: &[HistRow]) -> String {
    let mut s = String::from("class,bin_lo,bin_hi,count\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.class, r.bin_lo, r.bin_hi, r.count);
    }
    s
}
