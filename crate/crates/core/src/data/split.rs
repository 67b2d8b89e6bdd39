use super::manifest::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Integer counts per split for each class. Every count is the floor or the
/// ceiling of its exact share; leftover units go to the splits furthest below
/// their running total over the classes seen so far, so class-level rounding
/// does not pile up in one split.
pub fn allocate(class_sizes: &[usize], fractions: [f64; 3]) -> Vec<[usize; 3]> {
    let mut target_so_far = [0.0f64; 3];
    let mut given_so_far = [0usize; 3];
    let mut out = Vec::with_capacity(class_sizes.len());
    for &n in class_sizes {
        let exact = fractions.map(|f| f * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        for s in 0..3 {
            target_so_far[s] += exact[s];
        }
        let mut left = n - counts.iter().sum::<usize>();
        let mut open: Vec<usize> = (0..3).filter(|&s| exact[s] - counts[s] as f64 > 1e-12).collect();
        while left > 0 {
            let deficit = |s: usize| target_so_far[s] - (given_so_far[s] + counts[s]) as f64;
            let (pos, &s) = open
                .iter()
                .enumerate()
                .max_by(|a, b| deficit(*a.1).total_cmp(&deficit(*b.1)).then(b.1.cmp(a.1)))
                .expect("remainder implies a fractional share");
            counts[s] += 1;
            open.remove(pos);
            left -= 1;
        }
        for s in 0..3 {
            given_so_far[s] += counts[s];
        }
        out.push(counts);
    }
    out
}

/// Assigns whole groups (patients when known, else videos) to splits,
/// stratified by label and shuffled deterministically by `seed`.
pub fn grouped_split(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    check_fractions(fractions)?;
    // group key -> label (positive if any member video is positive)
    let mut groups: BTreeMap<String, Label> = BTreeMap::new();
    for v in &manifest.videos {
        let e = groups.entry(v.group_key()).or_insert(v.label);
        if v.label == Label::Positive {
            *e = Label::Positive;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_label: Vec<Vec<&String>> = Vec::new();
    for &label in Label::ALL {
        let mut keys: Vec<&String> = groups.iter().filter(|(_, &l)| l == label).map(|(k, _)| k).collect();
        if !keys.is_empty() && keys.len() < SPLITS.len() {
            return Err(Error::Data(format!(
                "{label} class has {} groups, need at least {}",
                keys.len(),
                SPLITS.len()
            )));
        }
        keys.shuffle(&mut rng);
        per_label.push(keys);
    }
    let sizes: Vec<usize> = per_label.iter().map(Vec::len).collect();
    let mut assignment: BTreeMap<&String, Split> = BTreeMap::new();
    for (keys, counts) in per_label.iter().zip(allocate(&sizes, fractions)) {
        let mut it = keys.iter();
        for (split, n) in SPLITS.iter().zip(counts) {
            for k in it.by_ref().take(n) {
                assignment.insert(k, *split);
            }
        }
    }
    let mut out = manifest.clone();
    for v in &mut out.videos {
        v.split = Some(assignment[&v.group_key()]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{Probe, SourceClass, VideoRecord};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn manifest(pos: usize, neg: usize) -> DatasetManifest {
        let mut v = Vec::new();
        for i in 0..pos {
            v.push(VideoRecord::new(format!("p{i}"), SourceClass::Covid, Probe::Convex, vec![format!("p{i}_0.pgm")]));
        }
        for i in 0..neg {
            v.push(VideoRecord::new(format!("n{i}"), SourceClass::Normal, Probe::Convex, vec![format!("n{i}_0.pgm")]));
        }
        DatasetManifest::new(v, "")
    }

    fn split_sizes(m: &DatasetManifest) -> [usize; 3] {
        SPLITS.map(|s| m.videos.iter().filter(|v| v.split == Some(s)).count())
    }

    #[test]
    fn ten_videos_split_eight_one_one() {
        let m = grouped_split(&manifest(5, 5), [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!(split_sizes(&m), [8, 1, 1]);
    }

    #[test]
    fn seed_determinism() {
        let base = manifest(5, 5);
        let a = grouped_split(&base, [0.8, 0.1, 0.1], 1).unwrap();
        let b = grouped_split(&base, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(a, b);
        let differs = (2..20).any(|s| grouped_split(&base, [0.8, 0.1, 0.1], s).unwrap() != a);
        assert!(differs);
        let c = grouped_split(&base, [0.8, 0.1, 0.1], 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_videos_per_class() {
        assert!(matches!(grouped_split(&manifest(2, 5), [0.7, 0.15, 0.15], 0), Err(Error::Data(_))));
    }

    #[test]
    fn bad_fractions() {
        assert!(matches!(grouped_split(&manifest(5, 5), [0.8, 0.1, 0.2], 0), Err(Error::Config(_))));
        assert!(matches!(grouped_split(&manifest(5, 5), [1.0, 0.0, 0.0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn patients_stay_together() {
        let mut m = manifest(6, 6);
        for (i, v) in m.videos.iter_mut().enumerate() {
            v.patient_id = Some(format!("pt{}", i / 2));
        }
        let s = grouped_split(&m, [0.34, 0.33, 0.33], 4).unwrap();
        for pair in s.videos.chunks(2) {
            assert_eq!(pair[0].split, pair[1].split);
        }
    }

    proptest! {
        #[test]
        fn leakage_free_and_stratified(pos in 3usize..40, neg in 3usize..40, seed in any::<u64>(),
                                        a in 1u32..10, b in 1u32..10, c in 1u32..10) {
            let t = (a + b + c) as f64;
            let f = [a as f64 / t, b as f64 / t, 1.0 - a as f64 / t - b as f64 / t];
            let m = grouped_split(&manifest(pos, neg), f, seed).unwrap();
            let sets: Vec<HashSet<&str>> = SPLITS.iter()
                .map(|&s| m.videos.iter().filter(|v| v.split == Some(s)).map(|v| v.video_id.as_str()).collect())
                .collect();
            for i in 0..3 {
                for j in i + 1..3 {
                    prop_assert!(sets[i].is_disjoint(&sets[j]));
                }
            }
            prop_assert_eq!(sets.iter().map(HashSet::len).sum::<usize>(), pos + neg);
            for (label, n) in [(Label::Positive, pos), (Label::Negative, neg)] {
                for (k, &s) in SPLITS.iter().enumerate() {
                    let got = m.videos.iter().filter(|v| v.label == label && v.split == Some(s)).count();
                    prop_assert!((got as f64 - f[k] * n as f64).abs() <= 1.0);
                }
            }
        }
    }
}
