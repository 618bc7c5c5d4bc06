//! Labeled samples, deduplication, stratified splitting and a synthetic
//! order-sensitive corpus.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub code: String,
    pub label: usize,
    pub id: u64,
}

impl LabeledSample {
    pub fn new(code: impl Into<String>, label: usize, id: u64) -> Self {
        LabeledSample {
            code: code.into(),
            label,
            id,
        }
    }
}

/// Collapses every whitespace run to one space and trims both ends.
pub fn normalize_whitespace(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    for word in code.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Drops samples whose normalized code repeats an earlier one. Returns the
/// survivors in input order and the number removed.
pub fn dedupe(samples: Vec<LabeledSample>) -> (Vec<LabeledSample>, usize) {
    let mut seen = BTreeSet::new();
    let before = samples.len();
    let kept: Vec<LabeledSample> = samples
        .into_iter()
        .filter(|s| seen.insert(normalize_whitespace(&s.code)))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub seed: u64,
    /// Classes too small to stratify, kept entirely in `train`.
    pub warnings: Vec<String>,
}

impl DatasetSplits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Splits `target` slots across classes in proportion to `sizes` by
/// largest remainder; ties go to the lower class index.
fn apportion(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quota: Vec<usize> = sizes.iter().map(|&n| n * target / total).collect();
    let mut rest: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(c, &n)| ((n * target) % total, c))
        .collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = target - quota.iter().sum::<usize>();
    for &(_, c) in rest.iter().take(missing) {
        quota[c] += 1;
    }
    quota
}

/// Seeded, label-stratified 80/10/10 split. Validation and test each get
/// `round(N / 10)` samples; classes with fewer than 3 samples go to train.
pub fn split(samples: Vec<LabeledSample>, seed: u64) -> Result<DatasetSplits> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::data(format!(
            "need at least 10 samples to split, got {n}"
        )));
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = samples.iter().find(|s| !ids.insert(s.id)) {
        return Err(Error::data(format!("duplicate sample id {}", dup.id)));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &samples {
        *counts.entry(s.label).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::data("need at least 2 classes to split"));
    }
    let mut warnings = Vec::new();
    let labels: Vec<usize> = counts.keys().copied().collect();
    let eligible: Vec<usize> = labels
        .iter()
        .map(|l| {
            let c = counts[l];
            if c < 3 {
                warnings.push(format!("class {l} has {c} samples; all kept in train"));
                0
            } else {
                c
            }
        })
        .collect();
    let held = (n + 5) / 10;
    let val_quota = apportion(&eligible, held.min(eligible.iter().sum()));
    let remaining: Vec<usize> = eligible
        .iter()
        .zip(&val_quota)
        .map(|(e, v)| e - v)
        .collect();
    let test_target = held.min(remaining.iter().sum());
    let test_quota = apportion(&eligible, test_target);
    // Keep at least one sample of every class in train.
    let mut val_left = Vec::with_capacity(labels.len());
    let mut test_left = Vec::with_capacity(labels.len());
    for (i, &e) in eligible.iter().enumerate() {
        let v = val_quota[i].min(e.saturating_sub(1));
        let t = test_quota[i].min(e.saturating_sub(1 + v));
        val_left.push(v);
        test_left.push(t);
    }

    let mut rng = RandomSource::new(seed);
    let order = rng.permutation(n);
    let mut slots: Vec<Option<LabeledSample>> = samples.into_iter().map(Some).collect();
    let index_of: BTreeMap<usize, usize> =
        labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for k in order {
        let s = slots[k].take().expect("each index visited once");
        let c = index_of[&s.label];
        if val_left[c] > 0 {
            val_left[c] -= 1;
            val.push(s);
        } else if test_left[c] > 0 {
            test_left[c] -= 1;
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok(DatasetSplits {
        train,
        val,
        test,
        seed,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    /// Filler statements per sample, inclusive range.
    pub min_fillers: usize,
    pub max_fillers: usize,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            per_class,
            seed,
            min_fillers: 8,
            max_fillers: 16,
        }
    }
}

const MARKERS: [(&str, &str); 4] = [
    ("acquire(m);", "release(m);"),
    ("open(f);", "close(f);"),
    ("alloc(p);", "free(p);"),
    ("push(s);", "pop(s);"),
];

const FILLERS: [&str; 16] = [
    "x = x + 1;",
    "y = y * 2;",
    "z = x - y;",
    "i++;",
    "j--;",
    "n = n / 2;",
    "log(x);",
    "k = i + j;",
    "t = tmp;",
    "tmp = y;",
    "a[i] = b;",
    "b = a[j];",
    "c += 3;",
    "d -= c;",
    "check(n);",
    "sum += k;",
];

fn marker_pair(k: usize) -> (String, String) {
    match MARKERS.get(k) {
        Some(&(a, b)) => (a.into(), b.into()),
        None => (format!("begin{k}();"), format!("end{k}();")),
    }
}

/// Code-like samples where class `2k` places marker `a_k` before `b_k` and
/// class `2k+1` places `b_k` before `a_k`. Samples are generated in twins
/// sharing fillers and positions, so paired classes have identical token
/// multisets. With an odd class count the last class carries a single
/// extra marker. Ids count up from 0.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<LabeledSample>> {
    if spec.classes < 2 {
        return Err(Error::param("synthetic corpus needs at least 2 classes"));
    }
    if spec.min_fillers == 0 || spec.min_fillers > spec.max_fillers {
        return Err(Error::param(
            "filler range must be non-empty and start above 0",
        ));
    }
    let mut rng = RandomSource::new(spec.seed);
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    let mut next_id = 0u64;
    let draw_fillers = |rng: &mut RandomSource| -> Vec<&'static str> {
        let len = spec.min_fillers + rng.below(spec.max_fillers - spec.min_fillers + 1);
        (0..len)
            .map(|_| FILLERS[rng.below(FILLERS.len())])
            .collect()
    };
    for _ in 0..spec.per_class {
        for pair in 0..spec.classes / 2 {
            let fillers = draw_fillers(&mut rng);
            let slots = fillers.len() + 2;
            let first = rng.below(slots - 1);
            let second = first + 1 + rng.below(slots - first - 1);
            let (a, b) = marker_pair(pair);
            for (label, (x, y)) in [(2 * pair, (&a, &b)), (2 * pair + 1, (&b, &a))] {
                let mut stmts: Vec<&str> = fillers.clone();
                stmts.insert(first, x);
                stmts.insert(second, y);
                out.push(LabeledSample::new(stmts.join(" "), label, next_id));
                next_id += 1;
            }
        }
        if spec.classes % 2 == 1 {
            let mut stmts = draw_fillers(&mut rng);
            let at = rng.below(stmts.len() + 1);
            stmts.insert(at, "signal(e);");
            out.push(LabeledSample::new(
                stmts.join(" "),
                spec.classes - 1,
                next_id,
            ));
            next_id += 1;
        }
    }
    Ok(out)
}
