use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BilingualCorpus, Document, Lang};
use crate::error::{Error, Result};

/// Stratified split by language and, when present, by label. Within every
/// stratum of size n, `round(n * train_ratio)` documents (clamped to
/// `1..=n-1`) go to train.
pub fn split_corpus(
    corpus: &BilingualCorpus,
    train_ratio: f64,
    seed: u64,
) -> Result<(BilingualCorpus, BilingualCorpus)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::invalid("train_ratio", "must lie in (0, 1)"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for lang in Lang::BOTH {
        let docs = corpus.docs(lang);
        if docs.len() < 2 {
            return Err(Error::invalid(
                "corpus",
                format!("{lang} needs at least 2 documents to split, found {}", docs.len()),
            ));
        }
        let mut strata: BTreeMap<Option<i64>, Vec<&Document>> = BTreeMap::new();
        for d in docs {
            strata.entry(d.label).or_default().push(d);
        }
        for (label, mut members) in strata {
            if members.len() == 1 {
                match label {
                    Some(label) => return Err(Error::SingletonClass { lang, label }),
                    None => {
                        train.push(members[0].clone());
                        continue;
                    }
                }
            }
            let stratum_key = label.map_or(u64::MAX, |l| l as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (lang.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stratum_key.rotate_left(17),
            );
            members.shuffle(&mut rng);
            let n = members.len();
            let n_train = ((n as f64 * train_ratio).round() as usize).clamp(1, n - 1);
            let (a, b) = members.split_at(n_train);
            train.extend(a.iter().map(|d| (*d).clone()));
            test.extend(b.iter().map(|d| (*d).clone()));
        }
    }
    // restore corpus order inside each side
    let position: std::collections::HashMap<&str, usize> =
        corpus.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    train.sort_by_key(|d| position[d.id.as_str()]);
    test.sort_by_key(|d| position[d.id.as_str()]);
    Ok((BilingualCorpus::new(train)?, BilingualCorpus::new(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn corpus(spec: &[(Lang, Option<i64>, usize)]) -> BilingualCorpus {
        let mut docs = Vec::new();
        for &(lang, label, n) in spec {
            for _ in 0..n {
                docs.push(Document {
                    id: format!("{lang}-{}", docs.len()),
                    lang,
                    tokens: vec!["t".into()],
                    label,
                });
            }
        }
        BilingualCorpus::new(docs).unwrap()
    }

    #[test]
    fn ten_and_ten_at_point_eight() {
        let c = corpus(&[(Lang::L1, None, 10), (Lang::L2, None, 10)]);
        let (train, test) = split_corpus(&c, 0.8, 1).unwrap();
        assert_eq!((train.count(Lang::L1), train.count(Lang::L2)), (8, 8));
        assert_eq!((test.count(Lang::L1), test.count(Lang::L2)), (2, 2));
    }

    #[test]
    fn deterministic_and_partitioning() {
        let c = corpus(&[(Lang::L1, Some(0), 7), (Lang::L1, Some(1), 5), (Lang::L2, None, 9)]);
        let a = split_corpus(&c, 0.7, 42).unwrap();
        let b = split_corpus(&c, 0.7, 42).unwrap();
        assert_eq!(a, b);
        let train: HashSet<_> = a.0.iter().map(|d| d.id.clone()).collect();
        let test: HashSet<_> = a.1.iter().map(|d| d.id.clone()).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), c.len());
    }

    #[test]
    fn stratifies_labels_by_counting() {
        let c = corpus(&[(Lang::L1, Some(0), 6), (Lang::L1, Some(1), 4), (Lang::L2, None, 4)]);
        let (train, _) = split_corpus(&c, 0.5, 9).unwrap();
        let count = |l| train.docs(Lang::L1).iter().filter(|d| d.label == Some(l)).count();
        assert_eq!((count(0), count(1)), (3, 2));
    }

    #[test]
    fn singleton_class_errors() {
        let c = corpus(&[(Lang::L1, Some(0), 3), (Lang::L1, Some(5), 1), (Lang::L2, None, 3)]);
        let err = split_corpus(&c, 0.5, 0).unwrap_err();
        assert!(matches!(err, Error::SingletonClass { label: 5, .. }));
    }
}
