use super::RatingMatrix;

/// Per-user relevant test items and the mean they were judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceSets {
    /// Relevant test items per target user, ascending.
    pub relevant: Vec<Vec<usize>>,
    /// `None` for users with no reference and no test ratings.
    pub user_mean: Vec<Option<f64>>,
}

impl RelevanceSets {
    pub fn n_users(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_relevant(&self, user: usize, item: usize) -> bool {
        self.relevant[user].binary_search(&item).is_ok()
    }
}

fn user_means(m: &RatingMatrix) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; m.n_users()];
    let mut count = vec![0usize; m.n_users()];
    for r in m.entries() {
        sum[r.user] += r.value;
        count[r.user] += 1;
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Marks a test item relevant iff its rating is strictly above the user's
/// mean rating in `reference`. Users without reference ratings fall back to
/// the mean of their own test ratings.
pub fn label_relevance(test: &RatingMatrix, reference: &RatingMatrix) -> RelevanceSets {
    let n = test.n_users().max(reference.n_users());
    let mut ref_mean = user_means(reference);
    ref_mean.resize(n, None);
    let mut test_mean = user_means(test);
    test_mean.resize(n, None);
    let user_mean: Vec<Option<f64>> = ref_mean.into_iter().zip(test_mean).map(|(r, t)| r.or(t)).collect();

    let mut relevant = vec![Vec::new(); n];
    for r in test.entries() {
        if let Some(mean) = user_mean[r.user] {
            if r.value > mean {
                relevant[r.user].push(r.item);
            }
        }
    }
    for list in &mut relevant {
        list.sort_unstable();
    }
    RelevanceSets { relevant, user_mean }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rating;
    use proptest::prelude::*;

    fn m(entries: &[(usize, usize, f64)]) -> RatingMatrix {
        let e = entries
            .iter()
            .map(|&(user, item, value)| Rating { user, item, value })
            .collect();
        RatingMatrix::new("t", 3, 8, e).unwrap()
    }

    #[test]
    fn strict_threshold_against_reference_mean() {
        let reference = m(&[(0, 0, 5.0), (0, 1, 3.0)]);
        let test = m(&[(0, 2, 5.0), (0, 3, 3.0)]);
        let rel = label_relevance(&test, &reference);
        assert_eq!(rel.user_mean[0], Some(4.0));
        assert_eq!(rel.relevant[0], vec![2]);
    }

    #[test]
    fn equal_ratings_give_nothing() {
        let reference = m(&[(0, 0, 3.0), (0, 1, 3.0)]);
        let test = m(&[(0, 2, 3.0), (0, 3, 3.0)]);
        assert!(label_relevance(&test, &reference).relevant[0].is_empty());
    }

    #[test]
    fn rating_at_mean_is_irrelevant() {
        let reference = m(&[(1, 0, 2.0), (1, 1, 4.0)]);
        let test = m(&[(1, 5, 3.0)]);
        assert!(label_relevance(&test, &reference).relevant[1].is_empty());
    }

    #[test]
    fn falls_back_to_test_mean() {
        let reference = m(&[]);
        let test = m(&[(2, 0, 1.0), (2, 1, 5.0)]);
        let rel = label_relevance(&test, &reference);
        assert_eq!(rel.user_mean[2], Some(3.0));
        assert_eq!(rel.relevant[2], vec![1]);
        assert_eq!(rel.user_mean[0], None);
    }

    proptest! {
        #[test]
        fn entry_order_does_not_matter(
            ratings in proptest::collection::vec(1u8..=5, 8),
            rot in 0usize..8,
        ) {
            let entries: Vec<_> = ratings.iter().enumerate().map(|(i, &r)| (i % 3, i, r as f64)).collect();
            let reference = m(&entries[..4]);
            let test = m(&entries[4..]);
            let mut rotated = entries[4..].to_vec();
            rotated.rotate_left(rot % 4);
            rotated.reverse();
            prop_assert_eq!(
                label_relevance(&test, &reference),
                label_relevance(&m(&rotated), &reference)
            );
        }
    }
}
