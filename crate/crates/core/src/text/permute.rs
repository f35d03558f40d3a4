use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Document, PermutationPair};
use crate::error::{Error, Result};

/// Rearranges `items` so that position `i` holds `items[order[i]]`.
pub fn apply_order<T: Clone>(items: &[T], order: &[usize]) -> Result<Vec<T>> {
    if order.len() != items.len() {
        return Err(Error::Contract(format!(
            "order of length {} for {} items",
            order.len(),
            items.len()
        )));
    }
    order
        .iter()
        .map(|&i| {
            items
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Index(format!("order entry {i} out of range")))
        })
        .collect()
}

pub fn inverse_order(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

/// Number of distinct arrangements of a multiset with the given class
/// sizes, saturating at `usize::MAX`.
fn arrangements(class_sizes: &[usize]) -> usize {
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    for &c in class_sizes {
        // Each partial product is a multinomial coefficient, so the division
        // is exact.
        for j in 1..=c as u128 {
            placed += 1;
            total = match total.checked_mul(placed) {
                Some(t) => t / j,
                None => return usize::MAX,
            };
        }
    }
    usize::try_from(total).unwrap_or(usize::MAX)
}

/// Rearrangements of `labels` in lexicographic order, starting after the
/// sorted one.
fn next_arrangement(labels: &mut [usize]) -> bool {
    let n = labels.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && labels[i - 1] >= labels[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while labels[j] <= labels[i - 1] {
        j -= 1;
    }
    labels.swap(i - 1, j);
    labels[i..].reverse();
    true
}

/// Up to `k` orderings of the document's sentences, each producing a
/// sentence sequence different from the original and from each other.
/// Identical sentences are interchangeable, so a document with repeated
/// sentences has fewer than `n! - 1` candidates.
pub fn generate_permutations<R: Rng + ?Sized>(
    doc: &Document,
    k: usize,
    rng: &mut R,
) -> Result<Vec<PermutationPair>> {
    let n = doc.sentences.len();
    if n < 2 {
        return Err(Error::ExcludedDocument(format!(
            "{} has {n} sentence(s); ordering needs at least 2",
            doc.id
        )));
    }
    let mut class_of: HashMap<&str, usize> = HashMap::new();
    let labels: Vec<usize> = doc
        .sentences
        .iter()
        .map(|s| {
            let next = class_of.len();
            *class_of.entry(s.as_str()).or_insert(next)
        })
        .collect();
    let mut sizes = vec![0; class_of.len()];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let target = k.min(arrangements(&sizes) - 1);

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(labels.clone());
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(target);
    let mut order: Vec<usize> = (0..n).collect();
    let mut attempts = 0;
    while orders.len() < target && attempts < 50 * k {
        attempts += 1;
        order.shuffle(rng);
        let key: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        if seen.insert(key) {
            orders.push(order.clone());
        }
    }

    if orders.len() < target {
        let mut candidates = Vec::new();
        let mut arr = labels.clone();
        arr.sort_unstable();
        loop {
            if !seen.contains(&arr) {
                candidates.push(arr.clone());
            }
            if !next_arrangement(&mut arr) {
                break;
            }
        }
        candidates.shuffle(rng);
        candidates.truncate(target - orders.len());
        for arr in candidates {
            orders.push(order_for(&labels, &arr));
        }
    }

    Ok(orders
        .into_iter()
        .enumerate()
        .map(|(perm_index, order)| PermutationPair {
            original_id: doc.id.clone(),
            perm_index,
            order,
        })
        .collect())
}

/// An index order realizing the label sequence `arr`, taking repeated
/// sentences in their original order.
fn order_for(labels: &[usize], arr: &[usize]) -> Vec<usize> {
    let mut slots: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &l) in labels.iter().enumerate().rev() {
        slots.entry(l).or_default().push(i);
    }
    arr.iter()
        .map(|l| slots.get_mut(l).and_then(Vec::pop).expect("same multiset"))
        .collect()
}

#[cfg(test)]
pub(crate) fn count_arrangements(class_sizes: &[usize]) -> usize {
    arrangements(class_sizes)
}
