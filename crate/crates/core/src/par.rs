//! Order-preserving parallel helpers. Results never depend on the worker count.

/// Evaluates `f(0..count)` and returns the results in index order.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Sums `items` pairwise along a fixed binary tree over their indices.
///
/// The tree shape depends only on `items.len()`, so the floating-point result
/// is identical however the items were produced.
pub fn tree_reduce<T, F>(mut items: Vec<T>, mut combine: F) -> Option<T>
where
    F: FnMut(T, T) -> T,
{
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// SplitMix64 finalizer, used to derive independent seeds from a master seed.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = splitmix(z ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_shape_is_fixed() {
        let v: Vec<u32> = (1..=7).collect();
        let s = tree_reduce(v, |a, b| a * 10 + b).unwrap();
        // ((1,2),(3,4)),((5,6),7)
        assert_eq!(s, (((12 * 10 + 34) * 10) + (56 * 10 + 7)));
        assert_eq!(tree_reduce(Vec::<u32>::new(), |a, b| a + b), None);
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, &[32, 0]), mix_seed(1, &[32, 1]));
        assert_ne!(mix_seed(1, &[32, 0]), mix_seed(2, &[32, 0]));
        assert_eq!(mix_seed(7, &[3]), mix_seed(7, &[3]));
    }
}
