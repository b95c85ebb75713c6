//! Worker-pool parallel map with deterministic ordered collection.
//!
//! All compute-heavy stages funnel through [`map_ordered`]: results come
//! back in input order, so output is byte-identical regardless of the
//! worker count. With the `parallel` feature disabled the same function
//! is a plain sequential map.

/// Worker count for a parallel map. `0` means "use all available cores".
pub type Workers = usize;

#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], workers: Workers, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use rayon::prelude::*;
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 1 {
        builder = builder.num_threads(workers);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| items.par_iter().map(|it| f(it)).collect()),
        // Pool creation can fail under resource limits; the sequential
        // path produces the same output.
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], _workers: Workers, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    items.iter().map(f).collect()
}

/// Resolve the effective worker count: an explicit setting wins, then the
/// `TIACS_WORKERS` environment variable, then auto (all cores).
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> Workers {
    if let Some(w) = flag {
        return w;
    }
    if let Ok(v) = std::env::var("TIACS_WORKERS") {
        if let Ok(w) = v.trim().parse::<usize>() {
            return w;
        }
    }
    config.unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_collection_matches_sequential() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map_ordered(&items, 1, |x| x * x);
        let par = map_ordered(&items, 4, |x| x * x);
        assert_eq!(seq, par);
    }
}
