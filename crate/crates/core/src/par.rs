//! Data-parallel helpers with a sequential fallback. Without the `parallel`
//! feature every mode runs on the calling thread.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parallelism {
    /// Use the global rayon pool.
    #[default]
    Auto,
    Sequential,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Auto
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: Vec<T>, par: Parallelism, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = par;
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(xs.clone(), Parallelism::Auto, |x| x * x);
        let b = map(xs, Parallelism::Sequential, |x| x * x);
        assert_eq!(a, b);
    }
}
