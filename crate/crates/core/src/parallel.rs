//! Data-parallel loop support with a sequential fallback.
//!
//! With the default `parallel` feature the crate re-exports rayon's prelude and
//! hot loops fan out across a thread pool. Without it, `SeqIter` provides the
//! same method surface over plain iterators so call sites compile unchanged.
//! Results are identical either way: every parallel reduction in this crate
//! merges per-item partials with associative, commutative operations.

#[cfg(feature = "parallel")]
pub use rayon::prelude::*;

/// Run `f` on a dedicated pool with `workers` threads (`None` = default pool).
///
/// Used by the CLI `--jobs` flag and by tests that compare worker counts.
#[cfg(feature = "parallel")]
pub fn with_worker_count<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build worker pool")
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_worker_count<R>(_workers: Option<usize>, f: impl FnOnce() -> R) -> R {
    f()
}

#[cfg(not(feature = "parallel"))]
mod sequential {
    /// Sequential stand-in for rayon parallel iterators.
    ///
    /// Deliberately not an `Iterator` so its rayon-shaped `reduce` cannot
    /// collide with `Iterator::reduce`.
    pub struct SeqIter<I>(I);

    impl<I: Iterator> SeqIter<I> {
        pub fn map<R, F: FnMut(I::Item) -> R>(self, f: F) -> SeqIter<std::iter::Map<I, F>> {
            SeqIter(self.0.map(f))
        }

        pub fn filter_map<R, F: FnMut(I::Item) -> Option<R>>(
            self,
            f: F,
        ) -> SeqIter<std::iter::FilterMap<I, F>> {
            SeqIter(self.0.filter_map(f))
        }

        pub fn for_each<F: FnMut(I::Item)>(self, f: F) {
            self.0.for_each(f)
        }

        pub fn collect<C: FromIterator<I::Item>>(self) -> C {
            self.0.collect()
        }

        pub fn reduce<ID, OP>(self, identity: ID, op: OP) -> I::Item
        where
            ID: Fn() -> I::Item,
            OP: Fn(I::Item, I::Item) -> I::Item,
        {
            self.0.fold(identity(), op)
        }
    }

    pub trait IntoParallelIterator: Sized {
        type Item;
        type SeqInner: Iterator<Item = Self::Item>;
        fn into_par_iter(self) -> SeqIter<Self::SeqInner>;
    }

    impl<T: IntoIterator> IntoParallelIterator for T {
        type Item = T::Item;
        type SeqInner = T::IntoIter;
        fn into_par_iter(self) -> SeqIter<Self::SeqInner> {
            SeqIter(self.into_iter())
        }
    }

    pub trait IntoParallelRefIterator<'a> {
        type Item: 'a;
        type SeqInner: Iterator<Item = &'a Self::Item>;
        fn par_iter(&'a self) -> SeqIter<Self::SeqInner>;
    }

    impl<'a, T: 'a> IntoParallelRefIterator<'a> for [T] {
        type Item = T;
        type SeqInner = std::slice::Iter<'a, T>;
        fn par_iter(&'a self) -> SeqIter<Self::SeqInner> {
            SeqIter(self.iter())
        }
    }

    impl<'a, T: 'a> IntoParallelRefIterator<'a> for Vec<T> {
        type Item = T;
        type SeqInner = std::slice::Iter<'a, T>;
        fn par_iter(&'a self) -> SeqIter<Self::SeqInner> {
            SeqIter(self.iter())
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub use sequential::{IntoParallelIterator, IntoParallelRefIterator, SeqIter};
