//! Comparison sorters: external merge sort, in-place sample sort on the
//! device, and a key/value-separated sorter that reads full records.

mod ems;
mod pmsort;
mod samplesort;
mod stream;

pub use ems::ems_sort;
pub use pmsort::pmsort;
pub use samplesort::samplesort_inplace;

/// Baselines are configured like any other job; `single_thread` selects the
/// published single-threaded PMSort variant.
pub type BaselineConfig = crate::job::SortConfig;

#[cfg(test)]
mod tests;
