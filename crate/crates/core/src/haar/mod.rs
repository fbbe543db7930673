//! Haar-moment engine: Weingarten tables, exact trace contractions,
//! connected correlators, large-`d` leading terms and the Monte Carlo oracle.

pub mod moments;
pub mod monte_carlo;
pub mod weingarten;

pub use crate::perm::{CycleType, Permutation};
pub use moments::{
    connected_moment, haar_average_of_traces, haar_expectation, haar_expectation_asymptotic,
    haar_expectation_with_table, identity_class_four_point, leading_order, Connection, MomentSpec,
};
pub use monte_carlo::{monte_carlo_moment, monte_carlo_moments, HaarOutputSampler};
pub use weingarten::{weingarten_table, weingarten_table_general, WeingartenTable};
