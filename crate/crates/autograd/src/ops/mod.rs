mod basic;
mod conv;
mod loss;
mod norm;

pub use norm::RunningStats;
