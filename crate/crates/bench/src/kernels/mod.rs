pub mod fib;
pub mod hashbucket;
pub mod imbalance;
pub mod msort;
pub mod nqueens;
pub mod strassen;
