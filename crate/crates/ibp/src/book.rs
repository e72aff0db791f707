//! Compiles the book's code listings as documentation tests, one module per
//! chapter, so the walkthrough in `book/` cannot drift from the library.

#[doc = include_str!("../../../book/src/tariffs.md")]
pub mod tariffs {}

#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}

#[doc = include_str!("../../../book/src/demand-response.md")]
pub mod demand_response {}

#[doc = include_str!("../../../book/src/milp.md")]
pub mod milp {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/search.md")]
pub mod search {}
