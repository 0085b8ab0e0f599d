//! Sequential and distributed primal-dual approximation algorithms for
//! covering and packing problems, a synchronous round simulator to run the
//! distributed ones, and brute-force oracles to check them.

pub mod cost;
pub mod instances;
pub mod poset;
pub mod relax;
pub mod sequential;
pub mod tolerance;
pub mod sim;
pub mod star;
pub mod dist_cover;
pub mod dist_pack;
pub mod cluster;
pub mod oracles;
pub mod experiment;
