pub mod agents;
pub mod geometry;
pub mod metriclang;
pub mod mutation;
pub mod pipeline;
pub mod scene;
pub mod schema;
pub mod verification;
