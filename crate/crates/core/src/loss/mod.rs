pub mod consistency;
pub mod edge;
