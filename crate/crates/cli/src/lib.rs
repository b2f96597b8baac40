//! Library surface of the command-line tool: scenario schema, output
//! writers, and the command implementations. The `lticbf` binary is a thin
//! argument-parsing wrapper over these modules.

pub mod commands;
pub mod output;
pub mod schema;
