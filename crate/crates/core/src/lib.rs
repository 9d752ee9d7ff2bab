//! Hierarchical multi-agent code generation for image-processing projects.
//!
//! A Team Leader splits a project into modules, Module Leaders split modules
//! into functions, a Function Coordinator fixes typed signatures, and
//! Coder/Tester pairs implement and validate each function in a sandbox.
//! Validated functions are assembled into modules, modules are validated once,
//! and modules are assembled into the final project.

pub mod agents;
pub mod domain;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod manifest;
pub mod pipeline;
pub mod pool;
pub mod sandbox;
pub mod sync;

pub use domain::{
    ArtifactLevel, AssemblyMode, CodeArtifact, DecompositionTree, FunctionSignature,
    FunctionThought, HyperThought, ModuleThought, ProjectRequirement, RunConfig, TreeAddress,
    Validation,
};
pub use pool::{ThoughtKind, ThoughtPool, ThoughtRecord};
