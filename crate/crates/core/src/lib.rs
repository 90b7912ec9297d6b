//! A desk-scale JIT laboratory: a stack bytecode machine with cost
//! accounting, directive-driven compilation with uncommon traps, an
//! information-flow type system that infers which methods and branches must
//! not be optimized, and tools that measure the timing leakage JIT
//! compilation introduces.

pub mod bytecode;
pub mod infoflow;
pub mod interp;
pub mod jit;
pub mod leakage;
pub mod profile;
