//! Guarantee types for proving pointer-race freedom of lock-free code that
//! uses safe memory reclamation, with a bounded explorer as ground truth.

pub mod annotator;
pub mod automata;
pub mod corpus;
pub mod inference;
pub mod instrument;
pub mod lang;
pub mod oracle;
pub mod rules;
pub mod types;
