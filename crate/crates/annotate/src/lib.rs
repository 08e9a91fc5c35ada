// SPDX-License-Identifier: Apache-2.0

//! Backend for expert LO annotation: a persistent label store with
//! optimistic revisions, and the HTTP API the annotation UI talks to.

pub mod http;
pub mod store;

pub use http::{router, serve};
pub use store::{AnnotationError, AnnotationState, AnnotationStore, ExportBundle, QuestionFilter};
