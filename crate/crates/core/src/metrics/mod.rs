//! Character/word error rates and one-way ANOVA.

mod anova;
mod edit;
mod report;

pub use anova::{anova_one_way, f_survival, regularized_incomplete_beta, AnovaResult};
pub use edit::{cer, char_ops, edit_distance, wer, word_ops, EditOps};
pub use report::{EvalReport, SampleEval};
