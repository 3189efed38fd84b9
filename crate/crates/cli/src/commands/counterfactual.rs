//! `rentropy counterfactual`: render prompt variants from a question
//! file.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rentropy_core::counterfactual::{construct, synthesize_incorrect, BasicQuestion, Variant};

use crate::config::{item_seed, LoadedConfig};
use crate::store::{self, QcRecord, QuestionRecord, StatusRecord};

use super::ensure_out_dir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantChoice {
    Directed,
    Reversed,
    Undirected,
    All,
}

impl VariantChoice {
    fn expand(self) -> Vec<Variant> {
        match self {
            VariantChoice::Directed => vec![Variant::Directed],
            VariantChoice::Reversed => vec![Variant::Reversed],
            VariantChoice::Undirected => vec![Variant::Undirected],
            VariantChoice::All => {
                vec![Variant::Directed, Variant::Reversed, Variant::Undirected]
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    /// Question file (JSONL); defaults to `[fixtures] questions`.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Which prompt form to render.
    #[arg(long, value_enum, default_value = "all")]
    pub variant: VariantChoice,
    /// Output file name inside out_dir.
    #[arg(long, default_value = "qc.jsonl")]
    pub out: String,
}

pub fn run(args: &CounterfactualArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let questions: Vec<QuestionRecord> =
        store::read_jsonl(&cfg.questions_path(args.questions.as_deref())?)?;
    let templates = cfg.config.templates.to_template_set();
    let n_incorrect = cfg.config.counterfactual.n_incorrect;

    let mut rendered = Vec::new();
    let mut statuses = Vec::new();
    for q in &questions {
        let question = BasicQuestion {
            stem: q.stem.clone(),
            answer: q.answer.clone(),
            options: q.options.clone(),
        };
        let seed = item_seed(cfg.config.seed, &q.id);
        for variant in args.variant.expand() {
            let id = format!("{}-{variant}", q.id);
            let incorrect = if variant == Variant::Directed {
                match synthesize_incorrect(&question, n_incorrect, seed) {
                    Ok(set) => Some(set),
                    Err(e) => {
                        statuses.push(StatusRecord {
                            id,
                            status: "error".into(),
                            detail: Some(e.to_string()),
                        });
                        continue;
                    }
                }
            } else {
                None
            };
            match construct(&question, variant, incorrect.as_ref(), seed, &templates) {
                Ok(qc) => {
                    rendered.push(QcRecord {
                        id: id.clone(),
                        variant,
                        rendered: qc.rendered,
                        stem: q.stem.clone(),
                        answer: q.answer.clone(),
                        options: q.options.clone(),
                        target: qc.target,
                    });
                    statuses.push(StatusRecord {
                        id,
                        status: "ok".into(),
                        detail: None,
                    });
                }
                Err(e) => statuses.push(StatusRecord {
                    id,
                    status: "error".into(),
                    detail: Some(e.to_string()),
                }),
            }
        }
    }

    let out_path = out_dir.join(&args.out);
    store::write_jsonl(&out_path, &rendered)?;
    store::write_jsonl(&out_dir.join("counterfactual_status.jsonl"), &statuses)?;
    let errors = statuses.iter().filter(|s| s.status == "error").count();
    println!(
        "counterfactual: {} prompts from {} questions -> {} ({errors} errors)",
        rendered.len(),
        questions.len(),
        out_path.display()
    );
    Ok(())
}
