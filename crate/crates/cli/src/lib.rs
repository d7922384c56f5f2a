//! Command-line workflows over `fogmesh-core`: preprocess, train, evaluate,
//! quantize, simulate and ROC export, all driven by one JSON run config.

pub mod args;
pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use args::{Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, Result};

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

/// Execute one parsed invocation; returns the text printed on success.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.resolve_config()?;
    let text = match &cli.command {
        Command::Preprocess { .. } => {
            let b = commands::preprocess(&cfg)?;
            format!(
                "{} windows per site: {} freeze, {} no-freeze, {} subjects",
                b.windows,
                b.total.freeze,
                b.total.no_freeze,
                b.subjects.len()
            )
        }
        Command::Train => {
            let s = commands::train(&cfg)?;
            s.sites
                .iter()
                .map(|(site, m)| format!("{site}: mean fold accuracy {}, sensitivity {}, F1 {}", pct(m.accuracy), pct(m.sensitivity), pct(m.f1)))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Evaluate => {
            let s = commands::evaluate(&cfg, cli.global.strict)?;
            let m = &s.headline.metrics;
            format!(
                "majority vote at threshold {:.3}: sensitivity {}, specificity {}, F1 {}\nquantized-vs-float test AUC gap {:.4} ({:.4} vs {:.4}), class agreement {:.2}%",
                s.headline.threshold,
                pct(m.sensitivity),
                pct(m.specificity),
                pct(m.f1),
                s.auc_gap,
                s.float_test_auc,
                s.quantized_test_auc,
                100.0 * s.class_agreement
            )
        }
        Command::Quantize => {
            let s = commands::quantize(&cfg)?;
            format!("{} models quantized: {} bytes float, {} bytes int8", s.models, s.float_bytes, s.quantized_bytes)
        }
        Command::Simulate(_) => {
            let s = commands::simulate(&cfg)?;
            let delivered: usize = s.nodes.values().map(|n| n.delivered).sum();
            let sent: usize = s.nodes.values().map(|n| n.predictions).sum();
            format!(
                "{} epochs, {} alerts, {delivered}/{sent} messages delivered; vote sensitivity {}, specificity {}",
                s.epochs,
                s.alerts,
                pct(s.vote_metrics.sensitivity),
                pct(s.vote_metrics.specificity)
            )
        }
        Command::Roc => commands::roc_curves(&cfg)?
            .iter()
            .map(|c| format!("{}: AUC {:.4}, best threshold {:.3}", c.name, c.auc, c.best_threshold))
            .collect::<Vec<_>>()
            .join("\n"),
    };
    Ok(text)
}
