use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use partfuse::FusionMode;
use partfuse_cli::{
    cmd_ablate, cmd_eval, cmd_export_ply, cmd_gen_data, cmd_gradcheck, cmd_infer, cmd_train,
    CliError, CliResult, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "partfuse",
    version,
    about = "Multi-level part instance segmentation toolkit"
)]
struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set iterations=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Fusion mode: none, single, multi or cross.
    #[arg(long, global = true)]
    fusion: Option<String>,
    /// Feed arg-max one-hot probabilities to the fusion module.
    #[arg(long, global = true)]
    one_hot: bool,
    /// Let fusion gradients reach the semantic branch.
    #[arg(long, global = true)]
    no_stop_grad: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test corpus to data_dir.
    GenData,
    /// Train on data_dir/train; write out_dir/model.ckpt.
    Train,
    /// Predict instances for the configured split.
    Infer,
    /// Score predictions against ground truth.
    Eval,
    /// Sweep fusion, stop_grad, one_hot, bandwidth and lambda.
    Ablate,
    /// Finite-difference gradient check per fusion mode.
    Gradcheck,
    /// Export a .pls or .plp file as a colored ASCII PLY.
    ExportPly {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    for kv in &cli.overrides {
        config.apply_override(kv)?;
    }
    if let Some(mode) = &cli.fusion {
        config.model.fusion = mode
            .parse::<FusionMode>()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if cli.one_hot {
        config.model.one_hot = true;
    }
    if cli.no_stop_grad {
        config.model.stop_grad = false;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = build_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let n = cmd_gen_data(&config)?;
            println!("wrote {n} shapes to {}", config.data_dir.display());
        }
        Command::Train => {
            let log = cmd_train(&config)?;
            if let Some(last) = log.entries.last() {
                println!("final loss {:.6}", last.loss.total());
            }
            println!("wrote {}", config.checkpoint_path().display());
        }
        Command::Infer => {
            let n = cmd_infer(&config)?;
            println!(
                "wrote {n} predictions to {}",
                config.predictions_dir().display()
            );
        }
        Command::Eval => {
            let report = cmd_eval(&config)?;
            print!("{}", report.to_tsv());
        }
        Command::Ablate => {
            let rows = cmd_ablate(&config)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                config.out_dir.join("ablate").display()
            );
        }
        Command::Gradcheck => {
            cmd_gradcheck(&config)?;
        }
        Command::ExportPly {
            input,
            level,
            output,
        } => {
            let out = cmd_export_ply(input, *level, output.as_deref())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
