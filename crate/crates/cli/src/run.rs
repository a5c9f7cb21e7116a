use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rul_core::artifact::{ModelArtifact, Report};
use rul_core::controller::ControllerConfig;
use rul_core::data::{load_labeled, synth_samples, write_dataset, DatasetSnapshot, DatasetSummary, SampleTable, TercileThresholds};
use rul_core::eval::{comparison_text, cv_run, CvOptions, StdKind};
use rul_core::link::{transport_from_env, HostLink};
use rul_core::model::{train_holdout, ModelConfig, Profile};
use rul_core::sim::{parse_events, simulate};
use rul_telemetry::{AppState, Hub, HubConfig, ServiceEnv, SystemClock};

use crate::args::{ControllerArgs, CvArgs, DataArgs, DataCommand, ModelArgs, ServeArgs, SimulateArgs, TrainArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rul_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Serve(#[from] rul_telemetry::ServeError),
    #[error("simulation entered FAULT")]
    Fault,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rul_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Serve(_) => 2,
            CliError::Fault => 4,
            CliError::Core(
                E::InvalidK { .. }
                | E::InvalidFraction(_)
                | E::ModelFile(_)
                | E::Events { .. }
                | E::UnknownFeature(_)
                | E::Io { .. }
                | E::Link(_),
            ) => 2,
            CliError::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_context(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_context(format!("writing {}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_context(format!("creating {}", path.display())))
}

fn existing_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_data(args: &DataArgs) -> Result<(SampleTable, TercileThresholds)> {
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("no dataset: pass --data or set RUL_DATA".into()))?;
    existing_file(path, "dataset")?;
    let (table, thresholds) = load_labeled(path)?;
    let table = if args.exclude_cycle_index {
        table.without_feature("cycle_index")
    } else {
        table
    };
    Ok((table, thresholds))
}

fn load_model(path: &Path) -> Result<ModelArtifact> {
    existing_file(path, "model file")?;
    ModelArtifact::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn controller_config(args: &ControllerArgs) -> Result<ControllerConfig> {
    let config = ControllerConfig {
        k_on: args.k_on,
        k_off: args.k_off,
        heartbeat_interval: args.heartbeat_interval,
        ..ControllerConfig::default()
    };
    if config.is_valid() {
        Ok(config)
    } else {
        Err(CliError::Usage(
            "controller needs k-on, k-off >= 1 and a positive heartbeat interval".into(),
        ))
    }
}

fn model_configs(args: &ModelArgs) -> Vec<ModelConfig> {
    let profile = Profile::from(args.profile);
    args.model
        .kinds()
        .into_iter()
        .map(|k| ModelConfig::default_for(k).with_seed(args.seed).with_profile(profile))
        .collect()
}

pub fn data(cmd: DataCommand) -> Result<()> {
    match cmd {
        DataCommand::Inspect(args) => {
            let (table, thresholds) = load_data(&args)?;
            print!("{}", DatasetSummary::new(&table, thresholds).to_text());
        }
        DataCommand::Snapshot { data, out } => {
            let (table, thresholds) = load_data(&data)?;
            DatasetSnapshot::new(&table, Some(thresholds)).save(&out)?;
            eprintln!("wrote {} rows to {}", table.n_rows(), out.display());
        }
        DataCommand::Synth {
            batteries,
            cycles,
            seed,
            out,
        } => {
            if batteries == 0 || cycles < 10 {
                return Err(CliError::Usage("need at least 1 battery and 10 cycles".into()));
            }
            let samples = synth_samples(batteries, cycles, seed);
            let file = fs::File::create(&out).map_err(io_context(format!("creating {}", out.display())))?;
            write_dataset(&samples, io::BufWriter::new(file))?;
            eprintln!("wrote {} rows to {}", samples.len(), out.display());
        }
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (table, thresholds) = load_data(&args.data)?;
    create_dir(&args.out)?;
    let mut report = Report::default();
    for config in model_configs(&args.model) {
        let kind = config.kind();
        let result = train_holdout(&config, &table, args.test_fraction, args.model.seed)?;
        println!("{} ({} train / {} test rows)", kind.display_name(), result.n_train, result.n_test);
        println!("{}", result.test_report.to_text());

        let artifact = ModelArtifact::from_holdout(
            config,
            table.feature_names.clone(),
            Some(thresholds),
            &result,
            args.model.seed,
            args.test_fraction,
        );
        let model_path = args.out.join(format!("{}.model.json", kind.as_str()));
        artifact.save(&model_path)?;
        if let Some(history) = &result.model.history {
            write_file(&args.out.join(format!("{}.history.csv", kind.as_str())), &history.to_csv())?;
        }
        eprintln!("wrote {}", model_path.display());
        report.add_holdout(&result);
    }
    print!("{}", comparison_text(&report.comparison));
    let report_path = args.out.join("report.json");
    report.save(&report_path)?;
    eprintln!("wrote {}", report_path.display());
    Ok(())
}

pub fn cv(args: CvArgs) -> Result<()> {
    let (table, _) = load_data(&args.data)?;
    let options = CvOptions {
        k: args.folds,
        stratified: !args.plain_kfold,
        shuffle: true,
        seed: args.model.seed,
        std_kind: if args.sample_std {
            StdKind::Sample
        } else {
            StdKind::Population
        },
    };
    if options.k < 2 || options.k > table.n_rows() {
        return Err(rul_core::Error::InvalidK {
            k: options.k,
            n: table.n_rows(),
        }
        .into());
    }
    let mut report = Report::default();
    for (i, config) in model_configs(&args.model).into_iter().enumerate() {
        let result = cv_run(&config, &table, &options)?;
        if i > 0 {
            println!();
        }
        println!("{} cross validation", result.model.display_name());
        print!("{}", result.to_text());
        report.cv.push(result);
    }
    if let Some(out) = &args.out {
        report.save(out)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

pub fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let config = controller_config(&args.controller)?;
    let model = load_model(&args.model_file)?;
    existing_file(&args.events, "events file")?;
    let text = fs::read_to_string(&args.events).map_err(io_context(format!("reading {}", args.events.display())))?;
    let events = parse_events(&text)?;
    let outcome = simulate(&model, &events, &config)?;
    match &args.out {
        Some(path) => write_file(path, &outcome.trace_text())?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(outcome.trace_text().as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(io_context("writing trace"))?;
        }
    }
    eprintln!(
        "{} events, {} predictions, {} commands, relay {}, fault: {}",
        events.len(),
        outcome.predictions.len(),
        outcome.commands.len(),
        if outcome.device_relay_on { "on" } else { "off" },
        outcome.fault
    );
    if outcome.fault {
        return Err(CliError::Fault);
    }
    Ok(())
}

async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let terminate = async {
            match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
                Ok(mut s) => {
                    s.recv().await;
                }
                Err(_) => std::future::pending().await,
            }
        };
        tokio::select! {
            _ = interrupt => {}
            _ = terminate => {}
        }
    }
    #[cfg(not(unix))]
    interrupt.await;
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let config = controller_config(&args.controller)?;
    let model = load_model(&args.model_file)?;
    let env = ServiceEnv::from_env()?;
    let transport = transport_from_env(config.heartbeat_interval, 0.0)
        .map_err(io_context("opening device link"))?;
    create_dir(&args.out)?;

    let runtime = tokio::runtime::Runtime::new().map_err(io_context("starting runtime"))?;
    let app = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(env.addr)
            .await
            .map_err(io_context(format!("binding {}", env.addr)))?;
        let local = listener.local_addr().map_err(io_context("reading listen address"))?;
        let hub = Hub::new(
            HubConfig {
                controller: config,
                token: env.token.clone(),
                epoch_unix: rul_telemetry::unix_now(),
            },
            Some(model),
            HostLink::new(transport),
            0.0,
        );
        let app = AppState::new(hub, Arc::new(SystemClock::new()));
        println!("listening on http://{local}");
        let _ = io::stdout().flush();
        rul_telemetry::serve(listener, app.clone(), args.ui.clone(), config.heartbeat_interval, shutdown_signal()).await?;
        Ok::<_, CliError>(app)
    })?;

    let hub = app.hub();
    let events: PathBuf = args.out.join("events.jsonl");
    write_file(&events, &hub.event_log_jsonl())?;
    let trace: String = hub.controller_trace().iter().map(|l| format!("{l}\n")).collect();
    write_file(&args.out.join("controller-trace.log"), &trace)?;
    eprintln!("wrote {} events to {}", hub.events().len(), events.display());
    Ok(())
}
