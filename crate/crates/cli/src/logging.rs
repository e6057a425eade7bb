use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};

/// Stderr at the chosen verbosity, plus an optional sidecar file that gets
/// every info-level line with a wall-clock timestamp. Timestamps appear only
/// in the sidecar, never in result files.
pub struct SidecarLogger {
    stderr_level: Level,
    file: Mutex<Option<File>>,
}

static LOGGER: std::sync::OnceLock<SidecarLogger> = std::sync::OnceLock::new();

pub fn init(verbosity: u8) {
    let stderr_level = match verbosity {
        0 => Level::Warn,
        1 => Level::Info,
        _ => Level::Debug,
    };
    let logger = LOGGER.get_or_init(|| SidecarLogger {
        stderr_level,
        file: Mutex::new(None),
    });
    let _ = log::set_logger(logger);
    log::set_max_level(LevelFilter::Debug);
}

/// Starts mirroring log lines into `path`.
pub fn attach_sidecar(path: &Path) -> std::io::Result<()> {
    let file = File::create(path)?;
    if let Some(logger) = LOGGER.get() {
        *logger.file.lock().unwrap() = Some(file);
    }
    Ok(())
}

impl Log for SidecarLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Debug
    }

    fn log(&self, record: &Record) {
        if record.level() <= self.stderr_level {
            eprintln!("{}: {}", record.level().as_str().to_lowercase(), record.args());
        }
        if record.level() <= Level::Info {
            if let Some(file) = self.file.lock().unwrap().as_mut() {
                let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
                let _ = writeln!(
                    file,
                    "{}.{:03} {} {}",
                    now.as_secs(),
                    now.subsec_millis(),
                    record.level(),
                    record.args()
                );
            }
        }
    }

    fn flush(&self) {
        if let Some(file) = self.file.lock().unwrap().as_mut() {
            let _ = file.flush();
        }
    }
}
