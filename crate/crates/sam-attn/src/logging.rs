//! Stderr logging controlled by the `SAM_ATTN_LOG` environment variable:
//! `quiet` silences everything, `info` (the default) reports run progress,
//! `debug` adds per-step detail.

use log::{Level, LevelFilter, Log, Metadata, Record};

use crate::error::{Error, Result};

pub const ENV_VAR: &str = "SAM_ATTN_LOG";

struct StderrLogger;

impl Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record) {
        if self.enabled(record.metadata()) {
            let tag = match record.level() {
                Level::Error => "error",
                Level::Warn => "warn",
                Level::Info => "info",
                Level::Debug | Level::Trace => "debug",
            };
            eprintln!("[{tag}] {}", record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

pub fn level_from_name(name: &str) -> Result<LevelFilter> {
    match name {
        "quiet" => Ok(LevelFilter::Off),
        "info" => Ok(LevelFilter::Info),
        "debug" => Ok(LevelFilter::Debug),
        other => Err(Error::param(format!(
            "{ENV_VAR} must be quiet, info, or debug; got '{other}'"
        ))),
    }
}

/// Installs the stderr logger at the level the environment asks for.
/// Safe to call more than once; later calls only adjust the level.
pub fn init_from_env() -> Result<()> {
    let level = match std::env::var(ENV_VAR) {
        Ok(value) => level_from_name(&value)?,
        Err(_) => LevelFilter::Info,
    };
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(level);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_names_map_to_filters() {
        assert_eq!(level_from_name("quiet").unwrap(), LevelFilter::Off);
        assert_eq!(level_from_name("info").unwrap(), LevelFilter::Info);
        assert_eq!(level_from_name("debug").unwrap(), LevelFilter::Debug);
        let err = level_from_name("loud").unwrap_err().to_string();
        assert!(err.contains("SAM_ATTN_LOG") && err.contains("loud"), "{err}");
    }
}
