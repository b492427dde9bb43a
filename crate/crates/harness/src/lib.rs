//! Configuration, presets and experiment orchestration for the `stiefel-dgt` CLI.

pub mod config;
pub mod experiment;
pub mod output;
pub mod presets;

/// Sets the size of the global worker pool from `STIEFEL_DGT_THREADS`
/// (unset or 0 leaves the default).
pub fn init_threads() -> anyhow::Result<()> {
    let n = match std::env::var("STIEFEL_DGT_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            anyhow::anyhow!("STIEFEL_DGT_THREADS must be a non-negative integer, got {v:?}")
        })?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}
