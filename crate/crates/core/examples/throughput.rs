//! Forward+backward timing of the selective scan against naive attention
//! over growing sequence lengths, with fitted log-log slopes.

use rankssm::bench::{format_csv, format_scaling, run_benchmark, scaling_report, BenchConfig, Kernel};

fn main() -> rankssm::Result<()> {
    let kernels = [Kernel::SelectiveScan, Kernel::SelectiveScanRecompute, Kernel::LtiConv, Kernel::Attention];
    let lengths = [128, 256, 512, 1024];
    let records = run_benchmark(&kernels, &lengths, &BenchConfig::default(), 5, 1)?;
    print!("{}", format_csv(&records));
    println!();
    print!("{}", format_scaling(&scaling_report(&records)));
    Ok(())
}
