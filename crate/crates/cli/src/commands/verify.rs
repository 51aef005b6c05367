//! `pmdk verify` — recompute manifest hashes.

use std::path::PathBuf;

use clap::Args;

use crate::dataset_io::verify_manifest;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
}

pub fn run(args: VerifyArgs) -> anyhow::Result<()> {
    let n = verify_manifest(&args.dataset)?;
    println!("verify: {} files match the manifest", n);
    Ok(())
}
