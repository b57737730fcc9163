//! Regenerates `fixtures/golden/` from the built-in synthetic process.
//!
//! ```text
//! cargo run -p procopt --example generate_golden [-- <dir>]
//! ```

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden"));
    procopt::golden::write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
