//! The numerical identity and gradient checks, as a CSV table.

use rsd::verify::{run_all, to_csv, VerifyOptions};

fn main() -> rsd::Result<()> {
    let checks = run_all(&VerifyOptions::default())?;
    print!("{}", to_csv(&checks));
    let failed = checks.iter().filter(|c| !c.pass()).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(())
}
