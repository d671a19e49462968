//! Parse a run configuration, apply command-line style overrides, and show
//! what an unknown key reports.

use rsd::config::RunConfig;

fn main() -> rsd::Result<()> {
    let text = "[schedule]\nT = 10\n\n[distill]\nK = 3\nlambda1 = 1.5\n";
    let cfg = RunConfig::parse_with(text, &["distill.N=2".into(), "data.kind=shapes".into()])?;
    println!("T = {}, K = {}, N = {}, lambda1 = {}, data = {:?}", cfg.schedule.steps, cfg.distill.k, cfg.distill.n, cfg.distill.lambda1, cfg.data.kind);
    println!("distillation timesteps: {:?}", cfg.distill.timesteps(&cfg.schedule.build()?)?);

    let echoed = cfg.to_toml();
    assert_eq!(RunConfig::parse(&echoed)?, cfg);
    println!("--- effective config ---\n{echoed}");

    match RunConfig::parse("[teacher]\nsteps = 10\nlearnig_rate = 1e-3\n") {
        Err(e) => println!("rejected as expected:\n{e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
