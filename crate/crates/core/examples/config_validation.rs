//! Parsing `key=value` training configurations.

use tempalign::corpus::parse_config;

fn main() {
    let cfg = parse_config("# defaults except lambda\nlambda=0.01\n", None).expect("valid config");
    println!("lr {} epochs {} lambda {} interval {}", cfg.learning_rate, cfg.max_epochs, cfg.lambda, cfg.disc_interval);

    // Every problem is reported at once.
    match parse_config("lamda=0.01\ndropout=1.5\nbatch_size=many\n", None) {
        Ok(_) => unreachable!(),
        Err(e) => println!("{e} (exit code {})", e.exit_code()),
    }
}
