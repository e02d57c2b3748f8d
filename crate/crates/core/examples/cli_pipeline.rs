//! synth → run → evaluate through the command-line entry point, in a temporary
//! directory with a deliberately tiny configuration.

use ttuda::cli::main_with_args;

const CONFIG: &str = r#"
seeds = [0]

[synth]
n_source = 3
n_target = 3
image_size = 32
depth = 4

[training.model]
levels = 3
encoder_channels = [4, 6, 8]

[training.discriminator]
conv_channels = [4, 4, 8, 8]
fc_hidden = [8, 8]

[training.optim]
iterations = 20
batch_size = 4
"#;

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let config = root.join("run.toml");
    let paths = format!(
        "\n[paths]\nsource = {:?}\ntarget = {:?}\noutput = {:?}\n",
        root.join("source"),
        root.join("target"),
        root.join("out")
    );
    std::fs::write(&config, format!("{CONFIG}{paths}")).expect("write config");
    let config = config.to_str().unwrap();

    let steps: [&[&str]; 4] = [
        &["synth"],
        &["run", "--protocol", "no_adaptation", "--all-subjects"],
        &["run", "--protocol", "one_shot_uda", "--all-subjects"],
        &["evaluate", "--overlays"],
    ];
    for step in steps {
        let mut args = vec!["ttuda", "--config", config];
        args.extend_from_slice(step);
        println!("$ {}", args.join(" "));
        let code = main_with_args(&args);
        assert_eq!(code, 0, "step {step:?} failed");
    }
}
