#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub const TINY: &str = "\
space.num_blocks = 1
space.d_model = 16
space.mhsa = mhsa_head2, mhsa_head4
space.conv = identity, conv_3, dil_conv_3
space.ffn = ffn_32, ffn_16
task.feature_dim = 8
task.vocab = 5
task.min_frames = 10
task.max_frames = 16
task.width = 3
task.label_rate = 0.1
task.train_size = 24
task.valid_size = 8
task.test_size = 4
schedule.warmup_steps = 4
search.epochs = 3
retrain.epochs = 2
random.trials = 3
random.epochs = 1
";

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conformer-nas"));
    cmd.env_remove("CONFORMER_NAS_OUT");
    cmd
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn binary")
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
