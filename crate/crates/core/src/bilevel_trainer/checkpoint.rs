use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::TrainState;
use crate::conformer::{ParamStore, Slot};
use crate::error::{Error, Result};
use crate::search_space::{AlphaTable, Genotype};
use crate::tensor::io::{load_named, save_named, write_atomic};
use crate::tensor::Tensor;

const HEADER: &str = "# checkpoint v1";

/// Counters and random state needed to resume or audit a run.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    /// `supernet` or `model`.
    pub kind: String,
    pub step: u64,
    pub last_alpha_step: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub config_hash: String,
    pub genotype: Option<Genotype>,
}

impl CheckpointHeader {
    pub fn from_state(
        kind: &str,
        state: &TrainState,
        config_hash: &str,
        genotype: Option<&Genotype>,
    ) -> Self {
        CheckpointHeader {
            kind: kind.to_string(),
            step: state.step,
            last_alpha_step: state.last_alpha_step,
            rng_seed: state.rng.get_seed(),
            rng_stream: state.rng.get_stream(),
            rng_word_pos: state.rng.get_word_pos(),
            config_hash: config_hash.to_string(),
            genotype: genotype.cloned(),
        }
    }

    /// The generator positioned where the checkpoint was taken.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }

    fn render(&self) -> String {
        let mut s = format!("{HEADER}\n");
        let seed: String = self.rng_seed.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(s, "kind = {}", self.kind);
        let _ = writeln!(s, "step = {}", self.step);
        let _ = writeln!(s, "last_alpha_step = {}", self.last_alpha_step);
        let _ = writeln!(s, "rng_seed = {seed}");
        let _ = writeln!(s, "rng_stream = {}", self.rng_stream);
        let _ = writeln!(s, "rng_word_pos = {}", self.rng_word_pos);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        if let Some(g) = &self.genotype {
            let blocks: Vec<String> = g
                .blocks()
                .iter()
                .map(|[m, c, f]| format!("{m} {c} {f}"))
                .collect();
            let _ = writeln!(s, "genotype = {}", blocks.join(" | "));
        }
        s
    }

    fn parse(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::parse("checkpoint header", detail);
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header line".into()));
        }
        let mut h = CheckpointHeader {
            kind: String::new(),
            step: 0,
            last_alpha_step: 0,
            rng_seed: [0; 32],
            rng_stream: 0,
            rng_word_pos: 0,
            config_hash: String::new(),
            genotype: None,
        };
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("bad line {line:?}")))?;
            let num = |v: &str| {
                v.parse::<u128>()
                    .map_err(|_| bad(format!("bad number for {k}: {v:?}")))
            };
            match k {
                "kind" => h.kind = v.to_string(),
                "step" => h.step = num(v)? as u64,
                "last_alpha_step" => h.last_alpha_step = num(v)? as u64,
                "rng_stream" => h.rng_stream = num(v)? as u64,
                "rng_word_pos" => h.rng_word_pos = num(v)?,
                "config_hash" => h.config_hash = v.to_string(),
                "rng_seed" => {
                    if v.len() != 64 {
                        return Err(bad("rng_seed must be 64 hex digits".into()));
                    }
                    for (i, byte) in h.rng_seed.iter_mut().enumerate() {
                        *byte = u8::from_str_radix(&v[2 * i..2 * i + 2], 16)
                            .map_err(|_| bad("bad rng_seed".into()))?;
                    }
                }
                "genotype" => {
                    let text: String = v
                        .split('|')
                        .enumerate()
                        .map(|(i, b)| format!("block {i}: {}\n", b.trim()))
                        .collect();
                    h.genotype = Some(text.parse()?);
                }
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        Ok(h)
    }
}

/// Header plus the named tensors of a saved network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

fn alpha_name(block: usize, slot: Slot) -> String {
    format!("alpha.block{block}.{slot}")
}

/// Writes `<dir>/header.txt` and the `<dir>/weights` tensor manifest.
/// Architecture logits, if given, are stored as `alpha.block<b>.<slot>`.
pub fn save_checkpoint(
    dir: &Path,
    header: &CheckpointHeader,
    store: &ParamStore,
    alpha: Option<&AlphaTable>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = store.named();
    if let Some(a) = alpha {
        for b in 0..a.num_blocks() {
            for slot in Slot::ALL {
                tensors.push((alpha_name(b, slot), Tensor::vector(a.get(b, slot).to_vec())));
            }
        }
    }
    save_named(&dir.join("weights"), &tensors)?;
    write_atomic(&dir.join("header.txt"), header.render().as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let header = CheckpointHeader::parse(&fs::read_to_string(dir.join("header.txt"))?)?;
    let tensors = load_named(&dir.join("weights"))?;
    Ok(Checkpoint { header, tensors })
}

impl Checkpoint {
    /// Copies stored values into `store` (all names must exist there) and,
    /// when given, into `alpha`.
    pub fn restore(&self, store: &mut ParamStore, alpha: Option<&mut AlphaTable>) -> Result<()> {
        let (arch, weights): (Vec<_>, Vec<_>) = self
            .tensors
            .iter()
            .cloned()
            .partition(|(n, _)| n.starts_with("alpha."));
        store.load_named(&weights)?;
        if let Some(a) = alpha {
            for b in 0..a.num_blocks() {
                for slot in Slot::ALL {
                    let name = alpha_name(b, slot);
                    let (_, t) = arch
                        .iter()
                        .find(|(n, _)| *n == name)
                        .ok_or_else(|| Error::parse("checkpoint", format!("missing {name}")))?;
                    let dst = a.get_mut(b, slot);
                    if t.len() != dst.len() {
                        return Err(Error::parse(
                            "checkpoint",
                            format!("{name} has {} entries, expected {}", t.len(), dst.len()),
                        ));
                    }
                    dst.copy_from_slice(t.data());
                }
            }
        }
        Ok(())
    }
}
