//! Shared checkpoint pieces: RNG state capture and the JSON sidecar.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIDECAR_FILE: &str = "checkpoint.json";

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = self.seed.get(2 * i..2 * i + 2).and_then(|h| u8::from_str_radix(h, 16).ok()).unwrap_or(0);
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().unwrap_or(0));
        rng
    }
}

/// Human-readable summary written next to each weights archive.
pub fn write_sidecar<H: Serialize, L: Serialize>(dir: &Path, kind: &str, step: u64, hyper: &H, losses: &L) -> Result<()> {
    let doc = serde_json::json!({ "kind": kind, "step": step, "hyper": hyper, "losses": losses });
    let path = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&doc).expect("sidecar serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
