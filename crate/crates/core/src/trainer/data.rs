use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::linalg::Rng;

use super::TrainError;

/// Whether target bit `k` includes input bit `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParityConvention {
    #[default]
    Inclusive,
    Exclusive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSumExample {
    pub input_bits: Vec<u8>,
    pub target_bits: Vec<u8>,
}

impl PrefixSumExample {
    pub fn from_input(input_bits: Vec<u8>, convention: ParityConvention) -> Self {
        let mut acc = 0u8;
        let target_bits = input_bits
            .iter()
            .map(|&b| {
                let before = acc;
                acc ^= b & 1;
                match convention {
                    ParityConvention::Inclusive => acc,
                    ParityConvention::Exclusive => before,
                }
            })
            .collect();
        Self {
            input_bits,
            target_bits,
        }
    }

    pub fn len(&self) -> usize {
        self.input_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_bits.is_empty()
    }
}

/// Uniform random bit strings with inclusive cumulative-parity targets.
pub fn gen_prefix_sums(n_examples: usize, bits: usize, seed: u64) -> Vec<PrefixSumExample> {
    gen_prefix_sums_with(n_examples, bits, seed, ParityConvention::Inclusive)
}

pub fn gen_prefix_sums_with(
    n_examples: usize,
    bits: usize,
    seed: u64,
    convention: ParityConvention,
) -> Vec<PrefixSumExample> {
    assert!(bits >= 1, "need at least one bit");
    let mut rng = Rng::new(seed);
    (0..n_examples)
        .map(|_| {
            let input: Vec<u8> = (0..bits).map(|_| rng.bit()).collect();
            PrefixSumExample::from_input(input, convention)
        })
        .collect()
}

fn bits_to_string(bits: &[u8]) -> String {
    bits.iter()
        .map(|&b| if b == 0 { '0' } else { '1' })
        .collect()
}

fn parse_bits(s: &str, line: usize) -> Result<Vec<u8>, TrainError> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(TrainError::Dataset(format!("line {line}: bad bit `{c}`"))),
        })
        .collect()
}

/// One example per line: `input<TAB>target`.
pub fn write_dataset(w: &mut impl Write, data: &[PrefixSumExample]) -> std::io::Result<()> {
    for ex in data {
        writeln!(
            w,
            "{}\t{}",
            bits_to_string(&ex.input_bits),
            bits_to_string(&ex.target_bits)
        )?;
    }
    Ok(())
}

pub fn read_dataset(r: impl std::io::Read) -> Result<Vec<PrefixSumExample>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| TrainError::Dataset(format!("line {}: expected a tab", i + 1)))?;
        let input_bits = parse_bits(a, i + 1)?;
        let target_bits = parse_bits(b, i + 1)?;
        if input_bits.is_empty() || input_bits.len() != target_bits.len() {
            return Err(TrainError::Dataset(format!(
                "line {}: input and target lengths differ or are empty",
                i + 1
            )));
        }
        out.push(PrefixSumExample {
            input_bits,
            target_bits,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<PrefixSumExample>, TrainError> {
    read_dataset(fs::File::open(path)?)
}
