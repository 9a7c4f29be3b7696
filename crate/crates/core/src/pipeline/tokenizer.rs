//! Byte-level tokenizer: ids 0–255 are raw bytes, followed by three
//! special ids.

use crate::error::{Error, Result};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const IMG: u32 = 258;
/// Smallest vocabulary that holds every byte and special id.
pub const SPECIAL_TOKENS: usize = 259;

/// Marker a prompt uses to place the image.
pub const IMAGE_MARKER: &str = "<image>";

/// `BOS` followed by one id per byte.
pub fn tokenize(text: &[u8]) -> Vec<u32> {
    std::iter::once(BOS)
        .chain(text.iter().map(|&b| u32::from(b)))
        .collect()
}

/// Like [`tokenize`] but every occurrence of [`IMAGE_MARKER`] becomes `IMG`.
pub fn tokenize_prompt(text: &str) -> Vec<u32> {
    let mut ids = vec![BOS];
    for (i, part) in text.split(IMAGE_MARKER).enumerate() {
        if i > 0 {
            ids.push(IMG);
        }
        ids.extend(part.bytes().map(u32::from));
    }
    ids
}

/// Drops special ids; errors on ids outside `vocab`.
pub fn detokenize(ids: &[u32], vocab: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id as usize >= vocab {
            return Err(Error::Data(format!(
                "token id {id} is outside the vocab of {vocab}"
            )));
        }
        if id < 256 {
            out.push(id as u8);
        }
    }
    Ok(out)
}
