use crate::blocks::LinearOp;
use crate::error::{Error, Result};
use crate::kernels::KernelPlan;
use crate::tensor::Tensor;

/// `N = (h·w) / (p·p)` non-overlapping patches.
pub fn patch_count(h: usize, w: usize, patch: usize) -> Result<usize> {
    if patch == 0 || !h.is_multiple_of(patch) || !w.is_multiple_of(patch) || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not divisible into {patch}x{patch} patches; resize it first"
        )));
    }
    Ok((h * w) / (patch * patch))
}

/// Splits a `[3, h, w]` image into `[N, 3·p·p]` rows. Patches are in raster
/// order; each row is channel-major, then patch row, then patch column.
pub fn extract_patches(image: &Tensor, patch: usize) -> Result<Tensor> {
    let (c, h, w) = match image.shape()[..] {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Shape(format!(
                "expected a [channels, h, w] image, got {:?}",
                image.shape()
            )))
        }
    };
    let n = patch_count(h, w, patch)?;
    let (ph, pw) = (h / patch, w / patch);
    let dim = c * patch * patch;
    let src = image.data();
    let mut out = Vec::with_capacity(n * dim);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                for y in 0..patch {
                    let row = (ch * h + py * patch + y) * w + px * patch;
                    out.extend_from_slice(&src[row..row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![n, dim], out)
}

/// Flattened 14×14×3 patches projected to `d` plus a learned positional
/// embedding.
pub fn patch_embed(
    image: &Tensor,
    proj: &LinearOp,
    pos_embed: &Tensor,
    patch: usize,
) -> Result<Tensor> {
    let patches = extract_patches(image, patch)?;
    let mut x = proj.apply(&patches, &KernelPlan::serial())?;
    if x.shape() != pos_embed.shape() {
        return Err(Error::Shape(format!(
            "patch embeddings {:?} do not match positional embedding {:?}",
            x.shape(),
            pos_embed.shape()
        )));
    }
    x.add_assign(pos_embed)?;
    Ok(x)
}
