use crate::autodiff::{Tape, Var};
use crate::error::{Result, TuvfError};

pub const STD_FLOOR: f64 = 1e-5;

/// Standardises each channel of `content: [batch, ch]` over the batch, then
/// applies `style_mean` and `style_std` (both `[ch]` or `[1, ch]`).
pub fn adain(tape: &mut Tape, content: Var, style_mean: Var, style_std: Var) -> Result<Var> {
    let s = tape.shape(content).to_vec();
    if s.len() != 2 {
        return Err(TuvfError::shape("adain", format!("expected [batch, ch], got {s:?}")));
    }
    if s[0] < 2 {
        return Err(TuvfError::invalid("adain needs a batch of at least two elements"));
    }
    for v in [style_mean, style_std] {
        if tape.value(v).len() != s[1] {
            return Err(TuvfError::shape(
                "adain",
                format!("style stats of length {} for {} channels", tape.value(v).len(), s[1]),
            ));
        }
    }
    let mean = tape.mean_axis(content, 0)?;
    let centered = tape.sub(content, mean)?;
    let sq = tape.square(centered)?;
    let var = tape.mean_axis(sq, 0)?;
    let var = tape.clamp_min(var, STD_FLOOR * STD_FLOOR)?;
    let std = tape.sqrt(var)?;
    let normed = tape.div(centered, std)?;
    let sm = tape.reshape(style_mean, &[s[1]])?;
    let ss = tape.reshape(style_std, &[s[1]])?;
    let scaled = tape.mul(normed, ss)?;
    tape.add(scaled, sm)
}
