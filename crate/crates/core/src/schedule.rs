//! Context planning for feature extraction.
//!
//! Causal language models see a context that grows token by token up to
//! `max_len`, then restarts from a shorter suffix so most hidden states come
//! out of a single cached forward pass. Audio encoders see fixed-length
//! sliding windows over the waveform.
//!
//! Token indices are 1-based. A [`ContextWindow`] `(start, end)` covers story
//! tokens `start..=end`; `start == 0` denotes story onset, so a window starting
//! at 0 holds tokens `1..=end`.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_CONTEXT: usize = 512;
pub const DEFAULT_RESET_CONTEXT: usize = 256;
pub const DEFAULT_AUDIO_WINDOW_SECONDS: f64 = 16.0;
pub const DEFAULT_AUDIO_STRIDE_SECONDS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ContextWindow {
    pub token_start: usize,
    pub token_end: usize,
    pub target_token: usize,
}

impl ContextWindow {
    /// Number of story tokens fed to the model, target included.
    pub fn len(&self) -> usize {
        self.token_end + 1 - self.token_start.max(1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokens preceding the target inside the window.
    pub fn prior_context(&self) -> usize {
        self.len() - 1
    }

    /// First story token inside the window.
    pub fn first_token(&self) -> usize {
        self.token_start.max(1)
    }
}

/// Context window for token `i` (1-based).
pub fn window_for_token(i: usize, max_len: usize, reset_len: usize) -> Result<ContextWindow> {
    if i < 1 {
        return Err(Error::invalid("token index must be ≥ 1"));
    }
    if reset_len == 0 || reset_len > max_len {
        return Err(Error::invalid(format!(
            "reset length {reset_len} must be in 1..={max_len}"
        )));
    }
    let token_start = if i <= max_len {
        0
    } else {
        reset_len * (i / reset_len) - reset_len
    };
    Ok(ContextWindow {
        token_start,
        token_end: i,
        target_token: i,
    })
}

/// One window per token of a story.
pub fn plan_story_tokens(n_tokens: usize, max_len: usize, reset_len: usize) -> Result<Vec<ContextWindow>> {
    if n_tokens < 1 {
        return Err(Error::invalid("story needs at least one token"));
    }
    (1..=n_tokens)
        .map(|i| window_for_token(i, max_len, reset_len))
        .collect()
}

/// Maximal runs of consecutive windows sharing a start token. Each run can be
/// produced by one cached forward pass. Returned as `(token_start, first_target, last_target)`.
pub fn growth_runs(plan: &[ContextWindow]) -> Vec<(usize, usize, usize)> {
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for w in plan {
        match runs.last_mut() {
            Some(run) if run.0 == w.token_start && run.2 + 1 == w.target_token => run.2 = w.target_token,
            _ => runs.push((w.token_start, w.target_token, w.target_token)),
        }
    }
    runs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AudioWindow {
    pub t_start: f64,
    pub t_end: f64,
}

impl AudioWindow {
    /// Time the window's representation is assigned to.
    pub fn timestamp(&self) -> f64 {
        self.t_end
    }
}

/// Sliding windows ending at every stride multiple in `(0, duration]`.
pub fn plan_audio_windows(
    duration_seconds: f64,
    window_seconds: f64,
    stride_seconds: f64,
) -> Result<Vec<AudioWindow>> {
    if !(stride_seconds > 0.0) {
        return Err(Error::invalid(format!("stride must be positive, got {stride_seconds}")));
    }
    if !(duration_seconds > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration_seconds}")));
    }
    if !(window_seconds > 0.0) {
        return Err(Error::invalid("window must be positive"));
    }
    let count = (duration_seconds / stride_seconds + 1e-9).floor() as usize;
    Ok((1..=count)
        .map(|k| {
            let mut t_end = k as f64 * stride_seconds;
            if (t_end - duration_seconds).abs() < 1e-9 * duration_seconds {
                t_end = duration_seconds;
            }
            AudioWindow {
                t_start: (t_end - window_seconds).max(0.0),
                t_end,
            }
        })
        .collect())
}
