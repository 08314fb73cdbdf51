//! Token context windows and audio windows for feature extraction.

use voxscale::schedule::{growth_runs, plan_audio_windows, plan_story_tokens, window_for_token};

fn main() -> voxscale::Result<()> {
    for i in [1, 512, 513, 767, 768, 1500] {
        let w = window_for_token(i, 512, 256)?;
        println!("token {i:>4}: tokens {}..={} ({} in context)", w.first_token(), w.token_end, w.len());
    }
    let plan = plan_story_tokens(1500, 512, 256)?;
    for (start, first, last) in growth_runs(&plan) {
        println!("context start {start:>4} serves targets {first}..={last}");
    }
    let audio = plan_audio_windows(1.0, 16.0, 0.1)?;
    println!("{} audio windows, last {:?}", audio.len(), audio.last().unwrap());
    Ok(())
}
