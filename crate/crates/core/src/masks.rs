//! Attention-mask construction for all training stages and post-training
//! modes, the H-bridge layer schedule, and multiview 3D-RoPE position
//! assignment.
//!
//! Token sequence layouts are flattened as text, conditioned-frame, video,
//! action. Conditioned-frame tokens count as video tokens for masking and
//! are attendable in every mode. The autoregressive layout interleaves,
//! per chunk, clean (teacher-forced) video, noisy video, and noisy action
//! tokens; clean action tokens are never part of the sequence.

use crate::error::{Error, Result};

/// Structured token counts describing one flattened sequence.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenLayout {
    pub n_text: usize,
    pub n_cond: usize,
    /// Future video latent frames (K).
    pub frames: usize,
    /// Camera views per frame.
    pub views: usize,
    pub tokens_per_frame_per_view: usize,
    /// Action tokens per latent frame: `S_a = f_va · τ`.
    pub actions_per_frame: usize,
    /// Exclusive end-frame per chunk, strictly increasing, last = frames.
    /// Required by the autoregressive mask.
    pub chunking: Option<Vec<usize>>,
}

impl TokenLayout {
    /// Action tokens per latent frame from the action-per-raw-frame rate
    /// and the VAE temporal compression.
    pub fn action_tokens_per_frame(f_va: usize, tau: usize) -> usize {
        f_va * tau
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(chunks) = &self.chunking {
            if chunks.is_empty() {
                return Err(Error::invalid("chunking must not be empty"));
            }
            let mut prev = 0usize;
            for &end in chunks {
                if end <= prev {
                    return Err(Error::invalid("chunk boundaries must be strictly increasing"));
                }
                prev = end;
            }
            if prev != self.frames {
                return Err(Error::invalid(format!(
                    "chunk boundaries must cover all frames: last={prev}, frames={}",
                    self.frames
                )));
            }
        }
        Ok(())
    }

    pub fn video_tokens_per_frame(&self) -> usize {
        self.views * self.tokens_per_frame_per_view
    }

    /// Sequence length of the non-autoregressive layout.
    pub fn seq_len(&self) -> usize {
        self.n_text
            + self.n_cond
            + self.frames * self.video_tokens_per_frame()
            + self.frames * self.actions_per_frame
    }

    /// Sequence length of the autoregressive layout (clean + noisy video
    /// plus noisy action per chunk).
    pub fn seq_len_ar(&self) -> usize {
        self.n_text
            + self.n_cond
            + self.frames * (2 * self.video_tokens_per_frame() + self.actions_per_frame)
    }
}

/// Role of one token in the flattened sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Text,
    /// Conditioned-frame token; video-typed for masking.
    Cond,
    Video,
    Action,
    /// Teacher-forced past observation (autoregressive layout only).
    CleanVideo,
}

impl TokenRole {
    /// Video-typed tokens are subject to the video→action restriction.
    pub fn is_video_typed(&self) -> bool {
        matches!(self, TokenRole::Cond | TokenRole::Video | TokenRole::CleanVideo)
    }
}

/// Role and chunk id (`usize::MAX` for the global prefix) per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenInfo {
    pub role: TokenRole,
    pub chunk: usize,
}

const GLOBAL: usize = usize::MAX;

/// Flattened roles of the non-autoregressive sequence.
pub fn token_roles(layout: &TokenLayout) -> Vec<TokenInfo> {
    let mut roles = Vec::with_capacity(layout.seq_len());
    roles.extend(std::iter::repeat(TokenInfo { role: TokenRole::Text, chunk: GLOBAL }).take(layout.n_text));
    roles.extend(std::iter::repeat(TokenInfo { role: TokenRole::Cond, chunk: GLOBAL }).take(layout.n_cond));
    for _ in 0..layout.frames * layout.video_tokens_per_frame() {
        roles.push(TokenInfo { role: TokenRole::Video, chunk: GLOBAL });
    }
    for _ in 0..layout.frames * layout.actions_per_frame {
        roles.push(TokenInfo { role: TokenRole::Action, chunk: GLOBAL });
    }
    roles
}

/// Flattened roles of the autoregressive sequence: per chunk, clean video,
/// noisy video, then noisy action tokens.
pub fn token_roles_ar(layout: &TokenLayout) -> Result<Vec<TokenInfo>> {
    let chunks = layout
        .chunking
        .as_ref()
        .ok_or_else(|| Error::invalid("autoregressive mask requires a chunking"))?;
    layout.validate()?;
    let mut roles = Vec::with_capacity(layout.seq_len_ar());
    roles.extend(std::iter::repeat(TokenInfo { role: TokenRole::Text, chunk: GLOBAL }).take(layout.n_text));
    roles.extend(std::iter::repeat(TokenInfo { role: TokenRole::Cond, chunk: GLOBAL }).take(layout.n_cond));
    let mut start = 0usize;
    for (chunk_id, &end) in chunks.iter().enumerate() {
        let frames = end - start;
        for _ in 0..frames * layout.video_tokens_per_frame() {
            roles.push(TokenInfo { role: TokenRole::CleanVideo, chunk: chunk_id });
        }
        for _ in 0..frames * layout.video_tokens_per_frame() {
            roles.push(TokenInfo { role: TokenRole::Video, chunk: chunk_id });
        }
        for _ in 0..frames * layout.actions_per_frame {
            roles.push(TokenInfo { role: TokenRole::Action, chunk: chunk_id });
        }
        start = end;
    }
    Ok(roles)
}

/// Boolean attendability matrix over a flattened token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new_false(n: usize) -> Self {
        Self {
            n,
            allowed: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.n + key]
    }

    pub fn set(&mut self, query: usize, key: usize, value: bool) {
        self.allowed[query * self.n + key] = value;
    }

    /// Fraction of allowed cells.
    pub fn density(&self) -> f64 {
        if self.allowed.is_empty() {
            return 0.0;
        }
        self.allowed.iter().filter(|&&b| b).count() as f64 / self.allowed.len() as f64
    }

    /// True when every pair allowed here is also allowed in `other`.
    pub fn is_subset_of(&self, other: &AttentionMask) -> bool {
        self.n == other.n
            && self
                .allowed
                .iter()
                .zip(&other.allowed)
                .all(|(a, b)| !a || *b)
    }

    /// Portable bitmap text: one row per line, one `1`/`0` per cell.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.n * (self.n + 1));
        for q in 0..self.n {
            for k in 0..self.n {
                s.push(if self.get(q, k) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let n = rows.len();
        let mut mask = AttentionMask::new_false(n);
        for (q, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "mask row {q} has {} cells, expected {n}",
                    row.len()
                )));
            }
            for (k, c) in row.chars().enumerate() {
                match c {
                    '1' => mask.set(q, k, true),
                    '0' => {}
                    other => return Err(Error::Parse(format!("bad mask cell {other:?}"))),
                }
            }
        }
        Ok(mask)
    }
}

/// Training / inference mask variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Video-only pre-training: action tokens excluded from attention.
    Stage1,
    /// Full joint attention over language, cond, video, action.
    Stage2,
    /// Full attention minus every (video query, action key) pair.
    NonArV2a,
    /// Block-causal over temporally ordered chunks.
    Ar,
}

/// Build the attention mask for the given mode.
pub fn build_mask(kind: MaskKind, layout: &TokenLayout) -> Result<AttentionMask> {
    layout.validate()?;
    match kind {
        MaskKind::Stage1 => {
            let roles = token_roles(layout);
            let mut mask = AttentionMask::new_false(roles.len());
            for (q, qi) in roles.iter().enumerate() {
                if qi.role == TokenRole::Action {
                    continue;
                }
                for (k, ki) in roles.iter().enumerate() {
                    if ki.role != TokenRole::Action {
                        mask.set(q, k, true);
                    }
                }
            }
            Ok(mask)
        }
        MaskKind::Stage2 => {
            let n = layout.seq_len();
            let mut mask = AttentionMask::new_false(n);
            for q in 0..n {
                for k in 0..n {
                    mask.set(q, k, true);
                }
            }
            Ok(mask)
        }
        MaskKind::NonArV2a => {
            let roles = token_roles(layout);
            let mut mask = AttentionMask::new_false(roles.len());
            for (q, qi) in roles.iter().enumerate() {
                for (k, ki) in roles.iter().enumerate() {
                    let blocked = qi.role.is_video_typed() && ki.role == TokenRole::Action;
                    mask.set(q, k, !blocked);
                }
            }
            Ok(mask)
        }
        MaskKind::Ar => build_mask_ar_with(layout, true),
    }
}

/// Autoregressive block-causal mask.
///
/// Chunk-k tokens see text, cond, and clean video of earlier chunks; noisy
/// video and action of chunk k attend within the chunk; action tokens of
/// other chunks are never visible. `v2a_within_chunk` keeps the
/// video→action restriction inside each chunk (the deployed pattern).
pub fn build_mask_ar_with(layout: &TokenLayout, v2a_within_chunk: bool) -> Result<AttentionMask> {
    let roles = token_roles_ar(layout)?;
    let mut mask = AttentionMask::new_false(roles.len());
    for (q, qi) in roles.iter().enumerate() {
        for (k, ki) in roles.iter().enumerate() {
            let allowed = match qi.role {
                TokenRole::Text | TokenRole::Cond => {
                    matches!(ki.role, TokenRole::Text | TokenRole::Cond)
                }
                TokenRole::CleanVideo => match ki.role {
                    TokenRole::Text | TokenRole::Cond => true,
                    TokenRole::CleanVideo => ki.chunk <= qi.chunk,
                    _ => false,
                },
                TokenRole::Video => match ki.role {
                    TokenRole::Text | TokenRole::Cond => true,
                    TokenRole::CleanVideo => ki.chunk < qi.chunk,
                    TokenRole::Video => ki.chunk == qi.chunk,
                    TokenRole::Action => !v2a_within_chunk && ki.chunk == qi.chunk,
                },
                TokenRole::Action => match ki.role {
                    TokenRole::Text | TokenRole::Cond => true,
                    TokenRole::CleanVideo => ki.chunk < qi.chunk,
                    TokenRole::Video | TokenRole::Action => ki.chunk == qi.chunk,
                },
            };
            mask.set(q, k, allowed);
        }
    }
    Ok(mask)
}

/// Decoupled-attention mask used by the H-bridge boundary layers: video
/// and action are processed independently, both still see text, and the
/// conditioned-frame tokens stay attendable from every stream.
pub fn decoupled_mask(layout: &TokenLayout) -> Result<AttentionMask> {
    layout.validate()?;
    let roles = token_roles(layout);
    let mut mask = AttentionMask::new_false(roles.len());
    for (q, qi) in roles.iter().enumerate() {
        for (k, ki) in roles.iter().enumerate() {
            let cross = (qi.role.is_video_typed() && ki.role == TokenRole::Action)
                || (qi.role == TokenRole::Action && ki.role == TokenRole::Video);
            mask.set(q, k, !cross);
        }
    }
    Ok(mask)
}

/// Which transformer layers run full video-action joint attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSchedule {
    pub depth: usize,
    /// `true` = joint attention, `false` = decoupled.
    pub joint_flags: Vec<bool>,
}

impl LayerSchedule {
    pub fn joint_count(&self) -> usize {
        self.joint_flags.iter().filter(|&&f| f).count()
    }
}

/// H-bridge schedule: bottom and top ⌈depth/4⌉ layers decoupled, the
/// contiguous middle block joint.
pub fn hbridge_schedule(depth: usize) -> Result<LayerSchedule> {
    if depth < 4 {
        return Err(Error::invalid(format!("depth must be ≥ 4, got {depth}")));
    }
    let boundary = depth.div_ceil(4);
    let joint_flags = (0..depth)
        .map(|layer| layer >= boundary && layer < depth - boundary)
        .collect();
    Ok(LayerSchedule { depth, joint_flags })
}

/// Rotary position over (temporal, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rope3dPosition {
    pub temporal: usize,
    pub spatial_h: usize,
    pub spatial_w: usize,
}

/// Spatial grid shared by all views of a multiview clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewGrid {
    pub frames: usize,
    pub views: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Default per-view spatial offsets: zero height offset, width offset of
/// `v · 2 · cols` so view boxes are separated by one full view width.
pub fn default_view_offsets(views: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..views).map(|v| (0, v * 2 * cols)).collect()
}

/// Assign a 3D rotary position to every video token: frame index on the
/// temporal axis, grid coordinates plus the view's offset on the spatial
/// axes. Token order is frame-major, then view, then row-major cells.
pub fn rope3d_assign(grid: &ViewGrid, offsets: &[(usize, usize)]) -> Result<Vec<Rope3dPosition>> {
    if offsets.len() != grid.views {
        return Err(Error::DimensionMismatch {
            context: "view offsets",
            expected: grid.views,
            got: offsets.len(),
        });
    }
    // Per-view spatial boxes must be pairwise disjoint.
    for a in 0..grid.views {
        for b in (a + 1)..grid.views {
            let (ah, aw) = offsets[a];
            let (bh, bw) = offsets[b];
            let overlap_h = ah < bh + grid.rows && bh < ah + grid.rows;
            let overlap_w = aw < bw + grid.cols && bw < aw + grid.cols;
            if overlap_h && overlap_w {
                return Err(Error::invalid(format!(
                    "spatial boxes of views {a} and {b} overlap"
                )));
            }
        }
    }
    let mut positions = Vec::with_capacity(grid.frames * grid.views * grid.rows * grid.cols);
    for frame in 0..grid.frames {
        for (view, &(dh, dw)) in offsets.iter().enumerate() {
            let _ = view;
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    positions.push(Rope3dPosition {
                        temporal: frame,
                        spatial_h: r + dh,
                        spatial_w: c + dw,
                    });
                }
            }
        }
    }
    Ok(positions)
}

/// Output of the reference attention kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub outputs: Vec<Vec<f64>>,
    /// Query rows with no allowed key (their output is all zeros).
    pub starved: Vec<usize>,
}

/// Tiny deterministic attention kernel used to test mask semantics:
/// softmax over allowed keys only, per query.
pub fn masked_attention_reference(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    mask: &AttentionMask,
) -> Result<AttentionOutput> {
    let n = keys.len();
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            context: "attention values",
            expected: n,
            got: values.len(),
        });
    }
    if mask.len() != n || queries.len() != n {
        return Err(Error::DimensionMismatch {
            context: "attention mask/queries",
            expected: n,
            got: mask.len().max(queries.len()),
        });
    }
    let dk = keys.first().map_or(0, |k| k.len());
    let dv = values.first().map_or(0, |v| v.len());
    if keys.iter().any(|k| k.len() != dk)
        || queries.iter().any(|q| q.len() != dk)
        || values.iter().any(|v| v.len() != dv)
    {
        return Err(Error::invalid("ragged attention inputs"));
    }

    let mut outputs = Vec::with_capacity(n);
    let mut starved = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let allowed: Vec<usize> = (0..n).filter(|&k| mask.get(qi, k)).collect();
        if allowed.is_empty() {
            starved.push(qi);
            outputs.push(vec![0.0; dv]);
            continue;
        }
        let logits: Vec<f64> = allowed
            .iter()
            .map(|&k| q.iter().zip(&keys[k]).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let mut out = vec![0.0; dv];
        for (&k, e) in allowed.iter().zip(&exps) {
            let p = e / denom;
            for (o, v) in out.iter_mut().zip(&values[k]) {
                *o += p * v;
            }
        }
        outputs.push(out);
    }
    Ok(AttentionOutput { outputs, starved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// 2 text, 1 cond, K=2 frames, 1 view, 2 tokens/frame, Sa=2, 2 chunks.
    fn small_layout() -> TokenLayout {
        TokenLayout {
            n_text: 2,
            n_cond: 1,
            frames: 2,
            views: 1,
            tokens_per_frame_per_view: 2,
            actions_per_frame: TokenLayout::action_tokens_per_frame(2, 1),
            chunking: Some(vec![1, 2]),
        }
    }

    fn mask_from_rows(rows: &[&str]) -> AttentionMask {
        AttentionMask::from_text(&rows.join("\n")).unwrap()
    }

    fn random_inputs(
        rng: &mut StdRng,
        n: usize,
        dk: usize,
        dv: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut gen = |d: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let q = gen(dk);
        let k = gen(dk);
        let v = gen(dv);
        (q, k, v)
    }

    #[test]
    fn v2a_mask_matches_hand_enumeration() {
        // sequence: 0,1 text | 2 cond | 3,4 video f0 | 5,6 video f1 |
        //           7,8 action f0 | 9,10 action f1
        let expect = mask_from_rows(&[
            "11111111111",
            "11111111111",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111111111",
            "11111111111",
            "11111111111",
            "11111111111",
        ]);
        let got = build_mask(MaskKind::NonArV2a, &small_layout()).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn stage1_mask_matches_hand_enumeration() {
        let expect = mask_from_rows(&[
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "00000000000",
            "00000000000",
            "00000000000",
            "00000000000",
        ]);
        let got = build_mask(MaskKind::Stage1, &small_layout()).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn stage2_is_full_and_superset_of_v2a() {
        let layout = small_layout();
        let stage2 = build_mask(MaskKind::Stage2, &layout).unwrap();
        assert_eq!(stage2.density(), 1.0);
        let v2a = build_mask(MaskKind::NonArV2a, &layout).unwrap();
        assert!(v2a.is_subset_of(&stage2));
    }

    #[test]
    fn decoupled_mask_matches_hand_enumeration() {
        // action rows keep text (0,1) and cond (2): the conditioned frame
        // is attendable in every mode
        let expect = mask_from_rows(&[
            "11111111111",
            "11111111111",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11111110000",
            "11100001111",
            "11100001111",
            "11100001111",
            "11100001111",
        ]);
        let got = decoupled_mask(&small_layout()).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn ar_mask_matches_hand_enumeration() {
        // sequence: 0,1 text | 2 cond |
        //   chunk0: 3,4 clean | 5,6 noisy | 7,8 action
        //   chunk1: 9,10 clean | 11,12 noisy | 13,14 action
        let expect = mask_from_rows(&[
            "111000000000000",
            "111000000000000",
            "111000000000000",
            "111110000000000",
            "111110000000000",
            "111001100000000",
            "111001100000000",
            "111001111000000",
            "111001111000000",
            "111110000110000",
            "111110000110000",
            "111110000001100",
            "111110000001100",
            "111110000001111",
            "111110000001111",
        ]);
        let got = build_mask(MaskKind::Ar, &small_layout()).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn ar_mask_requires_chunking_and_respects_causality() {
        let mut layout = small_layout();
        layout.chunking = None;
        assert!(build_mask(MaskKind::Ar, &layout).is_err());

        let layout3 = TokenLayout {
            n_text: 1,
            n_cond: 1,
            frames: 3,
            views: 1,
            tokens_per_frame_per_view: 1,
            actions_per_frame: 1,
            chunking: Some(vec![1, 2, 3]),
        };
        let mask = build_mask(MaskKind::Ar, &layout3).unwrap();
        let roles = token_roles_ar(&layout3).unwrap();
        for (q, qi) in roles.iter().enumerate() {
            for (k, ki) in roles.iter().enumerate() {
                if qi.chunk != GLOBAL && ki.chunk != GLOBAL && ki.chunk > qi.chunk {
                    assert!(!mask.get(q, k), "chunk {} sees chunk {}", qi.chunk, ki.chunk);
                }
                // never attend action tokens of another chunk
                if ki.role == TokenRole::Action && qi.chunk != ki.chunk {
                    assert!(!mask.get(q, k));
                }
            }
        }
    }

    #[test]
    fn ar_v2a_toggle_opens_intra_chunk_video_to_action() {
        let layout = small_layout();
        let strict = build_mask_ar_with(&layout, true).unwrap();
        let open = build_mask_ar_with(&layout, false).unwrap();
        // noisy video of chunk 0 is rows 5,6; its action keys are 7,8
        assert!(!strict.get(5, 7));
        assert!(open.get(5, 7));
        assert!(strict.is_subset_of(&open));
    }

    #[test]
    fn diagonal_allowed_for_participating_tokens() {
        let layout = small_layout();
        for kind in [MaskKind::Stage2, MaskKind::NonArV2a, MaskKind::Ar] {
            let mask = build_mask(kind, &layout).unwrap();
            for q in 0..mask.len() {
                assert!(mask.get(q, q), "{kind:?} diagonal at {q}");
            }
        }
        // stage 1: every participating (non-action) token keeps its diagonal
        let mask = build_mask(MaskKind::Stage1, &layout).unwrap();
        for (q, info) in token_roles(&layout).iter().enumerate() {
            assert_eq!(mask.get(q, q), info.role != TokenRole::Action);
        }
    }

    #[test]
    fn mask_text_roundtrip() {
        let mask = build_mask(MaskKind::Ar, &small_layout()).unwrap();
        let back = AttentionMask::from_text(&mask.to_text()).unwrap();
        assert_eq!(mask, back);
        assert!(AttentionMask::from_text("10\n1\n").is_err());
        assert!(AttentionMask::from_text("1x\n01\n").is_err());
    }

    #[test]
    fn hbridge_examples() {
        let s = hbridge_schedule(4).unwrap();
        assert_eq!(s.joint_flags, vec![false, true, true, false]);
        let s = hbridge_schedule(12).unwrap();
        let expect: Vec<bool> = (0..12).map(|l| (3..9).contains(&l)).collect();
        assert_eq!(s.joint_flags, expect);
        assert!(hbridge_schedule(3).is_err());
    }

    #[test]
    fn hbridge_joint_count_arithmetic() {
        for depth in 4..=128 {
            let s = hbridge_schedule(depth).unwrap();
            assert_eq!(s.joint_count(), depth - 2 * depth.div_ceil(4), "depth {depth}");
            // contiguous middle block
            let first = s.joint_flags.iter().position(|&f| f);
            let last = s.joint_flags.iter().rposition(|&f| f);
            if let (Some(a), Some(b)) = (first, last) {
                assert!(s.joint_flags[a..=b].iter().all(|&f| f));
            }
        }
    }

    #[test]
    fn rope_single_view_is_raw_grid() {
        let grid = ViewGrid { frames: 2, views: 1, rows: 2, cols: 3 };
        let pos = rope3d_assign(&grid, &default_view_offsets(1, 3)).unwrap();
        assert_eq!(pos.len(), 12);
        assert_eq!(pos[0], Rope3dPosition { temporal: 0, spatial_h: 0, spatial_w: 0 });
        assert_eq!(pos[5], Rope3dPosition { temporal: 0, spatial_h: 1, spatial_w: 2 });
        assert_eq!(pos[6].temporal, 1);
    }

    #[test]
    fn rope_two_views_get_disjoint_width_ranges() {
        let grid = ViewGrid { frames: 1, views: 2, rows: 4, cols: 4 };
        let offsets = default_view_offsets(2, 4);
        assert_eq!(offsets, vec![(0, 0), (0, 8)]);
        let pos = rope3d_assign(&grid, &offsets).unwrap();
        let ws: Vec<usize> = pos.iter().map(|p| p.spatial_w).collect();
        let view0: Vec<usize> = ws[..16].to_vec();
        let view1: Vec<usize> = ws[16..].to_vec();
        assert!(view0.iter().all(|&w| w <= 3));
        assert!(view1.iter().all(|&w| (8..=11).contains(&w)));
        // temporal coordinates match across views per frame
        assert!(pos.iter().all(|p| p.temporal == 0));
    }

    #[test]
    fn rope_three_views_pairwise_disjoint_by_enumeration() {
        let grid = ViewGrid { frames: 2, views: 3, rows: 3, cols: 3 };
        let pos = rope3d_assign(&grid, &default_view_offsets(3, 3)).unwrap();
        let per_view = grid.rows * grid.cols;
        let spatial_set = |view: usize| -> std::collections::HashSet<(usize, usize)> {
            (0..grid.frames)
                .flat_map(|f| {
                    let base = (f * grid.views + view) * per_view;
                    pos[base..base + per_view]
                        .iter()
                        .map(|p| (p.spatial_h, p.spatial_w))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(spatial_set(a).is_disjoint(&spatial_set(b)));
            }
        }
        // identical temporal multiset across views for any fixed frame
        for f in 0..grid.frames {
            for v in 0..grid.views {
                let base = (f * grid.views + v) * per_view;
                assert!(pos[base..base + per_view].iter().all(|p| p.temporal == f));
            }
        }
    }

    #[test]
    fn rope_rejects_overlapping_boxes() {
        let grid = ViewGrid { frames: 1, views: 2, rows: 4, cols: 4 };
        assert!(rope3d_assign(&grid, &[(0, 0), (0, 3)]).is_err());
        assert!(rope3d_assign(&grid, &[(0, 0)]).is_err());
    }

    #[test]
    fn attention_reference_basics() {
        // all-true mask, single token: output is that value
        let mask = AttentionMask::from_text("1\n").unwrap();
        let out = masked_attention_reference(
            &[vec![0.3]],
            &[vec![-0.7]],
            &[vec![2.0, 5.0]],
            &mask,
        )
        .unwrap();
        assert_eq!(out.outputs, vec![vec![2.0, 5.0]]);
        assert!(out.starved.is_empty());

        // uniform keys, all-true mask: output = mean of values
        let n = 4;
        let mut mask = AttentionMask::new_false(n);
        for q in 0..n {
            for k in 0..n {
                mask.set(q, k, true);
            }
        }
        let keys = vec![vec![1.0, 1.0]; n];
        let values: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let queries = vec![vec![0.5, -0.5]; n];
        let out = masked_attention_reference(&queries, &keys, &values, &mask).unwrap();
        for o in &out.outputs {
            assert!((o[0] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_reference_matches_dense_neg_inf_oracle() {
        let mut rng = StdRng::seed_from_u64(21);
        let n = 9;
        let (q, k, v) = random_inputs(&mut rng, n, 4, 3);
        let mut mask = AttentionMask::new_false(n);
        for qi in 0..n {
            for ki in 0..n {
                mask.set(qi, ki, rng.gen_bool(0.6));
            }
        }
        let got = masked_attention_reference(&q, &k, &v, &mask).unwrap();
        // dense oracle: disallowed logits set to -inf
        for qi in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|ki| {
                    if mask.get(qi, ki) {
                        q[qi].iter().zip(&k[ki]).map(|(a, b)| a * b).sum()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                assert!(got.starved.contains(&qi));
                continue;
            }
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for d in 0..3 {
                let expect: f64 = (0..n).map(|ki| exps[ki] / denom * v[ki][d]).sum();
                assert!((got.outputs[qi][d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_reference_flags_starved_queries() {
        let mask = AttentionMask::new_false(2);
        let out = masked_attention_reference(
            &[vec![1.0], vec![1.0]],
            &[vec![1.0], vec![1.0]],
            &[vec![3.0], vec![4.0]],
            &mask,
        )
        .unwrap();
        assert_eq!(out.starved, vec![0, 1]);
        assert_eq!(out.outputs, vec![vec![0.0], vec![0.0]]);
    }

    #[test]
    fn v2a_video_outputs_invariant_to_action_perturbation() {
        let mut rng = StdRng::seed_from_u64(22);
        let layout = small_layout();
        let mask = build_mask(MaskKind::NonArV2a, &layout).unwrap();
        let roles = token_roles(&layout);
        let n = roles.len();
        let (q, k, v) = random_inputs(&mut rng, n, 5, 4);
        let base = masked_attention_reference(&q, &k, &v, &mask).unwrap();

        let (mut q2, mut k2, mut v2) = (q.clone(), k.clone(), v.clone());
        for (i, info) in roles.iter().enumerate() {
            if info.role == TokenRole::Action {
                for x in q2[i].iter_mut().chain(k2[i].iter_mut()).chain(v2[i].iter_mut()) {
                    *x += rng.gen_range(-10.0..10.0);
                }
            }
        }
        let perturbed = masked_attention_reference(&q2, &k2, &v2, &mask).unwrap();
        // text still attends action keys under this mask; only the
        // video-typed outputs must be untouched
        for (i, info) in roles.iter().enumerate() {
            if info.role.is_video_typed() {
                assert_eq!(base.outputs[i], perturbed.outputs[i], "token {i}");
            }
        }
    }
}
