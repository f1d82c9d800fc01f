//! Network configuration and the named ablation variants.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchMode {
    /// k-nearest-neighbor patch of exactly `n_d` points.
    Knn,
    /// All points within the given world-frame radius, padded/truncated to
    /// `n_d` points.
    FixedRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsampleMode {
    /// Distance-weighted draw favoring points near the query.
    Gradient,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// Independent parameters for the local and global encoders.
    Separate,
    /// One parameter set used for both subsets.
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Local patch size.
    pub n_d: usize,
    /// Global subsample size.
    pub n_s: usize,
    pub patch_mode: PatchMode,
    pub subsample_mode: SubsampleMode,
    pub encoder_mode: EncoderMode,
    /// Predict a rotation from the global subset and apply it to both
    /// subsets before encoding.
    pub use_qstn: bool,
    /// Per-point encoder stage widths; the feature transform acts on the
    /// third stage's output.
    pub point_widths: Vec<usize>,
    /// Decoder hidden widths; the final 2-unit head is implicit.
    pub decoder_widths: Vec<usize>,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_d: 300,
            n_s: 1000,
            patch_mode: PatchMode::Knn,
            subsample_mode: SubsampleMode::Gradient,
            encoder_mode: EncoderMode::Separate,
            use_qstn: true,
            point_widths: vec![64, 64, 64, 128, 1024],
            decoder_widths: vec![1024, 512, 256],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Shrink every layer width by an integer factor; used for desk-scale
    /// tests where the full ladder is too slow.
    pub fn scaled_down(mut self, divisor: usize) -> Self {
        assert!(divisor >= 1);
        for w in &mut self.point_widths {
            *w = (*w / divisor).max(2);
        }
        for w in &mut self.decoder_widths {
            *w = (*w / divisor).max(2);
        }
        self
    }

    /// Final per-point feature width (the encoder output size).
    pub fn feature_width(&self) -> usize {
        *self.point_widths.last().expect("nonempty widths")
    }

    /// Build a named ablation variant from this baseline. `l` is the
    /// source shape's bounding-box longest side, used by the
    /// radius-patch variants.
    pub fn variant(&self, name: &str, l: f64) -> Result<ModelConfig> {
        let mut cfg = self.clone();
        match name {
            "e_vanilla" => {}
            "k_small" => cfg.n_d = (self.n_d / 4).max(1),
            "k_large" => cfg.n_d = self.n_d * 4,
            "r_small" => cfg.patch_mode = PatchMode::FixedRadius(0.05 * l),
            "r_med" => cfg.patch_mode = PatchMode::FixedRadius(0.1 * l),
            "r_large" => cfg.patch_mode = PatchMode::FixedRadius(0.2 * l),
            "e_shared" => cfg.encoder_mode = EncoderMode::Shared,
            "e_no_QSTN" => cfg.use_qstn = false,
            "e_uniform" => cfg.subsample_mode = SubsampleMode::Uniform,
            other => return Err(Error::Config(format!("unknown model variant: {other}"))),
        }
        Ok(cfg)
    }

    pub const VARIANTS: &'static [&'static str] = &[
        "e_vanilla", "k_small", "k_large", "r_small", "r_med", "r_large", "e_shared",
        "e_no_QSTN", "e_uniform",
    ];

    /// Canonical text form used for hashing and config files.
    pub fn canonical_string(&self) -> String {
        let patch = match self.patch_mode {
            PatchMode::Knn => "knn".to_string(),
            PatchMode::FixedRadius(r) => format!("fixed_radius({r})"),
        };
        let sub = match self.subsample_mode {
            SubsampleMode::Gradient => "gradient",
            SubsampleMode::Uniform => "uniform",
        };
        let enc = match self.encoder_mode {
            EncoderMode::Separate => "separate",
            EncoderMode::Shared => "shared",
        };
        let pw: Vec<String> = self.point_widths.iter().map(|w| w.to_string()).collect();
        let dw: Vec<String> = self.decoder_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "n_d={} n_s={} patch={} subsample={} encoder={} qstn={} point_widths={} decoder_widths={} seed={}",
            self.n_d,
            self.n_s,
            patch,
            sub,
            enc,
            self.use_qstn,
            pw.join(","),
            dw.join(","),
            self.seed
        )
    }

    /// FNV-1a hash of the canonical form; stored in checkpoints so a
    /// mismatched architecture is rejected at load time.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.canonical_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_change_one_axis_each() {
        let base = ModelConfig::default();
        let l = 1.0;
        assert_eq!(base.variant("e_vanilla", l).unwrap(), base);
        assert_eq!(base.variant("k_small", l).unwrap().n_d, 75);
        assert_eq!(base.variant("k_large", l).unwrap().n_d, 1200);
        assert_eq!(
            base.variant("r_med", l).unwrap().patch_mode,
            PatchMode::FixedRadius(0.1)
        );
        assert_eq!(
            base.variant("e_shared", l).unwrap().encoder_mode,
            EncoderMode::Shared
        );
        assert!(!base.variant("e_no_QSTN", l).unwrap().use_qstn);
        assert_eq!(
            base.variant("e_uniform", l).unwrap().subsample_mode,
            SubsampleMode::Uniform
        );
        assert!(base.variant("bogus", l).is_err());
    }

    #[test]
    fn hash_is_sensitive_to_config() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.n_d = 299;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }
}
