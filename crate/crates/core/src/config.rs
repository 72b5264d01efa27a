//! Architecture hyperparameters. One [`ModelConfig`] value defines one
//! reproducible network.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::error::{ensure, Error, Result};

/// Number of saliency encoder levels feeding the aggregation.
pub const SALIENCY_LEVELS: usize = 4;
/// Number of pyramid scales (strides 2..32).
pub const SCALES: usize = 5;

/// Network variant from the boundary-branch ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    /// Saliency stream only.
    Baseline,
    /// Boundary stream without RCUs, fused by concatenation.
    BoundaryMinus,
    /// Boundary stream with RCUs, fused by concatenation.
    BoundaryPlus,
    /// Boundary stream with RCUs, fused by channel attention.
    AffmPlus,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::BoundaryMinus,
        Ablation::BoundaryPlus,
        Ablation::AffmPlus,
    ];

    pub fn has_boundary(self) -> bool {
        self != Ablation::Baseline
    }

    pub fn uses_rcu(self) -> bool {
        matches!(self, Ablation::BoundaryPlus | Ablation::AffmPlus)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::BoundaryMinus => "boundary-",
            Ablation::BoundaryPlus => "boundary+",
            Ablation::AffmPlus => "affm+",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Ablation::Baseline),
            "boundary-" | "boundary_minus" | "boundaryminus" => Ok(Ablation::BoundaryMinus),
            "boundary+" | "boundary_plus" | "boundaryplus" => Ok(Ablation::BoundaryPlus),
            "affm+" | "affm_plus" | "affmplus" => Ok(Ablation::AffmPlus),
            _ => Err(Error::contract("backbone", alloc::format!("unknown ablation {s:?}"))),
        }
    }
}

/// Non-empty subset of the scales `1..=5` whose stage maps are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpmSubset(u8);

impl FpmSubset {
    pub const ALL: FpmSubset = FpmSubset(0b11111);

    pub fn new(scales: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &s in scales {
            ensure!((1..=SCALES).contains(&s), "backbone", "fpm scale {s} outside 1..=5");
            bits |= 1 << (s - 1);
        }
        ensure!(bits != 0, "backbone", "fpm subset must be non-empty");
        Ok(FpmSubset(bits))
    }

    pub fn contains(self, scale: usize) -> bool {
        (1..=SCALES).contains(&scale) && self.0 & (1 << (scale - 1)) != 0
    }

    /// Member scales in increasing order.
    pub fn scales(self) -> impl Iterator<Item = usize> {
        (1..=SCALES).filter(move |&s| self.contains(s))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for FpmSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.scales() {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for FpmSubset {
    type Err = Error;

    /// Parses the digit form used in reports, e.g. `"2345"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut scales = alloc::vec::Vec::new();
        for ch in s.trim().chars().filter(|c| !matches!(c, ',' | ' ' | '{' | '}')) {
            let d = ch
                .to_digit(10)
                .ok_or_else(|| Error::contract("backbone", alloc::format!("bad fpm subset {s:?}")))?;
            scales.push(d as usize);
        }
        FpmSubset::new(&scales)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub base_channels: usize,
    pub boundary_channels: usize,
    pub agg_channels: usize,
    pub rcu_count: usize,
    pub ablation: Ablation,
    pub fpm_subset: FpmSubset,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_h: 64,
            input_w: 64,
            base_channels: 16,
            boundary_channels: 16,
            agg_channels: 32,
            rcu_count: 1,
            ablation: Ablation::AffmPlus,
            fpm_subset: FpmSubset::ALL,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 256x256 input with otherwise default settings.
    pub fn full_scale() -> Self {
        ModelConfig {
            input_h: 256,
            input_w: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1 << SCALES;
        ensure!(
            self.input_h > 0 && self.input_w > 0 && self.input_h % div == 0 && self.input_w % div == 0,
            "backbone",
            "input size {}x{} must be a positive multiple of {div}",
            self.input_h,
            self.input_w
        );
        ensure!(
            self.base_channels > 0 && self.boundary_channels > 0 && self.agg_channels > 0,
            "backbone",
            "channel counts must be positive"
        );
        ensure!(!self.fpm_subset.is_empty(), "backbone", "fpm subset must be non-empty");
        Ok(())
    }

    /// Canonical text form; equal configs give equal strings.
    pub fn canonical(&self) -> String {
        alloc::format!(
            "input_size={}x{};base_channels={};boundary_channels={};agg_channels={};rcu_count={};ablation={};fpm_subset={};seed={}",
            self.input_h,
            self.input_w,
            self.base_channels,
            self.boundary_channels,
            self.agg_channels,
            self.rcu_count,
            self.ablation,
            self.fpm_subset,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_round_trip() {
        let s: FpmSubset = "45".parse().unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.contains(4) && s.contains(5) && !s.contains(1));
        assert_eq!(alloc::format!("{s}"), "45");
        assert!("".parse::<FpmSubset>().is_err());
        assert!("6".parse::<FpmSubset>().is_err());
    }

    #[test]
    fn input_size_must_divide() {
        let mut c = ModelConfig::default();
        c.input_h = 48;
        assert!(c.validate().is_err());
        assert!(ModelConfig::full_scale().validate().is_ok());
    }

    #[test]
    fn ablation_names_parse() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
    }
}
