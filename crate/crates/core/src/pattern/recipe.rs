//! Training-pattern recipes.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{combine, AnalyticPattern, Component, RectSpec, SimplifiedDma, DEFAULT_FLOOR_DB};
use crate::error::{invalid, Error, Result};

const MAX_RETRIES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    /// 60 fixed first-order patterns.
    A,
    /// One random simplified DMA, no combination.
    Bminus,
    /// Normalized sum of up to `C` random simplified DMAs.
    B,
    /// Like `B`, but a third of the draws sum rectangles and a third mix both.
    Bplus,
}

impl std::str::FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Recipe::A),
            "bminus" | "b-" => Ok(Recipe::Bminus),
            "b" => Ok(Recipe::B),
            "bplus" | "b+" => Ok(Recipe::Bplus),
            other => Err(invalid(format!("unknown recipe `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub recipe: Recipe,
    /// Upper bound `C` on the number of summed components.
    pub max_components: usize,
    /// Patterns drawn per source-array setup.
    pub patterns_per_setup: usize,
    pub floor_db: f64,
    pub rng_seed: u64,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            recipe: Recipe::B,
            max_components: 4,
            patterns_per_setup: 60,
            floor_db: DEFAULT_FLOOR_DB,
            rng_seed: 0,
        }
    }
}

impl RecipeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_components < 1 {
            return Err(invalid("max_components must be at least 1"));
        }
        if self.patterns_per_setup < 1 {
            return Err(invalid("patterns_per_setup must be at least 1"));
        }
        if !(self.floor_db <= 0.0) {
            return Err(invalid("floor_db must be <= 0"));
        }
        Ok(())
    }

    /// The `P` patterns for one setup. Recipe A yields all 60 patterns when
    /// `P >= 60`, otherwise a random subset without replacement.
    pub fn patterns_for_setup<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<AnalyticPattern>> {
        self.validate()?;
        match self.recipe {
            Recipe::A => {
                let all = gen_recipe_a();
                let picked = if self.patterns_per_setup >= all.len() {
                    all
                } else {
                    let idx = sample(rng, all.len(), self.patterns_per_setup);
                    idx.into_iter().map(|i| all[i].clone()).collect()
                };
                picked
                    .into_iter()
                    .map(|p| p.with_floor_db(self.floor_db))
                    .collect()
            }
            _ => (0..self.patterns_per_setup)
                .map(|_| gen_recipe(self, rng))
                .collect(),
        }
    }
}

/// `J = 1`, `mu` in `{0, 0.1, ..., 0.9}`, steering in `{0°, 60°, ..., 300°}`.
pub fn gen_recipe_a() -> Vec<AnalyticPattern> {
    let mut out = Vec::with_capacity(60);
    for m in 0..10 {
        for s in 0..6 {
            let spec = SimplifiedDma {
                mu: m as f64 / 10.0,
                theta_s: (60.0 * s as f64).to_radians(),
                order_j: 1,
            };
            out.push(combine(vec![spec.into()]).expect("first-order DMA is non-degenerate"));
        }
    }
    out
}

fn random_dma<R: Rng + ?Sized>(rng: &mut R) -> Component {
    Component::DmaSimplified(SimplifiedDma {
        mu: rng.random_range(0..10) as f64 / 10.0,
        theta_s: rng.random_range(0.0..TAU),
        order_j: rng.random_range(1..=11),
    })
}

fn random_rect<R: Rng + ?Sized>(rng: &mut R) -> Component {
    Component::Rect(RectSpec {
        theta_start: rng.random_range(0.0..TAU),
        theta_end: rng.random_range(0.0..TAU),
    })
}

fn draw_components<R: Rng + ?Sized>(cfg: &RecipeConfig, rng: &mut R) -> Vec<Component> {
    let c_max = cfg.max_components;
    match cfg.recipe {
        Recipe::A => unreachable!("recipe A is enumerated, not sampled"),
        Recipe::Bminus => vec![random_dma(rng)],
        Recipe::B => {
            let c = rng.random_range(1..=c_max);
            (0..c).map(|_| random_dma(rng)).collect()
        }
        Recipe::Bplus => match rng.random_range(0..3) {
            0 => {
                let c = rng.random_range(1..=c_max);
                (0..c).map(|_| random_dma(rng)).collect()
            }
            1 => {
                let c = rng.random_range(1..=c_max);
                (0..c).map(|_| random_rect(rng)).collect()
            }
            _ => {
                // at least one of each kind
                let c = rng.random_range(2..=c_max.max(2));
                let mut comps = vec![random_dma(rng), random_rect(rng)];
                for _ in 2..c {
                    comps.push(if rng.random_bool(0.5) {
                        random_dma(rng)
                    } else {
                        random_rect(rng)
                    });
                }
                comps
            }
        },
    }
}

/// Draws one random pattern for recipe B-, B or B+.
pub fn gen_recipe<R: Rng + ?Sized>(cfg: &RecipeConfig, rng: &mut R) -> Result<AnalyticPattern> {
    cfg.validate()?;
    if cfg.recipe == Recipe::A {
        return Err(invalid("recipe A is a fixed enumeration; use gen_recipe_a"));
    }
    for _ in 0..MAX_RETRIES {
        match combine(draw_components(cfg, rng)) {
            Ok(p) => return p.with_floor_db(cfg.floor_db),
            Err(Error::DegeneratePattern) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegeneratePattern)
}
