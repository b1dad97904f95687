//! Initial Gaussian sets from the available priors.

use gsimage::init::{gradient_init, random_init, sample_positions, DEFAULT_UNIFORM_FLOOR};
use gsimage::{density_log_scale, heuristic_attributes, GaussianSet, ImageBuffer};

use crate::attributes::gather_attributes;
use crate::error::NeuralError;
use crate::scalar::NeuralReal;
use crate::unet::{AttributeNet, PositionNet};

pub enum PositionPrior<'a, T> {
    Random,
    Gradient { uniform_floor: f64 },
    Heatmap(&'a PositionNet<T>),
}

impl<T> PositionPrior<'_, T> {
    pub fn gradient() -> Self {
        PositionPrior::Gradient {
            uniform_floor: DEFAULT_UNIFORM_FLOOR,
        }
    }
}

pub fn initial_positions<T: NeuralReal>(
    image: &ImageBuffer<T>,
    k: usize,
    seed: u64,
    prior: &PositionPrior<'_, T>,
) -> Result<Vec<[T; 2]>, NeuralError> {
    Ok(match prior {
        PositionPrior::Random => random_init(image.width, image.height, k, seed)?,
        PositionPrior::Gradient { uniform_floor } => gradient_init(image, k, seed, *uniform_floor)?,
        PositionPrior::Heatmap(net) => sample_positions(&net.predict(image, k as f64), k, seed)?,
    })
}

/// Attributes from the network when given, otherwise the heuristic.
pub fn initial_set<T: NeuralReal>(
    image: &ImageBuffer<T>,
    positions: &[[T; 2]],
    attrnet: Option<&AttributeNet<T>>,
) -> GaussianSet<T> {
    let rgb = image.to_rgb();
    match attrnet {
        None => heuristic_attributes(positions, &rgb),
        Some(net) => {
            let base = T::of(density_log_scale(rgb.width, rgb.height, positions.len()));
            gather_attributes(&net.predict(&rgb), positions, base)
        }
    }
}
