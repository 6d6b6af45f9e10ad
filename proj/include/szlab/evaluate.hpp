#pragma once

#include <vector>

#include "szlab/model.hpp"

namespace szlab {

struct EvalConfig {
  int n_gen = 8;
  int sampling_steps = 50;
  int max_shift = 4;        // alignment search radius in pixels
  int mask_dilation = 1;    // reference masks are dilated by this radius
  double edge_threshold = 0.1;
};

struct ConceptMetrics {
  double masked_mse = 0.0;       // mean over generations of the best aligned masked MSE
  double intensity_delta = 0.0;  // |mean inside mask| difference at the best alignment
  double edge_delta = 0.0;       // |edge density| difference at the best alignment
  std::vector<Tensor> generated;
};

/// Best masked MSE of `image` against one reference over integer shifts of
/// +-max_shift pixels (the image is sampled at border-clamped shifted coordinates).
struct Alignment {
  double mse = 0.0;
  int dx = 0, dy = 0;
};
Alignment aligned_masked_mse(const Tensor& image, const Tensor& reference, const Tensor& mask, int max_shift);

/// Fraction of pixels whose forward-difference gradient magnitude exceeds `threshold`.
double edge_density(const Tensor& image, const Tensor* mask, double threshold);

/// Generates n_gen images from the concept prompt and scores them against the references.
ConceptMetrics evaluate_concept(const ToyModel& model, const std::vector<Tensor>& references,
                                const std::vector<Tensor>& masks, const EvalConfig& cfg, const RngStream& stream);

/// Scores already generated images (used by evaluate_concept).
ConceptMetrics score_images(const std::vector<Tensor>& images, const std::vector<Tensor>& references,
                            const std::vector<Tensor>& masks, const EvalConfig& cfg);

}  // namespace szlab
