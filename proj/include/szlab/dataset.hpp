#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "szlab/rng.hpp"
#include "szlab/tensor.hpp"

namespace szlab {

enum class ShapeKind { disc, square, cross, ring, triangle };
enum class TextureKind { flat, stripes, checker };

std::string to_string(ShapeKind kind);
std::string to_string(TextureKind kind);

/// Appearance of one object, shared by every image of a concept.
struct ConceptDescriptor {
  ShapeKind kind = ShapeKind::disc;
  double scale = 7.0;  // outer radius in pixels
  double intensity = 0.8;
  TextureKind texture = TextureKind::flat;
  double texture_period = 6.0;  // pixels
  double texture_angle = 0.0;
  double texture_amplitude = 0.0;
};

/// Per-image placement and background.
struct SceneLayout {
  double center_x = 16.0, center_y = 16.0;
  double angle = 0.0;
  double background = 0.45;
  double slope_x = 0.0, slope_y = 0.0;          // per pixel
  double ripple_amplitude = 0.0, ripple_fx = 0.0, ripple_fy = 0.0, ripple_phase = 0.0;
};

struct RenderedImage {
  Tensor image;  // [1, S, S] in [0, 1]
  Tensor mask;   // [1, S, S], exactly the painted object pixels
};

RenderedImage render_scene(const ConceptDescriptor& object, const SceneLayout& layout, std::size_t side);

struct DatasetParams {
  std::size_t n_concepts = 10;
  std::size_t images_per_concept = 5;
  std::size_t image_side = 32;
  double placement_jitter = 3.0;  // pixels around the image center
};

struct ConceptDataset {
  DatasetParams params;
  std::vector<ConceptDescriptor> concepts;
  std::vector<Tensor> images;  // concept-major
  std::vector<Tensor> masks;

  std::size_t index(std::size_t concept_id, std::size_t image) const {
    return concept_id * params.images_per_concept + image;
  }
  std::vector<Tensor> concept_images(std::size_t concept_id) const;
  std::vector<Tensor> concept_masks(std::size_t concept_id) const;
};

ConceptDescriptor random_descriptor(Rng& rng);
SceneLayout random_layout(Rng& rng, std::size_t side, double jitter);

ConceptDataset generate_concepts(const DatasetParams& params, const RngStream& stream);

/// Attribute words describing an object; dictionary ids below the vocab size.
std::vector<int> attribute_tokens(const ConceptDescriptor& d);

/// Captioned scenes for diffusion pretraining. A fraction of captions is empty.
struct CaptionedCorpus {
  std::vector<Tensor> images;
  std::vector<std::vector<int>> captions;  // content tokens only (no start/end)
};

CaptionedCorpus make_pretrain_corpus(std::size_t count, std::size_t side, double null_caption_fraction,
                                     const RngStream& stream);

void save_dataset(const std::filesystem::path& dir, const ConceptDataset& ds);
ConceptDataset load_dataset(const std::filesystem::path& dir);

}  // namespace szlab
