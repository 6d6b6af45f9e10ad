#include "szlab/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <nlohmann/json.hpp>

#include "szlab/report.hpp"
#include "szlab/tensor_io.hpp"

namespace szlab {

namespace {

constexpr double kMinCoverage = 0.05;
constexpr double kMaxCoverage = 0.50;
constexpr double kScaleLo = 5.5, kScaleHi = 9.5;

// Pixels stay inside [kFloor, kCeil] so that a poison budget is never eaten by the [0, 1] clamp.
constexpr double kFloor = 0.05, kCeil = 0.95;

double kind_factor(ShapeKind k) {
  switch (k) {
    case ShapeKind::disc: return 1.0;
    case ShapeKind::square: return 1.0;
    case ShapeKind::cross: return 1.1;
    case ShapeKind::ring: return 1.15;
    case ShapeKind::triangle: return 1.45;
  }
  return 1.0;
}

bool inside(ShapeKind kind, double u, double v, double s) {
  const double r = std::hypot(u, v);
  switch (kind) {
    case ShapeKind::disc: return r <= s;
    case ShapeKind::square: return std::abs(u) <= 0.85 * s && std::abs(v) <= 0.85 * s;
    case ShapeKind::cross:
      return (std::abs(u) <= 0.35 * s && std::abs(v) <= s) || (std::abs(v) <= 0.35 * s && std::abs(u) <= s);
    case ShapeKind::ring: return r <= s && r >= 0.55 * s;
    case ShapeKind::triangle: {
      // Equilateral, circumradius s, apex along -v.
      for (int k = 0; k < 3; ++k) {
        const double a = -std::numbers::pi / 2 + k * 2 * std::numbers::pi / 3 + std::numbers::pi / 3;
        if (u * std::cos(a) + v * std::sin(a) > 0.5 * s) return false;
      }
      return true;
    }
  }
  return false;
}

double texture_value(const ConceptDescriptor& d, double u, double v) {
  const double w = 2 * std::numbers::pi / d.texture_period;
  const double ca = std::cos(d.texture_angle), sa = std::sin(d.texture_angle);
  const double p = u * ca + v * sa, q = -u * sa + v * ca;
  switch (d.texture) {
    case TextureKind::flat: return 0.0;
    case TextureKind::stripes: return d.texture_amplitude * std::cos(w * p);
    case TextureKind::checker: return d.texture_amplitude * std::cos(w * p) * std::cos(w * q);
  }
  return 0.0;
}

double coverage(const Tensor& mask) { return sum(mask) / static_cast<double>(mask.size()); }

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disc: return "disc";
    case ShapeKind::square: return "square";
    case ShapeKind::cross: return "cross";
    case ShapeKind::ring: return "ring";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::flat: return "flat";
    case TextureKind::stripes: return "stripes";
    case TextureKind::checker: return "checker";
  }
  return "?";
}

RenderedImage render_scene(const ConceptDescriptor& object, const SceneLayout& layout, std::size_t side) {
  RenderedImage out{Tensor({1, side, side}), Tensor({1, side, side})};
  const double ca = std::cos(layout.angle), sa = std::sin(layout.angle);
  const double mid = static_cast<double>(side) / 2.0;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dx = px - layout.center_x, dy = py - layout.center_y;
      const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
      double value;
      if (inside(object.kind, u, v, object.scale)) {
        value = object.intensity + texture_value(object, u, v);
        out.mask(0, y, x) = 1.0f;
      } else {
        value = layout.background + layout.slope_x * (px - mid) + layout.slope_y * (py - mid) +
                layout.ripple_amplitude * std::cos(layout.ripple_fx * px + layout.ripple_fy * py + layout.ripple_phase);
      }
      out.image(0, y, x) = static_cast<float>(std::clamp(value, kFloor, kCeil));
    }
  }
  return out;
}

ConceptDescriptor random_descriptor(Rng& rng) {
  ConceptDescriptor d;
  d.kind = static_cast<ShapeKind>(rng.uniform_index(5));
  d.scale = kind_factor(d.kind) * (kScaleLo + (kScaleHi - kScaleLo) * rng.uniform());
  const bool bright = rng.uniform() < 0.5;
  d.intensity = bright ? 0.7 + 0.15 * rng.uniform() : 0.12 + 0.13 * rng.uniform();
  d.texture = static_cast<TextureKind>(rng.uniform_index(3));
  d.texture_period = 5.0 + 3.0 * rng.uniform();
  d.texture_angle = std::numbers::pi * rng.uniform();
  d.texture_amplitude = d.texture == TextureKind::flat ? 0.0 : 0.08 + 0.04 * rng.uniform();
  return d;
}

SceneLayout random_layout(Rng& rng, std::size_t side, double jitter) {
  SceneLayout l;
  const double mid = static_cast<double>(side) / 2.0;
  l.center_x = mid + jitter * (2 * rng.uniform() - 1);
  l.center_y = mid + jitter * (2 * rng.uniform() - 1);
  l.angle = 2 * std::numbers::pi * rng.uniform();
  l.background = 0.35 + 0.25 * rng.uniform();
  const double slope = 0.2 / static_cast<double>(side);
  l.slope_x = slope * (2 * rng.uniform() - 1);
  l.slope_y = slope * (2 * rng.uniform() - 1);
  l.ripple_amplitude = 0.03 * rng.uniform();
  l.ripple_fx = 0.4 * (2 * rng.uniform() - 1);
  l.ripple_fy = 0.4 * (2 * rng.uniform() - 1);
  l.ripple_phase = 2 * std::numbers::pi * rng.uniform();
  return l;
}

std::vector<Tensor> ConceptDataset::concept_images(std::size_t concept_id) const {
  if (concept_id >= concepts.size()) throw InvalidArgument("concept index out of range");
  return {images.begin() + static_cast<std::ptrdiff_t>(index(concept_id, 0)),
          images.begin() + static_cast<std::ptrdiff_t>(index(concept_id + 1, 0))};
}

std::vector<Tensor> ConceptDataset::concept_masks(std::size_t concept_id) const {
  if (concept_id >= concepts.size()) throw InvalidArgument("concept index out of range");
  return {masks.begin() + static_cast<std::ptrdiff_t>(index(concept_id, 0)),
          masks.begin() + static_cast<std::ptrdiff_t>(index(concept_id + 1, 0))};
}

ConceptDataset generate_concepts(const DatasetParams& params, const RngStream& stream) {
  if (params.n_concepts < 1) throw InvalidArgument("generate_concepts: need at least one concept");
  if (params.images_per_concept < 1) throw InvalidArgument("generate_concepts: need at least one image per concept");
  if (params.image_side < 8) throw InvalidArgument("generate_concepts: image side too small");
  ConceptDataset ds;
  ds.params = params;
  for (std::size_t c = 0; c < params.n_concepts; ++c) {
    Rng rng(stream.derive(c));
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw NumericFailure("generate_concepts: cannot satisfy mask coverage bounds");
      ConceptDescriptor d = random_descriptor(rng);
      d.kind = static_cast<ShapeKind>(c % 5);  // every shape family is represented
      d.scale = kind_factor(d.kind) * (kScaleLo + (kScaleHi - kScaleLo) * rng.uniform());
      std::vector<RenderedImage> shots;
      bool ok = true;
      for (std::size_t i = 0; i < params.images_per_concept && ok; ++i) {
        const double side = static_cast<double>(params.image_side);
        auto shot = render_scene(d, random_layout(rng, params.image_side, params.placement_jitter * side / 32.0),
                                 params.image_side);
        const double cov = coverage(shot.mask);
        ok = cov >= kMinCoverage && cov <= kMaxCoverage;
        shots.push_back(std::move(shot));
      }
      if (!ok) continue;
      ds.concepts.push_back(d);
      for (auto& s : shots) {
        ds.images.push_back(std::move(s.image));
        ds.masks.push_back(std::move(s.mask));
      }
      break;
    }
  }
  return ds;
}

std::vector<int> attribute_tokens(const ConceptDescriptor& d) {
  const int kind = 1 + static_cast<int>(d.kind);
  const double rel = (d.scale / kind_factor(d.kind) - kScaleLo) / (kScaleHi - kScaleLo);
  const int size = 6 + std::clamp(static_cast<int>(rel * 3), 0, 2);
  const int tone = d.intensity > 0.5 ? 9 : 10;
  const int texture = 11 + static_cast<int>(d.texture);
  return {kind, size, tone, texture};
}

CaptionedCorpus make_pretrain_corpus(std::size_t count, std::size_t side, double null_caption_fraction,
                                     const RngStream& stream) {
  CaptionedCorpus corpus;
  corpus.images.reserve(count);
  corpus.captions.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(stream.derive(i));
    const auto d = random_descriptor(rng);
    auto shot = render_scene(d, random_layout(rng, side, 3.0 * static_cast<double>(side) / 32.0), side);
    corpus.images.push_back(std::move(shot.image));
    corpus.captions.push_back(rng.uniform() < null_caption_fraction ? std::vector<int>{} : attribute_tokens(d));
  }
  return corpus;
}

void save_dataset(const std::filesystem::path& dir, const ConceptDataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["n_concepts"] = ds.params.n_concepts;
  meta["images_per_concept"] = ds.params.images_per_concept;
  meta["image_side"] = ds.params.image_side;
  meta["placement_jitter"] = ds.params.placement_jitter;
  for (const auto& d : ds.concepts) {
    meta["concepts"].push_back({{"kind", to_string(d.kind)},
                                {"scale", d.scale},
                                {"intensity", d.intensity},
                                {"texture", to_string(d.texture)},
                                {"texture_period", d.texture_period},
                                {"texture_angle", d.texture_angle},
                                {"texture_amplitude", d.texture_amplitude}});
  }
  std::ofstream(dir / "dataset.json") << meta.dump(2) << "\n";
  for (std::size_t c = 0; c < ds.concepts.size(); ++c) {
    for (std::size_t i = 0; i < ds.params.images_per_concept; ++i) {
      const auto stem = "c" + std::to_string(c) + "_" + std::to_string(i);
      write_tensor(dir / (stem + "_image.tnsr"), ds.images[ds.index(c, i)]);
      write_tensor(dir / (stem + "_mask.tnsr"), ds.masks[ds.index(c, i)]);
      write_pgm(dir / (stem + "_image.pgm"), ds.images[ds.index(c, i)]);
    }
  }
}

ConceptDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw InvalidArgument("load_dataset: no dataset.json in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  ConceptDataset ds;
  ds.params.n_concepts = meta.at("n_concepts").get<std::size_t>();
  ds.params.images_per_concept = meta.at("images_per_concept").get<std::size_t>();
  ds.params.image_side = meta.at("image_side").get<std::size_t>();
  ds.params.placement_jitter = meta.at("placement_jitter").get<double>();
  auto kind_of = [](const std::string& s) {
    for (int k = 0; k < 5; ++k)
      if (to_string(static_cast<ShapeKind>(k)) == s) return static_cast<ShapeKind>(k);
    throw InvalidArgument("load_dataset: unknown shape " + s);
  };
  auto texture_of = [](const std::string& s) {
    for (int k = 0; k < 3; ++k)
      if (to_string(static_cast<TextureKind>(k)) == s) return static_cast<TextureKind>(k);
    throw InvalidArgument("load_dataset: unknown texture " + s);
  };
  for (const auto& j : meta.at("concepts")) {
    ds.concepts.push_back({kind_of(j.at("kind")), j.at("scale"), j.at("intensity"), texture_of(j.at("texture")),
                           j.at("texture_period"), j.at("texture_angle"), j.at("texture_amplitude")});
  }
  for (std::size_t c = 0; c < ds.concepts.size(); ++c) {
    for (std::size_t i = 0; i < ds.params.images_per_concept; ++i) {
      const auto stem = "c" + std::to_string(c) + "_" + std::to_string(i);
      ds.images.push_back(read_tensor(dir / (stem + "_image.tnsr")));
      ds.masks.push_back(read_tensor(dir / (stem + "_mask.tnsr")));
    }
  }
  return ds;
}

}  // namespace szlab
