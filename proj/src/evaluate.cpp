#include "szlab/evaluate.hpp"

#include <cmath>
#include <limits>

#include "szlab/train.hpp"

namespace szlab {

namespace {

float at_clamped(const Tensor& img, std::ptrdiff_t y, std::ptrdiff_t x, std::size_t h, std::size_t w) {
  y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
  x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
  return img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
}

Tensor shifted(const Tensor& img, int dx, int dy) {
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  Tensor out(img.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out[y * w + x] = at_clamped(img, static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx, h, w);
  return out;
}

double masked_mean(const Tensor& img, const Tensor& mask) {
  double s = 0, n = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    s += img[i] * mask[i];
    n += mask[i];
  }
  return n > 0 ? s / n : 0.0;
}

}  // namespace

Alignment aligned_masked_mse(const Tensor& image, const Tensor& reference, const Tensor& mask, int max_shift) {
  require_same_shape(image, reference, "aligned_masked_mse");
  require_same_shape(image, mask, "aligned_masked_mse mask");
  if (max_shift < 0) throw InvalidArgument("aligned_masked_mse: max_shift must be >= 0");
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const double area = sum(mask);
  if (!(area > 0)) throw InvalidArgument("aligned_masked_mse: empty mask");
  Alignment best{std::numeric_limits<double>::infinity(), 0, 0};
  for (int dy = -max_shift; dy <= max_shift; ++dy) {
    for (int dx = -max_shift; dx <= max_shift; ++dx) {
      double acc = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float m = mask[y * w + x];
          if (m == 0.0f) continue;
          const double d =
              at_clamped(image, static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx, h, w) -
              reference[y * w + x];
          acc += m * d * d;
        }
      const double mse = acc / area;
      if (mse < best.mse) best = {mse, dx, dy};
    }
  }
  return best;
}

double edge_density(const Tensor& image, const Tensor* mask, double threshold) {
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  double edges = 0, total = 0;
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const float m = mask ? (*mask)[y * w + x] : 1.0f;
      if (m == 0.0f) continue;
      const double gx = image[y * w + x + 1] - image[y * w + x];
      const double gy = image[(y + 1) * w + x] - image[y * w + x];
      edges += std::hypot(gx, gy) > threshold ? 1.0 : 0.0;
      total += 1.0;
    }
  return total > 0 ? edges / total : 0.0;
}

ConceptMetrics score_images(const std::vector<Tensor>& images, const std::vector<Tensor>& references,
                            const std::vector<Tensor>& masks, const EvalConfig& cfg) {
  if (references.empty() || references.size() != masks.size()) {
    throw InvalidArgument("evaluate: need one mask per reference image");
  }
  ConceptMetrics out;
  std::vector<Tensor> dilated;
  for (const auto& m : masks) dilated.push_back(dilate_mask(m, cfg.mask_dilation));
  for (const auto& img : images) {
    Alignment best{std::numeric_limits<double>::infinity(), 0, 0};
    std::size_t best_ref = 0;
    for (std::size_t r = 0; r < references.size(); ++r) {
      const auto a = aligned_masked_mse(img, references[r], dilated[r], cfg.max_shift);
      if (a.mse < best.mse) {
        best = a;
        best_ref = r;
      }
    }
    const Tensor moved = shifted(img, best.dx, best.dy);
    const auto& ref = references[best_ref];
    const auto& m = dilated[best_ref];
    out.masked_mse += best.mse;
    out.intensity_delta += std::abs(masked_mean(moved, m) - masked_mean(ref, m));
    out.edge_delta +=
        std::abs(edge_density(moved, &m, cfg.edge_threshold) - edge_density(ref, &m, cfg.edge_threshold));
  }
  const auto n = static_cast<double>(std::max<std::size_t>(images.size(), 1));
  out.masked_mse /= n;
  out.intensity_delta /= n;
  out.edge_delta /= n;
  return out;
}

ConceptMetrics evaluate_concept(const ToyModel& model, const std::vector<Tensor>& references,
                                const std::vector<Tensor>& masks, const EvalConfig& cfg, const RngStream& stream) {
  if (cfg.n_gen < 5) throw InvalidArgument("evaluate_concept: n_gen must be >= 5");
  const auto cond = model.condition(model.concept_prompt());
  std::vector<Tensor> images;
  for (int i = 0; i < cfg.n_gen; ++i) {
    images.push_back(generate(model, cond, cfg.sampling_steps, stream.derive(static_cast<std::uint64_t>(i))));
  }
  auto out = score_images(images, references, masks, cfg);
  out.generated = std::move(images);
  return out;
}

}  // namespace szlab
