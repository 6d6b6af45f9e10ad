#include "szlab/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "szlab/tensor_io.hpp"

namespace szlab {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using VecMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

template <typename Real>
ConstMatMap<Real> as_matrix(const BasicTensor<Real>& t) {
  return ConstMatMap<Real>(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                           static_cast<Eigen::Index>(t.size() / t.dim(0)));
}

template <typename Real>
MatMap<Real> as_matrix(BasicTensor<Real>& t) {
  return MatMap<Real>(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.size() / t.dim(0)));
}

template <typename Real>
ConstVecMap<Real> as_vector(const BasicTensor<Real>& t) {
  return ConstVecMap<Real>(t.data(), static_cast<Eigen::Index>(t.size()));
}

template <typename Real>
BasicTensor<Real> gaussian(Rng& rng, Shape shape, double stddev) {
  BasicTensor<Real> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(stddev * rng.normal());
  return t;
}

}  // namespace

std::string to_string(DenoiserGate g) {
  switch (g) {
    case DenoiserGate::none: return "none";
    case DenoiserGate::output: return "output";
    case DenoiserGate::condition: return "condition";
  }
  return "?";
}

DenoiserGate denoiser_gate_from_string(const std::string& name) {
  if (name == "none") return DenoiserGate::none;
  if (name == "output") return DenoiserGate::output;
  if (name == "condition") return DenoiserGate::condition;
  throw InvalidArgument("unknown denoiser gate '" + name + "'");
}

void ModelConfig::validate() const {
  if (image_side == 0 || embed_dim == 0 || vocab == 0 || prompt_length == 0 || cond_dim == 0 || hidden == 0) {
    throw InvalidArgument("model config: dimensions must be positive");
  }
  if (time_features == 0 || time_features % 2 != 0) throw InvalidArgument("model config: time_features must be even");
  if (!pixel_space && (patch == 0 || image_side % patch != 0)) {
    throw InvalidArgument("model config: patch must divide image_side");
  }
  if (timesteps < 1) throw InvalidArgument("model config: timesteps must be >= 1");
}

// ---------------------------------------------------------------- embeddings

template <typename Real>
BasicTensor<Real> BasicEmbeddingTable<Real>::row(int id) const {
  if (!valid_token(id)) throw InvalidArgument("unknown token id " + std::to_string(id));
  if (id == start_token()) return start;
  if (id == end_token()) return end;
  if (id == concept_token()) return learned;
  BasicTensor<Real> out({dim()});
  std::copy_n(dictionary.data() + static_cast<std::size_t>(id) * dim(), dim(), out.data());
  return out;
}

std::vector<int> make_prompt(std::span<const int> content, int start_token, int end_token, std::size_t length) {
  if (content.size() + 1 > length) throw InvalidArgument("prompt longer than the prompt length");
  std::vector<int> ids;
  ids.reserve(length);
  ids.push_back(start_token);
  ids.insert(ids.end(), content.begin(), content.end());
  ids.resize(length, end_token);
  return ids;
}

template <typename Real>
std::vector<int> pad_prompt(const BasicEmbeddingTable<Real>& table, std::span<const int> token_ids,
                            std::size_t length) {
  if (token_ids.size() > length) throw InvalidArgument("prompt longer than the prompt length");
  std::vector<int> ids(token_ids.begin(), token_ids.end());
  for (int id : ids) {
    if (!table.valid_token(id)) throw InvalidArgument("unknown token id " + std::to_string(id));
  }
  ids.resize(length, table.end_token());
  return ids;
}

template <typename Real>
BasicTensor<Real> pool_embeddings(const BasicEmbeddingTable<Real>& table, std::span<const int> token_ids,
                                  std::size_t length) {
  const auto ids = pad_prompt(table, token_ids, length);
  BasicTensor<Real> pooled({table.dim()});
  for (int id : ids) axpy(Real{1}, table.row(id), pooled);
  for (auto& v : pooled.values()) v /= static_cast<Real>(length);
  return pooled;
}

template <typename Real>
static BasicCondition<Real> mix(const BasicTextMixer<Real>& mixer, const BasicTensor<Real>& pooled) {
  if (mixer.weight.dim(1) != pooled.size()) throw InvalidArgument("text mixer: embedding width mismatch");
  BasicTensor<Real> c = mixer.bias;
  Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(c.data(), static_cast<Eigen::Index>(c.size())) +=
      as_matrix(mixer.weight) * as_vector(pooled);
  return {std::move(c)};
}

template <typename Real>
BasicCondition<Real> text_condition(const BasicEmbeddingTable<Real>& table, const BasicTextMixer<Real>& mixer,
                                    std::span<const int> token_ids, std::size_t length) {
  return mix(mixer, pool_embeddings(table, token_ids, length));
}

template <typename Real>
BasicCondition<Real> text_condition_replaced(const BasicEmbeddingTable<Real>& table, const BasicTextMixer<Real>& mixer,
                                             std::span<const int> token_ids, std::size_t length, std::size_t position,
                                             const BasicTensor<Real>& replacement) {
  const auto ids = pad_prompt(table, token_ids, length);
  if (position >= ids.size()) throw InvalidArgument("token position out of range");
  if (replacement.size() != table.dim()) throw InvalidArgument("replacement embedding width mismatch");
  BasicTensor<Real> pooled({table.dim()});
  for (std::size_t n = 0; n < ids.size(); ++n) axpy(Real{1}, n == position ? replacement : table.row(ids[n]), pooled);
  for (auto& v : pooled.values()) v /= static_cast<Real>(length);
  return mix(mixer, pooled);
}

template <typename Real>
BasicTensor<Real> token_embedding_grad(const BasicTextMixer<Real>& mixer, std::span<const int> padded_ids, int token,
                                       const BasicTensor<Real>& grad_cond) {
  const auto count = std::count(padded_ids.begin(), padded_ids.end(), token);
  BasicTensor<Real> g({mixer.weight.dim(1)});
  if (count == 0) return g;
  const Real scale = static_cast<Real>(count) / static_cast<Real>(padded_ids.size());
  Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(g.data(), static_cast<Eigen::Index>(g.size())) =
      scale * (as_matrix(mixer.weight).transpose() * as_vector(grad_cond));
  return g;
}

template <typename Real>
BasicTextMixer<Real> mixer_grad(const BasicTensor<Real>& pooled, const BasicTensor<Real>& grad_cond) {
  if (pooled.rank() != 2 || grad_cond.rank() != 2 || pooled.dim(0) != grad_cond.dim(0)) {
    throw InvalidArgument("mixer_grad: expected [B, E] and [B, C] with equal B");
  }
  const std::size_t e = pooled.dim(1), c = grad_cond.dim(1);
  BasicTextMixer<Real> g{BasicTensor<Real>({c, e}), BasicTensor<Real>({c})};
  as_matrix(g.weight).noalias() = as_matrix(grad_cond).transpose() * as_matrix(pooled);
  Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(g.bias.data(), static_cast<Eigen::Index>(c)) =
      as_matrix(grad_cond).colwise().sum();
  return g;
}

// ---------------------------------------------------------------- denoiser

template <typename Real>
BasicDenoiserParams<Real> BasicDenoiserParams<Real>::zeros(const ModelConfig& cfg) {
  const std::size_t in = cfg.denoiser_input_size(), h = cfg.hidden, d = cfg.latent_size();
  return {BasicTensor<Real>({h, in}), BasicTensor<Real>({h}),    BasicTensor<Real>({h, h}),
          BasicTensor<Real>({h}),     BasicTensor<Real>({d, h}), BasicTensor<Real>({d}),
          BasicTensor<Real>({static_cast<std::size_t>(cfg.timesteps) + 1}), cfg.gate, cfg.time_features};
}

template <typename Real>
BasicDenoiserParams<Real> BasicDenoiserParams<Real>::init(const ModelConfig& cfg, Rng& rng) {
  auto p = zeros(cfg);
  const double in = static_cast<double>(cfg.denoiser_input_size()), h = static_cast<double>(cfg.hidden);
  p.w1 = gaussian<Real>(rng, p.w1.shape(), 1.0 / std::sqrt(in));
  p.w2 = gaussian<Real>(rng, p.w2.shape(), 1.0 / std::sqrt(h));
  p.w3 = gaussian<Real>(rng, p.w3.shape(), 1.0 / std::sqrt(h));
  const auto sched = Schedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  for (int t = 0; t <= cfg.timesteps; ++t) {
    p.skip[static_cast<std::size_t>(t)] = static_cast<Real>(std::sqrt(1.0 - sched.alpha_bar(t)));
  }
  return p;
}

template <typename Real>
void time_features(int t, std::span<Real> out) {
  const std::size_t half = out.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    out[2 * k] = static_cast<Real>(std::sin(t * freq));
    out[2 * k + 1] = static_cast<Real>(std::cos(t * freq));
  }
}

template <typename Real>
BasicTensor<Real> denoiser_forward_batch(const BasicDenoiserParams<Real>& params, const BasicTensor<Real>& z,
                                         std::span<const int> timesteps, const BasicTensor<Real>& cond,
                                         DenoiserTape<Real>* tape) {
  const std::size_t batch = timesteps.size();
  const std::size_t d = params.output_size(), in = params.input_size();
  const std::size_t c = cond.size() / std::max<std::size_t>(batch, 1);
  const std::size_t f = in - d - c;
  if (batch == 0 || z.size() != batch * d || cond.size() != batch * c || in <= d + c ||
      (params.time_features != 0 && f != params.time_features)) {
    throw InvalidArgument("denoiser: input shape mismatch (z " + shape_string(z.shape()) + ", cond " +
                          shape_string(cond.shape()) + ")");
  }
  for (int t : timesteps) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.skip.size()) {
      throw InvalidArgument("denoiser: timestep " + std::to_string(t) + " out of range");
    }
  }
  BasicTensor<Real> input({batch, in});
  for (std::size_t b = 0; b < batch; ++b) {
    Real* row = input.data() + b * in;
    std::copy_n(z.data() + b * d, d, row);
    time_features<Real>(timesteps[b], std::span<Real>(row + d, f));
    std::copy_n(cond.data() + b * c, c, row + d + f);
    if (params.gate == DenoiserGate::condition) {
      const Real s = params.skip[static_cast<std::size_t>(timesteps[b])];
      for (std::size_t k = 0; k < c; ++k) row[d + f + k] *= s;
    }
  }
  const auto x = as_matrix(input);
  RowMat<Real> h1 = x * as_matrix(params.w1).transpose();
  h1.rowwise() += as_vector(params.b1).transpose();
  h1 = h1.array().tanh();
  RowMat<Real> h2 = h1 * as_matrix(params.w2).transpose();
  h2.rowwise() += as_vector(params.b2).transpose();
  h2 = h2.array().tanh();
  BasicTensor<Real> out({batch, d});
  auto o = as_matrix(out);
  o.noalias() = h2 * as_matrix(params.w3).transpose();
  o.rowwise() += as_vector(params.b3).transpose();
  for (std::size_t b = 0; b < batch; ++b) {
    const Real s = params.skip[static_cast<std::size_t>(timesteps[b])];
    const auto r = static_cast<Eigen::Index>(b);
    if (params.gate == DenoiserGate::output) o.row(r) *= s;
    o.row(r) += s * x.row(r).head(static_cast<Eigen::Index>(d));
  }
  if (tape) {
    tape->timesteps.assign(timesteps.begin(), timesteps.end());
    tape->input = std::move(input);
    tape->h1 = BasicTensor<Real>({batch, params.hidden()});
    tape->h2 = BasicTensor<Real>({batch, params.hidden()});
    as_matrix(tape->h1) = h1;
    as_matrix(tape->h2) = h2;
    tape->cond_dim = c;
  }
  return out;
}

template <typename Real>
DenoiserGrads<Real> denoiser_backward_batch(const BasicDenoiserParams<Real>& params, const DenoiserTape<Real>& tape,
                                            const BasicTensor<Real>& upstream, bool want_param_grads) {
  const std::size_t batch = tape.input.dim(0);
  const std::size_t d = params.output_size(), in = params.input_size();
  if (upstream.size() != batch * d) throw InvalidArgument("denoiser backward: upstream shape mismatch");
  if (!all_finite(upstream)) throw NumericFailure("denoiser backward: non-finite upstream gradient");
  const auto u_out = ConstMatMap<Real>(upstream.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(d));
  RowMat<Real> u = u_out;  // upstream seen by the learned branch
  if (params.gate == DenoiserGate::output) {
    for (std::size_t b = 0; b < batch; ++b)
      u.row(static_cast<Eigen::Index>(b)) *= params.skip[static_cast<std::size_t>(tape.timesteps[b])];
  }
  const auto h1 = as_matrix(tape.h1);
  const auto h2 = as_matrix(tape.h2);
  RowMat<Real> g2 = u * as_matrix(params.w3);
  g2.array() *= (Real{1} - h2.array().square());
  RowMat<Real> g1 = g2 * as_matrix(params.w2);
  g1.array() *= (Real{1} - h1.array().square());
  RowMat<Real> gin = g1 * as_matrix(params.w1);

  DenoiserGrads<Real> grads;
  grads.z = BasicTensor<Real>({batch, d});
  as_matrix(grads.z) = gin.leftCols(static_cast<Eigen::Index>(d));
  for (std::size_t b = 0; b < batch; ++b) {
    as_matrix(grads.z).row(static_cast<Eigen::Index>(b)) +=
        params.skip[static_cast<std::size_t>(tape.timesteps[b])] * u_out.row(static_cast<Eigen::Index>(b));
  }
  if (tape.cond_dim == 0 || tape.cond_dim > in - d) throw InvalidArgument("denoiser backward: tape has no condition width");
  grads.cond = BasicTensor<Real>({batch, tape.cond_dim});
  as_matrix(grads.cond) = gin.rightCols(static_cast<Eigen::Index>(tape.cond_dim));
  if (params.gate == DenoiserGate::condition) {
    for (std::size_t b = 0; b < batch; ++b)
      as_matrix(grads.cond).row(static_cast<Eigen::Index>(b)) *= params.skip[static_cast<std::size_t>(tape.timesteps[b])];
  }
  if (want_param_grads) {
    grads.params = BasicDenoiserParams<Real>{
        BasicTensor<Real>(params.w1.shape()), BasicTensor<Real>(params.b1.shape()),
        BasicTensor<Real>(params.w2.shape()), BasicTensor<Real>(params.b2.shape()),
        BasicTensor<Real>(params.w3.shape()), BasicTensor<Real>(params.b3.shape()), BasicTensor<Real>(),
        params.gate, params.time_features};
    as_matrix(grads.params.w3).noalias() = u.transpose() * h2;
    as_matrix(grads.params.w2).noalias() = g2.transpose() * h1;
    as_matrix(grads.params.w1).noalias() = g1.transpose() * as_matrix(tape.input);
    auto colsum = [](const auto& m, BasicTensor<Real>& out) {
      Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(out.data(), static_cast<Eigen::Index>(out.size())) =
          m.colwise().sum().transpose();
    };
    colsum(u, grads.params.b3);
    colsum(g2, grads.params.b2);
    colsum(g1, grads.params.b1);
  }
  return grads;
}

template <typename Real>
BasicTensor<Real> denoiser_forward(const BasicDenoiserParams<Real>& params, const BasicTensor<Real>& z_t, int t,
                                   const BasicCondition<Real>& cond) {
  if (z_t.size() != params.output_size()) {
    throw InvalidArgument("denoiser: z_t shape " + shape_string(z_t.shape()) + " does not match latent size " +
                          std::to_string(params.output_size()));
  }
  const int ts[1] = {t};
  return denoiser_forward_batch(params, z_t.reshaped({1, z_t.size()}), ts,
                                cond.vector.reshaped({1, cond.vector.size()}))
      .reshaped(z_t.shape());
}

template <typename Real>
DenoiserGrads<Real> denoiser_backward(const BasicDenoiserParams<Real>& params, const BasicTensor<Real>& z_t, int t,
                                      const BasicCondition<Real>& cond, const BasicTensor<Real>& upstream) {
  if (upstream.size() != params.output_size() || z_t.size() != params.output_size()) {
    throw InvalidArgument("denoiser backward: shape mismatch");
  }
  DenoiserTape<Real> tape;
  const int ts[1] = {t};
  denoiser_forward_batch(params, z_t.reshaped({1, z_t.size()}), ts, cond.vector.reshaped({1, cond.vector.size()}),
                         &tape);
  auto grads = denoiser_backward_batch(params, tape, upstream.reshaped({1, upstream.size()}), true);
  const std::size_t cdim = cond.vector.size();
  grads.z = grads.z.reshaped(z_t.shape());
  grads.cond = grads.cond.reshaped({cdim});
  return grads;
}

// ---------------------------------------------------------------- autoencoder

template <typename Real>
BasicTensor<Real> encode(const BasicAutoencoderParams<Real>& ae, const BasicTensor<Real>& x) {
  if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != x.dim(2)) {
    throw InvalidArgument("encode: expected a [1, S, S] image, got " + shape_string(x.shape()));
  }
  if (ae.identity) return x;
  const std::size_t p = ae.patch, side = x.dim(1), cells = side / p, ch = ae.enc.dim(0);
  if (side % p != 0) throw InvalidArgument("encode: patch does not divide image side");
  BasicTensor<Real> z({ch, cells, cells});
  std::vector<Real> patch(p * p);
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t j = 0; j < cells; ++j) {
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) patch[a * p + b] = x(0, i * p + a, j * p + b);
      for (std::size_t c = 0; c < ch; ++c) {
        Real acc = ae.enc_b[c];
        for (std::size_t k = 0; k < p * p; ++k) acc += ae.enc(c, k) * patch[k];
        z(c, i, j) = acc;
      }
    }
  }
  return z;
}

template <typename Real>
BasicTensor<Real> decode(const BasicAutoencoderParams<Real>& ae, const BasicTensor<Real>& z) {
  if (ae.identity) return z;
  const std::size_t p = ae.patch, ch = ae.dec.dim(1);
  if (z.rank() != 3 || z.dim(0) != ch) throw InvalidArgument("decode: latent shape mismatch");
  const std::size_t cells = z.dim(1);
  BasicTensor<Real> x({1, cells * p, cells * p});
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t j = 0; j < cells; ++j) {
      for (std::size_t k = 0; k < p * p; ++k) {
        Real acc = ae.dec_b[k];
        for (std::size_t c = 0; c < ch; ++c) acc += ae.dec(k, c) * z(c, i, j);
        x(0, i * p + k / p, j * p + k % p) = acc;
      }
    }
  }
  return x;
}

template <typename Real>
BasicTensor<Real> encode_backward(const BasicAutoencoderParams<Real>& ae, const BasicTensor<Real>& grad_z,
                                  std::size_t image_side) {
  if (ae.identity) return grad_z.reshaped({1, image_side, image_side});
  const std::size_t p = ae.patch, ch = ae.enc.dim(0), cells = image_side / p;
  if (grad_z.size() != ch * cells * cells) throw InvalidArgument("encode_backward: gradient shape mismatch");
  const auto gz = grad_z.reshaped({ch, cells, cells});
  BasicTensor<Real> gx({1, image_side, image_side});
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t j = 0; j < cells; ++j)
      for (std::size_t k = 0; k < p * p; ++k) {
        Real acc = 0;
        for (std::size_t c = 0; c < ch; ++c) acc += ae.enc(c, k) * gz(c, i, j);
        gx(0, i * p + k / p, j * p + k % p) = acc;
      }
  return gx;
}

namespace {

std::vector<Eigen::VectorXd> collect_patches(std::span<const Tensor> images, std::size_t p) {
  std::vector<Eigen::VectorXd> patches;
  for (const auto& img : images) {
    const std::size_t cells = img.dim(1) / p;
    for (std::size_t i = 0; i < cells; ++i)
      for (std::size_t j = 0; j < cells; ++j) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(p * p));
        for (std::size_t k = 0; k < p * p; ++k) v[static_cast<Eigen::Index>(k)] = img(0, i * p + k / p, j * p + k % p);
        patches.push_back(std::move(v));
      }
  }
  return patches;
}

}  // namespace

AutoencoderParams fit_autoencoder(const ModelConfig& cfg, std::span<const Tensor> images) {
  AutoencoderParams ae;
  ae.patch = cfg.patch;
  if (cfg.pixel_space) {
    ae.identity = true;
    return ae;
  }
  if (images.empty()) throw InvalidArgument("fit_autoencoder: no images");
  const std::size_t p = cfg.patch, pp = p * p, ch = cfg.latent_channels;
  if (ch > pp) throw InvalidArgument("fit_autoencoder: more latent channels than patch pixels");
  const auto patches = collect_patches(images, p);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pp));
  for (const auto& v : patches) mu += v;
  mu /= static_cast<double>(patches.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pp), static_cast<Eigen::Index>(pp));
  for (const auto& v : patches) cov.noalias() += (v - mu) * (v - mu).transpose();
  cov /= static_cast<double>(patches.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  ae.enc = Tensor({ch, pp});
  ae.enc_b = Tensor({ch});
  ae.dec = Tensor({pp, ch});
  ae.dec_b = Tensor({pp});
  double shared = 0.0;
  for (std::size_t c = 0; c < ch; ++c) shared += eig.eigenvalues()[static_cast<Eigen::Index>(pp - 1 - c)];
  shared = std::sqrt(std::max(shared / static_cast<double>(ch), 1e-12));
  for (std::size_t c = 0; c < ch; ++c) {
    const auto col = static_cast<Eigen::Index>(pp - 1 - c);  // eigenvalues ascend
    Eigen::VectorXd u = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u[arg] < 0) u = -u;  // deterministic sign
    const double scale = cfg.whiten_latents ? std::sqrt(std::max(eig.eigenvalues()[col], 1e-12)) : shared;
    double bias = 0.0;
    for (std::size_t k = 0; k < pp; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      ae.enc(c, k) = static_cast<float>(u[kk] / scale);
      ae.dec(k, c) = static_cast<float>(u[kk] * scale);
      bias -= u[kk] / scale * mu[kk];
    }
    ae.enc_b[c] = static_cast<float>(bias);
  }
  for (std::size_t k = 0; k < pp; ++k) ae.dec_b[k] = static_cast<float>(mu[static_cast<Eigen::Index>(k)]);
  return ae;
}

ReconstructionGrads reconstruction_loss(const AutoencoderParams& ae, std::span<const Tensor> images) {
  if (ae.identity) return {};
  const std::size_t p = ae.patch, pp = p * p, ch = ae.enc.dim(0);
  const auto patches = collect_patches(images, p);
  Eigen::MatrixXd enc(ch, pp), dec(pp, ch);
  Eigen::VectorXd eb(ch), db(pp);
  for (std::size_t c = 0; c < ch; ++c) {
    eb[static_cast<Eigen::Index>(c)] = ae.enc_b[c];
    for (std::size_t k = 0; k < pp; ++k) {
      enc(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) = ae.enc(c, k);
      dec(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = ae.dec(k, c);
    }
  }
  for (std::size_t k = 0; k < pp; ++k) db[static_cast<Eigen::Index>(k)] = ae.dec_b[k];
  Eigen::MatrixXd g_enc = Eigen::MatrixXd::Zero(enc.rows(), enc.cols()), g_dec = Eigen::MatrixXd::Zero(dec.rows(), dec.cols());
  Eigen::VectorXd g_eb = Eigen::VectorXd::Zero(eb.size()), g_db = Eigen::VectorXd::Zero(db.size());
  double total = 0.0;
  const double norm = 1.0 / static_cast<double>(patches.size() * pp);
  for (const auto& x : patches) {
    const Eigen::VectorXd z = enc * x + eb;
    const Eigen::VectorXd r = dec * z + db - x;
    total += r.squaredNorm();
    const Eigen::VectorXd gr = 2.0 * norm * r;
    g_dec += gr * z.transpose();
    g_db += gr;
    const Eigen::VectorXd gz = dec.transpose() * gr;
    g_enc += gz * x.transpose();
    g_eb += gz;
  }
  ReconstructionGrads out;
  out.mse = total * norm;
  auto to_tensor = [](const Eigen::MatrixXd& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        t(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(m(r, c));
    return t;
  };
  out.enc = to_tensor(g_enc);
  out.dec = to_tensor(g_dec);
  out.enc_b = to_tensor(g_eb).reshaped({ch});
  out.dec_b = to_tensor(g_db).reshaped({pp});
  return out;
}

// ---------------------------------------------------------------- bundle

ToyModel init_model(const ModelConfig& cfg, const RngStream& stream) {
  cfg.validate();
  ToyModel m;
  m.config = cfg;
  m.schedule = Schedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  Rng rng(stream.derive(1));
  m.embeddings.dictionary = gaussian<float>(rng, {cfg.vocab, cfg.embed_dim}, 1.0);
  m.embeddings.start = gaussian<float>(rng, {cfg.embed_dim}, 1.0);
  m.embeddings.end = gaussian<float>(rng, {cfg.embed_dim}, 1.0);
  m.embeddings.learned = m.embeddings.row(static_cast<int>(rng.uniform_index(cfg.vocab)));
  Rng mix_rng(stream.derive(2));
  m.mixer.weight = gaussian<float>(mix_rng, {cfg.cond_dim, cfg.embed_dim}, 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
  m.mixer.bias = Tensor({cfg.cond_dim});
  Rng den_rng(stream.derive(3));
  m.denoiser = DenoiserParams::init(cfg, den_rng);
  m.autoencoder.identity = true;
  m.autoencoder.patch = cfg.patch;
  return m;
}

Tensor generate(const ToyModel& model, const Condition& cond, int steps, const RngStream& stream) {
  if (steps < 1) throw InvalidArgument("generate: steps must be >= 1");
  const int T = model.schedule.steps();
  steps = std::min(steps, T - 1 > 0 ? T - 1 : 1);
  std::vector<int> ts(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    ts[static_cast<std::size_t>(k)] =
        std::max(1, static_cast<int>(std::lround(static_cast<double>(k + 1) * (T - 1) / steps)));
  }
  Rng rng(stream);
  Tensor z = randn<float>(rng, model.config.latent_shape());
  for (int k = steps - 1; k >= 0; --k) {
    const int t = ts[static_cast<std::size_t>(k)];
    const double ab = model.schedule.alpha_bar(t);
    const double ab_prev = k > 0 ? model.schedule.alpha_bar(ts[static_cast<std::size_t>(k - 1)]) : 1.0;
    const Tensor eps_hat = denoiser_forward(model.denoiser, z, t, cond);
    const double sigma2 = k > 0 ? (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev) : 0.0;
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma2));
    const double sigma = std::sqrt(sigma2);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double x0 = (z[i] - std::sqrt(1.0 - ab) * eps_hat[i]) / std::sqrt(ab);
      const double noise = k > 0 ? rng.normal() : 0.0;
      z[i] = static_cast<float>(std::sqrt(ab_prev) * x0 + dir * eps_hat[i] + sigma * noise);
    }
  }
  return clamped(decode(model.autoencoder, z), 0.0f, 1.0f);
}

std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ToyModel& m) {
  std::vector<std::pair<std::string, const Tensor*>> out = {
      {"embeddings.dictionary", &m.embeddings.dictionary},
      {"embeddings.start", &m.embeddings.start},
      {"embeddings.end", &m.embeddings.end},
      {"embeddings.concept", &m.embeddings.learned},
      {"mixer.weight", &m.mixer.weight},
      {"mixer.bias", &m.mixer.bias}};
  const auto names = DenoiserParams::names();
  const auto tensors = m.denoiser.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back("denoiser." + names[i], tensors[i]);
  out.emplace_back("denoiser.skip", &m.denoiser.skip);
  if (!m.autoencoder.identity) {
    out.emplace_back("autoencoder.enc", &m.autoencoder.enc);
    out.emplace_back("autoencoder.enc_b", &m.autoencoder.enc_b);
    out.emplace_back("autoencoder.dec", &m.autoencoder.dec);
    out.emplace_back("autoencoder.dec_b", &m.autoencoder.dec_b);
  }
  return out;
}

void save_model(const std::filesystem::path& dir, const ToyModel& m, bool concept_only_trainable) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "model.txt", std::ios::trunc);
  const auto& c = m.config;
  man.precision(17);
  man << "szlab-model 1\n"
      << "config image_side " << c.image_side << "\nconfig patch " << c.patch << "\nconfig latent_channels "
      << c.latent_channels << "\nconfig pixel_space " << (c.pixel_space ? 1 : 0) << "\nconfig whiten_latents "
      << (c.whiten_latents ? 1 : 0) << "\nconfig gate " << to_string(c.gate) << "\nconfig embed_dim "
      << c.embed_dim << "\nconfig vocab " << c.vocab << "\nconfig prompt_length " << c.prompt_length
      << "\nconfig cond_dim " << c.cond_dim << "\nconfig hidden " << c.hidden << "\nconfig time_features "
      << c.time_features << "\nconfig timesteps " << c.timesteps << "\nconfig beta_start " << c.beta_start
      << "\nconfig beta_end " << c.beta_end << "\n";
  for (const auto& [name, tensor] : named_parameters(m)) {
    const bool frozen = concept_only_trainable ? name != "embeddings.concept"
                                               : name == "embeddings.dictionary" || name == "denoiser.skip";
    man << "param " << name << " " << shape_string(tensor->shape()) << " frozen " << (frozen ? 1 : 0) << "\n";
    write_tensor(dir / (name + ".tnsr"), *tensor);
  }
}

ToyModel load_model(const std::filesystem::path& dir) {
  std::ifstream man(dir / "model.txt");
  if (!man) throw InvalidArgument("load_model: missing manifest in " + dir.string());
  std::string header;
  int version = 0;
  man >> header >> version;
  if (header != "szlab-model" || version != 1) throw InvalidArgument("load_model: bad manifest header");
  ModelConfig c;
  c.gate = DenoiserGate::none;  // manifests written before the key existed
  std::vector<std::string> names;
  std::string kind;
  while (man >> kind) {
    if (kind == "config") {
      std::string key;
      man >> key;
      if (key == "image_side") man >> c.image_side;
      else if (key == "patch") man >> c.patch;
      else if (key == "latent_channels") man >> c.latent_channels;
      else if (key == "pixel_space") { int v; man >> v; c.pixel_space = v != 0; }
      else if (key == "whiten_latents") { int v; man >> v; c.whiten_latents = v != 0; }
      else if (key == "gate") { std::string v; man >> v; c.gate = denoiser_gate_from_string(v); }
      else if (key == "embed_dim") man >> c.embed_dim;
      else if (key == "vocab") man >> c.vocab;
      else if (key == "prompt_length") man >> c.prompt_length;
      else if (key == "cond_dim") man >> c.cond_dim;
      else if (key == "hidden") man >> c.hidden;
      else if (key == "time_features") man >> c.time_features;
      else if (key == "timesteps") man >> c.timesteps;
      else if (key == "beta_start") man >> c.beta_start;
      else if (key == "beta_end") man >> c.beta_end;
      else throw InvalidArgument("load_model: unknown config key " + key);
    } else if (kind == "param") {
      std::string name, shape, frozen_word;
      int frozen;
      man >> name >> shape >> frozen_word >> frozen;
      names.push_back(name);
    } else {
      throw InvalidArgument("load_model: unexpected manifest entry " + kind);
    }
  }
  ToyModel m;
  m.config = c;
  m.schedule = Schedule::linear(c.timesteps, c.beta_start, c.beta_end);
  m.autoencoder.patch = c.patch;
  m.autoencoder.identity = true;
  auto load = [&](const std::string& name) { return read_tensor(dir / (name + ".tnsr")); };
  m.embeddings = {load("embeddings.dictionary"), load("embeddings.start"), load("embeddings.end"),
                  load("embeddings.concept")};
  m.mixer = {load("mixer.weight"), load("mixer.bias")};
  auto tensors = m.denoiser.tensors();
  const auto dnames = DenoiserParams::names();
  for (std::size_t i = 0; i < dnames.size(); ++i) *tensors[i] = load("denoiser." + dnames[i]);
  m.denoiser.skip = load("denoiser.skip");
  m.denoiser.gate = c.gate;
  m.denoiser.time_features = c.time_features;
  if (std::find(names.begin(), names.end(), "autoencoder.enc") != names.end()) {
    m.autoencoder.identity = false;
    m.autoencoder.enc = load("autoencoder.enc");
    m.autoencoder.enc_b = load("autoencoder.enc_b");
    m.autoencoder.dec = load("autoencoder.dec");
    m.autoencoder.dec_b = load("autoencoder.dec_b");
  }
  if (m.denoiser.output_size() != c.latent_size() || m.denoiser.input_size() != c.denoiser_input_size()) {
    throw InvalidArgument("load_model: denoiser shapes disagree with config");
  }
  return m;
}

// ---------------------------------------------------------------- instantiations

#define SZLAB_INSTANTIATE_MODEL(R)                                                                                  \
  template struct BasicEmbeddingTable<R>;                                                                            \
  template struct BasicDenoiserParams<R>;                                                                            \
  template std::vector<int> pad_prompt(const BasicEmbeddingTable<R>&, std::span<const int>, std::size_t);            \
  template BasicTensor<R> pool_embeddings(const BasicEmbeddingTable<R>&, std::span<const int>, std::size_t);         \
  template BasicCondition<R> text_condition(const BasicEmbeddingTable<R>&, const BasicTextMixer<R>&,                 \
                                            std::span<const int>, std::size_t);                                     \
  template BasicCondition<R> text_condition_replaced(const BasicEmbeddingTable<R>&, const BasicTextMixer<R>&,        \
                                                     std::span<const int>, std::size_t, std::size_t,                 \
                                                     const BasicTensor<R>&);                                         \
  template BasicTensor<R> token_embedding_grad(const BasicTextMixer<R>&, std::span<const int>, int,                  \
                                               const BasicTensor<R>&);                                               \
  template BasicTextMixer<R> mixer_grad(const BasicTensor<R>&, const BasicTensor<R>&);                               \
  template void time_features<R>(int, std::span<R>);                                                                 \
  template BasicTensor<R> denoiser_forward_batch(const BasicDenoiserParams<R>&, const BasicTensor<R>&,               \
                                                 std::span<const int>, const BasicTensor<R>&, DenoiserTape<R>*);     \
  template DenoiserGrads<R> denoiser_backward_batch(const BasicDenoiserParams<R>&, const DenoiserTape<R>&,           \
                                                    const BasicTensor<R>&, bool);                                    \
  template BasicTensor<R> denoiser_forward(const BasicDenoiserParams<R>&, const BasicTensor<R>&, int,                \
                                           const BasicCondition<R>&);                                                \
  template DenoiserGrads<R> denoiser_backward(const BasicDenoiserParams<R>&, const BasicTensor<R>&, int,             \
                                              const BasicCondition<R>&, const BasicTensor<R>&);                      \
  template BasicTensor<R> encode(const BasicAutoencoderParams<R>&, const BasicTensor<R>&);                           \
  template BasicTensor<R> decode(const BasicAutoencoderParams<R>&, const BasicTensor<R>&);                           \
  template BasicTensor<R> encode_backward(const BasicAutoencoderParams<R>&, const BasicTensor<R>&, std::size_t);

SZLAB_INSTANTIATE_MODEL(float)
SZLAB_INSTANTIATE_MODEL(double)

}  // namespace szlab
