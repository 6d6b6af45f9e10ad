#include "szlab/experiment.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "szlab/analysis.hpp"
#include "szlab/attack.hpp"
#include "szlab/dataset.hpp"
#include "szlab/defense.hpp"
#include "szlab/evaluate.hpp"
#include "szlab/parallel.hpp"
#include "szlab/report.hpp"
#include "szlab/tensor_io.hpp"
#include "szlab/train.hpp"

namespace szlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- names

std::string to_string(Stage s) {
  switch (s) {
    case Stage::data: return "data";
    case Stage::pretrain: return "pretrain";
    case Stage::poison: return "poison";
    case Stage::ti: return "ti";
    case Stage::eval: return "eval";
    case Stage::analysis: return "analysis";
  }
  return "?";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> v{Stage::data, Stage::pretrain, Stage::poison,
                                    Stage::ti,   Stage::eval,     Stage::analysis};
  return v;
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : all_stages())
    if (to_string(s) == name) return s;
  throw InvalidArgument("unknown stage '" + name + "'");
}

std::string to_string(Analysis a) {
  switch (a) {
    case Analysis::ssm: return "ssm";
    case Analysis::loss_profile: return "loss-profile";
    case Analysis::grad_profile: return "grad-profile";
    case Analysis::hist: return "hist";
    case Analysis::rapsd: return "rapsd";
    case Analysis::gaussian_check: return "gaussian-check";
    case Analysis::region_loss: return "region-loss";
  }
  return "?";
}

const std::vector<Analysis>& all_analyses() {
  static const std::vector<Analysis> v{Analysis::ssm,  Analysis::loss_profile,   Analysis::grad_profile,
                                       Analysis::hist, Analysis::rapsd,          Analysis::gaussian_check,
                                       Analysis::region_loss};
  return v;
}

Analysis analysis_from_string(const std::string& name) {
  for (Analysis a : all_analyses())
    if (to_string(a) == name) return a;
  throw InvalidArgument("unknown analysis '" + name + "'");
}

StageFailure::StageFailure(Stage stage, const std::string& cause)
    : std::runtime_error("stage " + to_string(stage) + ": " + cause), stage_(stage) {}

// ---------------------------------------------------------------- lock and manifest

ReportLock::ReportLock(const fs::path& dir) : path_(dir / kLockFile) {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw std::runtime_error("report directory " + dir.string() + " is locked by another writer (remove " +
                               path_.string() + " if that process is gone)");
    }
    throw std::runtime_error("cannot create " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

ReportLock::~ReportLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: digest init failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

void write_manifest(const fs::path& dir) {
  nlohmann::json files = nlohmann::json::object();
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == kManifestFile || rel == kLockFile) continue;
    files[rel] = sha256_file(entry.path());
  }
  nlohmann::json m;
  m["format"] = "szlab-manifest 1";
  m["config_sha256"] = fs::exists(dir / "config.toml") ? sha256_file(dir / "config.toml") : "";
  m["files"] = std::move(files);
  std::ofstream(dir / kManifestFile, std::ios::trunc) << m.dump(2) << "\n";
}

// ---------------------------------------------------------------- shared plumbing

namespace {

// Fixed stream ids, one per consumer, so stages never share draws.
constexpr std::uint64_t kCorpusStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kPretrainStream = 3;
constexpr std::uint64_t kDataStream = 10;
constexpr std::uint64_t kPoisonStream = 100;  // + dataset image index
constexpr std::uint64_t kTiStream = 200;
constexpr std::uint64_t kEvalStream = 300;
constexpr std::uint64_t kProfileStream = 400;
constexpr std::uint64_t kSsmStream = 500;
constexpr std::uint64_t kGaussianStream = 600;

RngStream stream_for(const ExperimentConfig& cfg, std::uint64_t id) { return RngStream{cfg.require_seed(), id}; }

std::string concept_dir(std::size_t c) { return "c" + std::to_string(c); }
std::string image_stem(std::size_t c, std::size_t i) { return "c" + std::to_string(c) + "_" + std::to_string(i); }

ToyModel load_pretrained(const fs::path& out) {
  if (!fs::exists(out / "model" / "model.txt")) throw std::runtime_error("no pretrained model (run the pretrain stage)");
  return load_model(out / "model");
}

ConceptDataset load_data(const fs::path& out) {
  if (!fs::exists(out / "data" / "dataset.json")) throw std::runtime_error("no dataset (run the data stage)");
  return load_dataset(out / "data");
}

std::vector<Tensor> load_poisons(const ExperimentConfig& cfg, const fs::path& out, std::size_t c) {
  std::vector<Tensor> v;
  for (std::size_t i = 0; i < cfg.dataset.images_per_concept; ++i) {
    const fs::path p = out / "poison" / (image_stem(c, i) + ".tnsr");
    if (!fs::exists(p)) throw std::runtime_error("missing poison " + p.string() + " (run the poison stage)");
    v.push_back(read_tensor(p));
  }
  return v;
}

TrainConfig arm_config(const ExperimentConfig& cfg, const std::string& arm) {
  return defense_variant(cfg, arm == "clean" ? "nominal" : arm);
}

fs::path arm_dir(const fs::path& out, const std::string& arm, std::size_t c) {
  return out / "ti" / arm / concept_dir(c);
}

Tensor load_concept_row(const fs::path& out, const std::string& arm, std::size_t c, const std::string& file) {
  const fs::path p = arm_dir(out, arm, c) / file;
  if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (run the ti stage)");
  return read_tensor(p);
}

std::string snapshot_file(int step) { return "snapshot_" + std::to_string(step) + ".tnsr"; }

std::size_t concept_position(const ToyModel& m, const std::vector<int>& prompt) {
  const auto it = std::find(prompt.begin(), prompt.end(), m.embeddings.concept_token());
  if (it == prompt.end()) throw std::logic_error("concept prompt lacks the concept token");
  return static_cast<std::size_t>(it - prompt.begin());
}

Tensor load_target(const ExperimentConfig& cfg) {
  if (cfg.poison_target == "checkerboard") return checkerboard_target(cfg.dataset.image_side);
  const fs::path p = cfg.poison_target;
  Tensor t = p.extension() == ".pgm" ? read_pgm(p) : read_tensor(p);
  if (t.size() != cfg.dataset.image_side * cfg.dataset.image_side) {
    throw ConfigError("poison.target: image size does not match dataset.image_side");
  }
  return t.reshaped({1, cfg.dataset.image_side, cfg.dataset.image_side});
}

// Nearest upsampling by `factor` of a [1, h, w] map, scaled to its own max for display.
void write_map_pgm(const fs::path& path, const Tensor& map, std::size_t factor) {
  const std::size_t h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  Tensor big({1, h * factor, w * factor});
  double hi = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) hi = std::max(hi, static_cast<double>(map[i]));
  for (std::size_t y = 0; y < h * factor; ++y)
    for (std::size_t x = 0; x < w * factor; ++x) big(0, y, x) = map[(y / factor) * w + x / factor];
  write_pgm(path, big, 0.0, hi > 0.0 ? hi : 1.0);
}

void profile_svg(const fs::path& path, const std::string& title, const std::vector<std::string>& names,
                 const std::vector<ProfileCurve>& curves) {
  std::vector<SvgSeries> series;
  for (std::size_t k = 0; k < curves.size(); ++k) {
    SvgSeries s{names[k], {}, curves[k].median};
    for (int t : curves[k].timesteps) s.x.push_back(t);
    series.push_back(std::move(s));
  }
  write_svg_lines(path, title, series);
}

// Clean, poisoned and JPEG-purified poisoned images of every poisoned concept.
struct ImageSets {
  std::vector<Tensor> clean, poisoned, purified;
};

ImageSets image_sets(const ExperimentConfig& cfg, const fs::path& out) {
  const auto ds = load_data(out);
  ImageSets s;
  for (std::size_t c : cfg.poison_concepts) {
    for (auto& x : ds.concept_images(c)) s.clean.push_back(x);
    for (auto& x : load_poisons(cfg, out, c)) {
      s.purified.push_back(jpeg_compress(x, JpegConfig{cfg.defense.jpeg_quality}));
      s.poisoned.push_back(std::move(x));
    }
  }
  return s;
}

}  // namespace

std::vector<std::string> ti_arms(const ExperimentConfig& cfg) {
  std::vector<std::string> arms;
  if (cfg.clean_reference) arms.push_back("clean");
  for (const auto& a : cfg.defense.ablation)
    if (std::find(arms.begin(), arms.end(), a) == arms.end()) arms.push_back(a);
  return arms;
}

// ---------------------------------------------------------------- stages

void stage_data(const ExperimentConfig& cfg, const fs::path& out) {
  const auto ds = generate_concepts(cfg.dataset, stream_for(cfg, kDataStream));
  save_dataset(out / "data", ds);
}

void stage_pretrain(const ExperimentConfig& cfg, const fs::path& out) {
  const auto corpus = make_pretrain_corpus(cfg.pretrain.corpus_size, cfg.dataset.image_side,
                                           cfg.pretrain.null_caption_fraction, stream_for(cfg, kCorpusStream));
  const ToyModel init = init_model(cfg.model, stream_for(cfg, kInitStream));
  const auto result =
      pretrain_dm(init, corpus.images, corpus.captions, cfg.pretrain.optimizer, stream_for(cfg, kPretrainStream));
  save_model(out / "model", result.model);
  std::vector<std::vector<double>> rows;
  SvgSeries s{"loss", {}, {}};
  for (std::size_t k = 0; k < result.losses.size(); ++k) {
    rows.push_back({static_cast<double>(k), result.losses[k]});
    s.x.push_back(static_cast<double>(k));
    s.y.push_back(result.losses[k]);
  }
  write_csv(out / "model" / "pretrain_loss.csv", {"step", "loss"}, rows);
  write_svg_lines(out / "model" / "pretrain_loss.svg", "pretraining loss", {s});
}

void stage_poison(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto ds = load_data(out);
  PoisonSpec spec = cfg.poison;
  if (spec.kind == AttackKind::ea) spec.target = load_target(cfg);
  nlohmann::json prov;
  prov["kind"] = to_string(spec.kind);
  prov["kappa"] = spec.kappa;
  prov["eta"] = spec.eta;
  prov["steps"] = spec.steps;
  prov["seed"] = cfg.require_seed();
  if (spec.kind == AttackKind::ea) prov["target"] = cfg.poison_target;
  prov["images"] = nlohmann::json::array();
  for (std::size_t c : cfg.poison_concepts) {
    for (std::size_t i = 0; i < ds.params.images_per_concept; ++i) {
      const std::size_t idx = ds.index(c, i);
      const Tensor& x = ds.images[idx];
      const Tensor xp = craft_poison(model, x, spec, stream_for(cfg, kPoisonStream + idx));
      const Tensor delta = perturbation(x, xp);
      double linf = 0.0;
      for (std::size_t k = 0; k < delta.size(); ++k) linf = std::max(linf, std::abs(static_cast<double>(delta[k])));
      const std::string stem = image_stem(c, i);
      write_tensor(out / "poison" / (stem + ".tnsr"), xp);
      write_pgm(out / "poison" / (stem + ".pgm"), xp);
      prov["images"].push_back({{"concept", c}, {"index", i}, {"file", stem + ".tnsr"}, {"linf", linf}});
    }
  }
  std::ofstream(out / "poison" / "provenance.json", std::ios::trunc) << prov.dump(2) << "\n";
}

void stage_ti(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto ds = load_data(out);
  const auto prompt = model.concept_prompt();
  for (std::size_t c : cfg.poison_concepts) {
    const auto clean = ds.concept_images(c);
    const auto masks = ds.concept_masks(c);
    const auto poisoned = load_poisons(cfg, out, c);
    for (const auto& arm : ti_arms(cfg)) {
      const TrainConfig tc = arm_config(cfg, arm);
      const auto result =
          train_ti(model, arm == "clean" ? clean : poisoned, masks, prompt, tc, stream_for(cfg, kTiStream));
      const fs::path dir = arm_dir(out, arm, c);
      write_tensor(dir / "concept.tnsr", result.model.embeddings.learned);
      for (const auto& [step, row] : result.snapshots) write_tensor(dir / snapshot_file(step), row);
      write_ti_log(dir / "log.csv", result.log);
    }
  }
}

void stage_eval(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto ds = load_data(out);
  std::vector<std::string> arms{"untrained"};
  for (const auto& a : ti_arms(cfg)) arms.push_back(a);
  std::vector<std::vector<std::string>> rows;
  for (const auto& arm : arms) {
    double sums[3] = {0, 0, 0};
    for (std::size_t c : cfg.poison_concepts) {
      ToyModel m = model;
      if (arm != "untrained") m.embeddings.learned = load_concept_row(out, arm, c, "concept.tnsr");
      const auto metrics =
          evaluate_concept(m, ds.concept_images(c), ds.concept_masks(c), cfg.eval, stream_for(cfg, kEvalStream));
      for (std::size_t g = 0; g < metrics.generated.size(); ++g) {
        write_pgm(out / "eval" / arm / (concept_dir(c) + "_gen" + std::to_string(g) + ".pgm"), metrics.generated[g]);
      }
      rows.push_back({arm, std::to_string(c), format_number(metrics.masked_mse), format_number(metrics.intensity_delta),
                      format_number(metrics.edge_delta)});
      sums[0] += metrics.masked_mse;
      sums[1] += metrics.intensity_delta;
      sums[2] += metrics.edge_delta;
    }
    const double n = static_cast<double>(cfg.poison_concepts.size());
    rows.push_back({arm, "mean", format_number(sums[0] / n), format_number(sums[1] / n), format_number(sums[2] / n)});
  }
  write_text_csv(out / "eval" / "summary.csv", {"arm", "concept", "masked_mse", "intensity_delta", "edge_delta"},
                 rows);
}

// ---------------------------------------------------------------- analyses

namespace {

void analyze_loss_profile(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto sets = image_sets(cfg, out);
  const auto grid = timestep_grid(model.schedule.steps(), cfg.analysis.profile_points);
  const auto prompt = model.concept_prompt();
  const auto stream = stream_for(cfg, kProfileStream);
  const std::vector<std::string> names{"clean", "poisoned", "purified"};
  std::vector<ProfileCurve> curves;
  for (const auto* images : {&sets.clean, &sets.poisoned, &sets.purified}) {
    curves.push_back(loss_profile(model, *images, prompt, grid, cfg.analysis.profile_samples, stream));
  }
  for (std::size_t k = 0; k < names.size(); ++k)
    write_profile_csv(out / "analysis" / ("loss_profile_" + names[k] + ".csv"), curves[k]);
  profile_svg(out / "analysis" / "loss_profile.svg", "median loss by timestep", names, curves);
}

void analyze_grad_profile(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto sets = image_sets(cfg, out);
  const auto grid = timestep_grid(model.schedule.steps(), cfg.analysis.profile_points);
  const auto prompt = model.concept_prompt();
  const int token = model.embeddings.concept_token();
  const auto stream = stream_for(cfg, kProfileStream);
  const std::vector<std::string> names{"clean", "poisoned"};
  std::vector<ProfileCurve> curves;
  for (const auto* images : {&sets.clean, &sets.poisoned}) {
    curves.push_back(grad_profile(model, *images, prompt, token, grid, cfg.analysis.profile_samples, stream));
  }
  for (std::size_t k = 0; k < names.size(); ++k)
    write_profile_csv(out / "analysis" / ("grad_profile_" + names[k] + ".csv"), curves[k]);
  profile_svg(out / "analysis" / "grad_profile.svg", "median embedding gradient norm by timestep", names, curves);
}

void analyze_hist(const ExperimentConfig& cfg, const fs::path& out) {
  const auto sets = image_sets(cfg, out);
  std::vector<Tensor> pre, post;
  for (std::size_t i = 0; i < sets.clean.size(); ++i) {
    pre.push_back(perturbation(sets.clean[i], sets.poisoned[i]));
    post.push_back(perturbation(sets.clean[i], sets.purified[i]));
  }
  const auto h_pre = perturbation_histogram(pre, cfg.analysis.hist_bins, cfg.poison.kappa);
  const auto h_post = perturbation_histogram(post, cfg.analysis.hist_bins, cfg.poison.kappa);
  write_histogram_csv(out / "analysis" / "hist_pre_jpeg.csv", h_pre);
  write_histogram_csv(out / "analysis" / "hist_post_jpeg.csv", h_post);
  write_text_csv(out / "analysis" / "hist_summary.csv", {"set", "edge_mass", "center_mass", "total"},
                 {{"pre_jpeg", format_number(h_pre.edge_mass), format_number(h_pre.center_mass),
                   std::to_string(h_pre.total)},
                  {"post_jpeg", format_number(h_post.edge_mass), format_number(h_post.center_mass),
                   std::to_string(h_post.total)}});
}

void analyze_rapsd(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto sets = image_sets(cfg, out);
  const std::vector<std::string> names{"clean", "poisoned", "purified"};
  std::vector<std::vector<double>> curves{latent_rapsd(model, sets.clean), latent_rapsd(model, sets.poisoned),
                                          latent_rapsd(model, sets.purified)};
  write_rapsd_csv(out / "analysis" / "rapsd.csv", names, curves);
  std::vector<SvgSeries> series;
  for (std::size_t k = 0; k < names.size(); ++k) {
    SvgSeries s{names[k], {}, {}};
    for (std::size_t r = 0; r < curves[k].size(); ++r) {
      s.x.push_back(static_cast<double>(r));
      s.y.push_back(std::log10(std::max(curves[k][r], 1e-30)));
    }
    series.push_back(std::move(s));
  }
  write_svg_lines(out / "analysis" / "rapsd.svg", "log10 radial power of mean latents", series);
}

void analyze_ssm(const ExperimentConfig& cfg, const fs::path& out) {
  const ToyModel model = load_pretrained(out);
  const auto ds = load_data(out);
  const auto prompt = model.concept_prompt();
  const std::size_t position = concept_position(model, prompt);
  const auto& ts = cfg.analysis.ssm_timesteps;
  const std::size_t n_img = cfg.dataset.images_per_concept;
  const int display_t = ts.empty() ? model.schedule.steps() / 2 : ts[ts.size() / 2];
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c : cfg.poison_concepts) {
    const auto clean = ds.concept_images(c);
    const auto masks = ds.concept_masks(c);
    const auto poisoned = load_poisons(cfg, out, c);
    std::vector<Tensor> latent_masks;
    for (const auto& m : masks) latent_masks.push_back(make_mask_pair(m, 0, model.config).latent);
    for (const auto& arm : ti_arms(cfg)) {
      const TrainConfig tc = arm_config(cfg, arm);
      const auto inputs = ti_inputs(arm == "clean" ? clean : poisoned, tc);
      for (int snap : cfg.analysis.ssm_snapshots) {
        ToyModel m = model;
        m.embeddings.learned = load_concept_row(out, arm, c, snapshot_file(snap));
        std::vector<double> ratios(ts.size() * n_img);
        parallel_for(ratios.size(), [&](std::size_t k) {
          const std::size_t ti = k / n_img, i = k % n_img;
          const auto map = compute_ssm(m, inputs[i], ts[ti], prompt, position, cfg.analysis.ssm_replacements,
                                       stream_for(cfg, kSsmStream).derive(ti, i));
          ratios[k] = ssm_ratio(map, latent_masks[i]);
        });
        double mean = 0.0;
        for (double r : ratios) mean += r;
        mean /= static_cast<double>(ratios.size());
        rows.push_back({arm, std::to_string(c), std::to_string(snap), format_number(mean)});
        if (snap == cfg.analysis.ssm_snapshots.back()) {
          const auto map = compute_ssm(m, inputs[0], display_t, prompt, position, cfg.analysis.ssm_replacements,
                                       stream_for(cfg, kSsmStream).derive(ts.size(), 0));
          const fs::path stem = out / "analysis" / "ssm" / (arm + "_" + concept_dir(c));
          write_tensor(stem.string() + ".tnsr", map.map);
          write_map_pgm(stem.string() + ".pgm", map.map, model.config.image_side / map.map.dim(2));
        }
      }
    }
  }
  write_text_csv(out / "analysis" / "ssm_ratio.csv", {"arm", "concept", "snapshot", "ratio"}, rows);
}

void analyze_region_loss(const ExperimentConfig& cfg, const fs::path& out) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c : cfg.poison_concepts) {
    for (const auto& arm : ti_arms(cfg)) {
      const auto log = read_csv(arm_dir(out, arm, c) / "log.csv");
      const std::size_t in_col = log.column("loss_in"), out_col = log.column("loss_out");
      const std::size_t n = log.rows.size();
      const std::size_t w = std::max<std::size_t>(1, n / 5);
      if (n < 2 * w) throw std::runtime_error("region-loss: training log too short");
      auto window = [&](std::size_t col, bool last) {
        double s = 0.0;
        for (std::size_t k = 0; k < w; ++k) s += std::stod(log.rows[last ? n - 1 - k : k][col]);
        return s / static_cast<double>(w);
      };
      const double in0 = window(in_col, false), in1 = window(in_col, true);
      const double out0 = window(out_col, false), out1 = window(out_col, true);
      const double d_in = in0 - in1, d_out = out0 - out1;
      rows.push_back({arm, std::to_string(c), format_number(in0), format_number(in1), format_number(out0),
                      format_number(out1), format_number(d_in), format_number(d_out), format_number(d_in / d_out)});
    }
  }
  write_text_csv(out / "analysis" / "region_loss.csv",
                 {"arm", "concept", "in_first", "in_last", "out_first", "out_last", "delta_in", "delta_out", "ratio"},
                 rows);
}

struct CovFamily {
  std::string name;
  Eigen::VectorXd (*variances)(Eigen::Index d);
};

void analyze_gaussian_check(const ExperimentConfig& cfg, const fs::path& out) {
  const std::vector<CovFamily> families{
      {"I", [](Eigen::Index d) { return Eigen::VectorXd(Eigen::VectorXd::Ones(d)); }},
      {"2I", [](Eigen::Index d) { return Eigen::VectorXd(Eigen::VectorXd::Constant(d, 2.0)); }},
      {"ramp", [](Eigen::Index d) {
         return d == 1 ? Eigen::VectorXd(Eigen::VectorXd::Constant(1, 0.5))
                       : Eigen::VectorXd(Eigen::VectorXd::LinSpaced(d, 0.5, 2.0));
       }}};
  const std::vector<Eigen::Index> dims{1, 2, 4};
  const std::vector<double> alpha_bars{0.1, 0.5, 0.9};
  auto make_spec = [](const CovFamily& f, Eigen::Index d) {
    Eigen::VectorXd mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean[i] = 0.25 * (static_cast<double>(i) - 0.5 * static_cast<double>(d - 1));
    return GaussianLatentSpec::diagonal(mean, f.variances(d));
  };
  // Query point half a marginal standard deviation off the z_t mean, alternating sign.
  auto query = [](const GaussianLatentSpec& spec, double ab) {
    const Eigen::MatrixXd cov = noisy_latent_covariance(spec, ab);
    Eigen::VectorXd z = std::sqrt(ab) * spec.mean;
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += (i % 2 ? -0.5 : 0.5) * std::sqrt(cov(i, i));
    return z;
  };

  struct Cell {
    Eigen::Index d;
    std::size_t family;
    double ab;
  };
  std::vector<Cell> cells;
  for (auto d : dims)
    for (std::size_t f = 0; f < families.size(); ++f)
      for (double ab : alpha_bars) cells.push_back({d, f, ab});
  std::vector<std::vector<std::string>> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t k) {
    const Cell& cell = cells[k];
    const auto spec = make_spec(families[cell.family], cell.d);
    const Eigen::VectorXd z = query(spec, cell.ab);
    const auto exact = conditional_noise_stats(spec, cell.ab, z);
    const Eigen::MatrixXd err_cov = noise_error_covariance(spec, cell.ab);
    const auto mc = monte_carlo_noise_stats(spec, cell.ab, z, cfg.analysis.gaussian_bin_width,
                                            cfg.analysis.gaussian_samples, stream_for(cfg, kGaussianStream).derive(k));
    double mean_z = 0.0, var_rel = 0.0, err_rel = 0.0;
    std::size_t accepted = mc.accepted.empty() ? 0 : mc.accepted[0];
    for (Eigen::Index i = 0; i < cell.d; ++i) {
      mean_z = std::max(mean_z, std::abs(mc.mean[i] - exact.mean[i]) / mc.mean_se[i]);
      var_rel = std::max(var_rel, std::abs(mc.covariance(i, i) - exact.covariance(i, i)) / exact.covariance(i, i));
      err_rel = std::max(err_rel, std::abs(mc.error_variance[i] - err_cov(i, i)) / err_cov(i, i));
      accepted = std::min(accepted, mc.accepted[static_cast<std::size_t>(i)]);
    }
    const bool pass = mean_z <= 3.0 && var_rel <= 0.05 && err_rel <= 0.05;
    rows[k] = {std::to_string(cell.d),   families[cell.family].name, format_number(cell.ab),
               format_number(mean_z),    format_number(var_rel),     format_number(err_rel),
               std::to_string(accepted), pass ? "pass" : "fail"};
  });
  write_text_csv(out / "analysis" / "gaussian_check.csv",
                 {"dim", "sigma", "alpha_bar", "max_mean_z", "max_var_rel_err", "max_err_var_rel_err", "min_accepted",
                  "result"},
                 rows);

  // The two ends of the schedule have exact answers.
  std::vector<std::vector<std::string>> limits;
  for (auto d : dims) {
    for (const auto& f : families) {
      const auto spec = make_spec(f, d);
      for (double ab : {0.0, 1.0}) {
        const Eigen::VectorXd z = query(spec, ab == 1.0 ? 0.5 : ab);
        const auto s = conditional_noise_stats(spec, ab, z);
        const Eigen::VectorXd want_mean = ab == 1.0 ? Eigen::VectorXd::Zero(d) : z;
        const Eigen::MatrixXd want_cov =
            ab == 1.0 ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d)) : Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d));
        const double mean_err = (s.mean - want_mean).cwiseAbs().maxCoeff();
        const double cov_err = (s.covariance - want_cov).cwiseAbs().maxCoeff();
        limits.push_back({std::to_string(d), f.name, format_number(ab), format_number(mean_err),
                          format_number(cov_err), mean_err <= 1e-5 && cov_err <= 1e-5 ? "pass" : "fail"});
      }
    }
  }
  write_text_csv(out / "analysis" / "gaussian_limits.csv",
                 {"dim", "sigma", "alpha_bar", "max_mean_err", "max_cov_err", "result"}, limits);
}

}  // namespace

void run_analysis(const ExperimentConfig& cfg, const fs::path& out, Analysis which) {
  switch (which) {
    case Analysis::ssm: analyze_ssm(cfg, out); break;
    case Analysis::loss_profile: analyze_loss_profile(cfg, out); break;
    case Analysis::grad_profile: analyze_grad_profile(cfg, out); break;
    case Analysis::hist: analyze_hist(cfg, out); break;
    case Analysis::rapsd: analyze_rapsd(cfg, out); break;
    case Analysis::gaussian_check: analyze_gaussian_check(cfg, out); break;
    case Analysis::region_loss: analyze_region_loss(cfg, out); break;
  }
}

void stage_analysis(const ExperimentConfig& cfg, const fs::path& out, const std::vector<Analysis>& which) {
  for (Analysis a : all_analyses())
    if (which.empty() || std::find(which.begin(), which.end(), a) != which.end()) run_analysis(cfg, out, a);
}

// ---------------------------------------------------------------- driver

void run_experiment(const ExperimentConfig& cfg, const fs::path& out, const std::vector<Stage>& stages,
                    const std::vector<Analysis>& analyses) {
  cfg.validate();
  cfg.require_seed();
  if (cfg.threads > 0) set_thread_count(cfg.threads);
  ReportLock lock(out);
  {
    std::ofstream conf(out / "config.toml", std::ios::trunc);
    conf << cfg.to_toml();
  }
  for (Stage s : all_stages()) {
    if (!stages.empty() && std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
    try {
      switch (s) {
        case Stage::data: stage_data(cfg, out); break;
        case Stage::pretrain: stage_pretrain(cfg, out); break;
        case Stage::poison: stage_poison(cfg, out); break;
        case Stage::ti: stage_ti(cfg, out); break;
        case Stage::eval: stage_eval(cfg, out); break;
        case Stage::analysis: stage_analysis(cfg, out, analyses); break;
      }
    } catch (const std::exception& e) {
      write_manifest(out);
      throw StageFailure(s, e.what());
    }
  }
  write_manifest(out);
}

fs::path run_experiment(const fs::path& config_path, const fs::path& out) {
  const auto cfg = load_experiment_config(config_path);
  run_experiment(cfg, out);
  return out;
}

}  // namespace szlab
