// End-to-end acceptance: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
//   acceptance [--work DIR] [--seeds N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "grad_trials.hpp"
#include "szlab/experiment.hpp"
#include "szlab/parallel.hpp"
#include "szlab/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace szlab;

namespace {

// Tolerances.
constexpr double kGaussianLimitTol = 1e-5;
constexpr double kGaussianBudgetSec = 120.0;
constexpr double kGradTol = 1e-3;
constexpr double kGradBudgetSec = 60.0;
constexpr int kGradTrials = 100;
constexpr double kLossAtTMaxFrac = 0.05;
constexpr double kGradLastMaxFrac = 0.20;
constexpr double kLinfBound = 16.0 / 256.0 + 1e-6;
constexpr double kHighTChangeTol = 0.10;
constexpr double kNoLmSsmRiseTol = 0.10;
constexpr double kNominalOverClean = 2.0;
constexpr double kSztOverClean = 1.3;
constexpr double kBudgetSec = 30.0 * 60.0;

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    Row r;
    for (std::size_t k = 0; k < header.size() && k < cells.size(); ++k) r[header[k]] = cells[k];
    rows.push_back(std::move(r));
  }
  return rows;
}

double num(const Row& r, const std::string& key) { return std::stod(r.at(key)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Profile {
  std::vector<int> t;
  std::vector<double> median;
};

Profile read_profile(const fs::path& p) {
  Profile out;
  for (const auto& r : read_csv(p)) {
    out.t.push_back(std::stoi(r.at("t")));
    out.median.push_back(num(r, "median"));
  }
  return out;
}

// Accumulates sub-checks of one criterion and prints the verdict line.
class Criterion {
 public:
  Criterion(int id, std::string title) : id_(id), title_(std::move(title)) {}
  void check(bool ok, const std::string& detail) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(detail);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool report() const {
    std::printf("C%-2d %s  %s\n", id_, pass_ ? "PASS" : "FAIL", title_.c_str());
    for (const auto& n : notes_) std::printf("      %s\n", n.c_str());
    for (const auto& f : failures_) std::printf("      fail: %s\n", f.c_str());
    std::fflush(stdout);
    return pass_;
  }

 private:
  int id_;
  std::string title_;
  bool pass_ = true;
  std::vector<std::string> notes_, failures_;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}
std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

double run_fresh(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  run_experiment(cfg, dir);
  return seconds_since(t0);
}

std::map<std::string, std::string> hashes_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  return out;
}

// ---------------------------------------------------------------- criteria

bool criterion_gaussian(const ExperimentConfig& base, const fs::path& work) {
  Criterion c(1, "closed-form vs Monte-Carlo conditional noise statistics");
  const fs::path dir = work / "gaussian";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  run_experiment(base, dir, {Stage::analysis}, {Analysis::gaussian_check});
  const double secs = seconds_since(t0);
  std::size_t cells = 0;
  for (const auto& r : read_csv(dir / "analysis" / "gaussian_check.csv")) {
    ++cells;
    c.check(r.at("result") == "pass", "cell d=" + r.at("dim") + " sigma=" + r.at("sigma") +
                                          " alpha_bar=" + r.at("alpha_bar") + " mean_z=" + r.at("max_mean_z") +
                                          " var_rel=" + r.at("max_var_rel_err"));
  }
  double worst_limit = 0.0;
  for (const auto& r : read_csv(dir / "analysis" / "gaussian_limits.csv"))
    worst_limit = std::max({worst_limit, num(r, "max_mean_err"), num(r, "max_cov_err")});
  c.check(cells == 27, "expected 27 cells");
  c.check(worst_limit <= kGaussianLimitTol, fmt("limit error %.3g", worst_limit));
  c.check(secs < kGaussianBudgetSec, fmt("runtime %.1f s", secs));
  c.note(fmt("%.0f cells, worst limit error %.2g", static_cast<double>(cells), worst_limit) + fmt(", %.1f s", secs));
  return c.report();
}

bool criterion_gradients() {
  Criterion c(2, "finite-difference gradient exactness");
  const auto t0 = std::chrono::steady_clock::now();
  const auto summary = testing::run_gradient_trials(kGradTrials, 20261016);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const auto& s : summary) {
    worst = std::max(worst, s.worst);
    c.check(s.trials == kGradTrials && s.worst < kGradTol, s.op + fmt(" worst %.3g", s.worst));
  }
  c.check(secs < kGradBudgetSec, fmt("runtime %.1f s", secs));
  c.note(fmt("%.0f ops, worst relative error %.2g", static_cast<double>(summary.size()), worst) +
         fmt(", %.1f s", secs));
  return c.report();
}

bool criterion_profiles(const std::vector<fs::path>& runs) {
  Criterion c(3, "timestep loss and gradient profiles");
  for (const auto& run : runs) {
    const std::string tag = run.filename().string() + ": ";
    const Profile loss = read_profile(run / "analysis" / "loss_profile_clean.csv");
    const Profile grad = read_profile(run / "analysis" / "grad_profile_clean.csv");
    const double lmax = *std::max_element(loss.median.begin(), loss.median.end());
    c.check(loss.median.front() == lmax, tag + "loss at t=0 is not the grid maximum");
    c.check(loss.median.back() < kLossAtTMaxFrac * lmax, tag + fmt("loss at T is %.3f of max", loss.median.back() / lmax));
    const auto peak = std::max_element(grad.median.begin(), grad.median.end());
    const auto k = static_cast<std::size_t>(peak - grad.median.begin());
    c.check(grad.median.back() < kGradLastMaxFrac * *peak, tag + fmt("last gradient is %.3f of peak", grad.median.back() / *peak));
    c.check(k > 0 && k + 1 < grad.median.size(), tag + "gradient peak on the grid boundary");
    c.note(tag + fmt("loss(T)/max %.4f, grad(T)/peak %.3f", loss.median.back() / lmax, grad.median.back() / *peak) +
           " at peak t=" + std::to_string(grad.t[k]));
  }
  return c.report();
}

bool criterion_poison(const std::vector<fs::path>& runs, int T) {
  Criterion c(4, "poison feasibility and signature");
  for (const auto& run : runs) {
    const std::string tag = run.filename().string() + ": ";
    double worst_linf = 0.0;
    bool in_range = true;
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(run / "poison")) {
      if (e.path().extension() != ".tnsr") continue;
      const Tensor xp = read_tensor(e.path());
      const Tensor xc = read_tensor(run / "data" / (e.path().stem().string() + "_image.tnsr"));
      for (std::size_t i = 0; i < xp.size(); ++i) {
        worst_linf = std::max(worst_linf, std::abs(static_cast<double>(xp.values()[i]) - xc.values()[i]));
        in_range = in_range && xp.values()[i] >= 0.0f && xp.values()[i] <= 1.0f;
      }
      ++n;
    }
    c.check(n > 0, tag + "no poisons found");
    c.check(worst_linf <= kLinfBound, tag + fmt("linf %.6f", worst_linf));
    c.check(in_range, tag + "pixel outside [0,1]");

    const Profile clean = read_profile(run / "analysis" / "loss_profile_clean.csv");
    const Profile pois = read_profile(run / "analysis" / "loss_profile_poisoned.csv");
    double mid_min = INFINITY, high_max = 0.0;
    for (std::size_t k = 0; k < clean.t.size(); ++k) {
      const double r = pois.median[k] / clean.median[k];
      if (clean.t[k] >= 0.2 * T && clean.t[k] <= 0.6 * T) {
        mid_min = std::min(mid_min, r);
        c.check(r > 1.0, tag + "poisoned loss not above clean at t=" + std::to_string(clean.t[k]));
      }
      if (clean.t[k] >= 0.9 * T) {
        high_max = std::max(high_max, std::abs(r - 1.0));
        c.check(std::abs(r - 1.0) < kHighTChangeTol,
                tag + fmt("high-t loss changes by %.0f%%", 100 * std::abs(r - 1.0)) + " at t=" + std::to_string(clean.t[k]));
      }
    }
    double pre_e = 0, pre_c = 0, post_e = 0, post_c = 0;
    for (const auto& r : read_csv(run / "analysis" / "hist_summary.csv")) {
      if (r.at("set") == "pre_jpeg") pre_e = num(r, "edge_mass"), pre_c = num(r, "center_mass");
      if (r.at("set") == "post_jpeg") post_e = num(r, "edge_mass"), post_c = num(r, "center_mass");
    }
    c.check(pre_e > pre_c, tag + fmt("pre-JPEG edge %.3f <= center %.3f", pre_e, pre_c));
    c.check(post_c > post_e, tag + fmt("post-JPEG center %.3f <= edge %.3f", post_c, post_e));
    c.note(tag + fmt("linf %.5f, min mid-t loss ratio %.2f", worst_linf, mid_min) +
           fmt(", max high-t change %.0f%%", 100 * high_max) + fmt(", edge/center pre %.2f/%.2f", pre_e, pre_c) +
           fmt(" post %.2f/%.2f", post_e, post_c));
  }
  return c.report();
}

double concept_mean(const std::vector<Row>& rows, const std::string& arm, const std::string& col,
                    const std::string& snapshot = "") {
  double s = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.at("arm") != arm || r.at("concept") == "mean") continue;
    if (!snapshot.empty() && r.at("snapshot") != snapshot) continue;
    s += num(r, col);
    ++n;
  }
  if (n == 0) throw std::runtime_error("no rows for arm " + arm);
  return s / n;
}

bool criterion_spatial(const std::vector<fs::path>& runs) {
  Criterion c(5, "spatial bias of the learned concept");
  for (const auto& run : runs) {
    const std::string tag = run.filename().string() + ": ";
    const auto region = read_csv(run / "analysis" / "region_loss.csv");
    const double rc = concept_mean(region, "clean", "ratio"), rn = concept_mean(region, "nominal", "ratio");
    c.check(rc > rn, tag + fmt("clean in/out ratio %.3f <= poisoned %.3f", rc, rn));
    const auto ssm = read_csv(run / "analysis" / "ssm_ratio.csv");
    const double lm0 = concept_mean(ssm, "lm", "ratio", "100"), lm1 = concept_mean(ssm, "lm", "ratio", "900");
    const double no0 = concept_mean(ssm, "nominal", "ratio", "100"), no1 = concept_mean(ssm, "nominal", "ratio", "900");
    c.check(lm1 > lm0, tag + fmt("LM ssm ratio %.3f -> %.3f", lm0, lm1));
    c.check(no1 <= (1 + kNoLmSsmRiseTol) * no0, tag + fmt("no-LM ssm ratio %.3f -> %.3f", no0, no1));
    c.note(tag + fmt("region ratio clean %.3f poisoned %.3f", rc, rn) + fmt(", ssm LM %.3f->%.3f", lm0, lm1) +
           fmt(", no-LM %.3f->%.3f", no0, no1));
  }
  return c.report();
}

std::map<std::pair<std::string, std::string>, double> eval_table(const fs::path& run) {
  std::map<std::pair<std::string, std::string>, double> out;
  for (const auto& r : read_csv(run / "eval" / "summary.csv")) out[{r.at("arm"), r.at("concept")}] = num(r, "masked_mse");
  return out;
}

bool criterion_defense(const std::vector<fs::path>& runs, const std::vector<std::size_t>& concepts) {
  Criterion c(6, "defense ordering on masked-MSE");
  for (const auto& run : runs) {
    const auto ev = eval_table(run);
    for (std::size_t k : concepts) {
      const std::string ck = std::to_string(k);
      const std::string tag = run.filename().string() + " concept " + ck + ": ";
      const double cl = ev.at({"clean", ck}), no = ev.at({"nominal", ck}), szt = ev.at({"szt", ck});
      const double jp = ev.at({"jpeg", ck}), lm = ev.at({"lm", ck});
      c.check(no >= kNominalOverClean * cl, tag + fmt("nominal/clean %.2f", no / cl));
      c.check(szt <= kSztOverClean * cl, tag + fmt("szt/clean %.2f", szt / cl));
      c.check(szt <= jp, tag + fmt("szt %.4f > jpeg %.4f", szt, jp));
      c.check(szt <= lm, tag + fmt("szt %.4f > lm %.4f", szt, lm));
      c.note(tag + fmt("nominal/clean %.2f szt/clean %.2f", no / cl, szt / cl) +
             fmt(" jpeg/clean %.2f lm/clean %.2f", jp / cl, lm / cl));
    }
  }
  return c.report();
}

bool criterion_masking(const std::vector<fs::path>& runs) {
  Criterion c(7, "loss mask beats latent mask");
  for (const auto& run : runs) {
    const auto ev = eval_table(run);
    const double lm = ev.at({"lm", "mean"}), zm = ev.at({"zm", "mean"});
    c.check(lm <= zm, run.filename().string() + fmt(": lm %.4f > zm %.4f", lm, zm));
    c.note(run.filename().string() + fmt(": lm %.4f zm %.4f", lm, zm));
  }
  return c.report();
}

bool criterion_rapsd(const std::vector<fs::path>& runs) {
  Criterion c(8, "latent spectra of poisoned and purified images");
  for (const auto& run : runs) {
    const std::string tag = run.filename().string() + ": ";
    const auto rows = read_csv(run / "analysis" / "rapsd.csv");
    const std::size_t first = (3 * rows.size() + 3) / 4;
    double gap_p = 0, gap_j = 0;
    for (std::size_t r = first; r < rows.size(); ++r) {
      const double cl = num(rows[r], "clean"), po = num(rows[r], "poisoned"), pu = num(rows[r], "purified");
      c.check(po > cl, tag + fmt("radius %.0f poisoned %.4g", static_cast<double>(r), po) + fmt(" <= clean %.4g", cl));
      gap_p += std::abs(std::log(po / cl));
      gap_j += std::abs(std::log(pu / cl));
    }
    gap_p /= static_cast<double>(rows.size() - first);
    gap_j /= static_cast<double>(rows.size() - first);
    c.check(gap_j < gap_p, tag + fmt("log gap purified %.3f >= poisoned %.3f", gap_j, gap_p));
    c.note(tag + fmt("top-quartile log gap poisoned %.3f purified %.3f", gap_p, gap_j));
  }
  return c.report();
}

bool criterion_determinism(const ExperimentConfig& cfg, const fs::path& first, const fs::path& work) {
  Criterion c(9, "determinism");
  const fs::path again = work / "repeat";
  run_fresh(cfg, again);
  c.check(slurp(first / kManifestFile) == slurp(again / kManifestFile), "rerun manifest differs");

  std::map<std::string, std::string> by_threads[2];
  const std::size_t threads[2] = {1, 4};
  for (int k = 0; k < 2; ++k) {
    ExperimentConfig tc = cfg;
    tc.threads = threads[k];
    const fs::path dir = work / ("threads" + std::to_string(threads[k]));
    fs::remove_all(dir);
    fs::copy(first, dir, fs::copy_options::recursive);
    fs::remove_all(dir / "analysis");
    run_experiment(tc, dir, {Stage::analysis});
    by_threads[k] = hashes_under(dir / "analysis");
  }
  set_thread_count(1);
  c.check(!by_threads[0].empty() && by_threads[0] == by_threads[1], "analysis output depends on thread count");
  c.check(by_threads[0] == hashes_under(first / "analysis"), "analysis rerun differs from the pipeline run");
  c.note(fmt("%.0f analysis files compared across 1 and 4 threads", static_cast<double>(by_threads[0].size())));
  return c.report();
}

bool criterion_budget(const fs::path& work) {
  Criterion c(10, "default pipeline runtime");
  const ExperimentConfig cfg = load_experiment_config(fs::path(SZLAB_SOURCE_DIR) / "configs" / "default.toml");
  const double secs = run_fresh(cfg, work / "default");
  c.check(secs < kBudgetSec, fmt("runtime %.0f s", secs));
  c.note(fmt("default run %.1f s", secs) + fmt(" with %.0f worker threads", static_cast<double>(thread_count())));
  return c.report();
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_work";
  int seeds = 3;
  for (int k = 1; k + 1 < argc; k += 2) {
    const std::string a = argv[k];
    if (a == "--work") work = argv[k + 1];
    else if (a == "--seeds") seeds = std::stoi(argv[k + 1]);
    else {
      std::fprintf(stderr, "usage: acceptance [--work DIR] [--seeds N]\n");
      return 64;
    }
  }
  fs::create_directories(work);
  const ExperimentConfig base =
      load_experiment_config(fs::path(SZLAB_SOURCE_DIR) / "configs" / "acceptance.toml");

  bool ok = true;
  auto guarded = [&](int id, auto&& fn) {
    try {
      ok = fn() && ok;
    } catch (const std::exception& e) {
      std::printf("C%-2d FAIL  error: %s\n", id, e.what());
      ok = false;
    }
  };

  guarded(1, [&] { return criterion_gaussian(base, work); });
  guarded(2, [&] { return criterion_gradients(); });

  std::vector<fs::path> runs;
  for (int s = 1; s <= seeds; ++s) {
    const fs::path dir = work / ("seed" + std::to_string(s));
    const double secs = run_fresh(with_seed(base, static_cast<std::uint64_t>(s)), dir);
    std::printf("     seed %d pipeline %.1f s\n", s, secs);
    runs.push_back(dir);
  }
  std::fflush(stdout);

  guarded(3, [&] { return criterion_profiles(runs); });
  guarded(4, [&] { return criterion_poison(runs, base.model.timesteps); });
  guarded(5, [&] { return criterion_spatial(runs); });
  guarded(6, [&] { return criterion_defense(runs, base.poison_concepts); });
  guarded(7, [&] { return criterion_masking(runs); });
  guarded(8, [&] { return criterion_rapsd(runs); });
  guarded(9, [&] { return criterion_determinism(with_seed(base, 1), runs.front(), work); });
  guarded(10, [&] { return criterion_budget(work); });

  std::printf("%s\n", ok ? "acceptance: all criteria pass" : "acceptance: some criteria fail");
  return ok ? 0 : 1;
}
