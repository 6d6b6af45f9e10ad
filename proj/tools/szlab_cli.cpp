// szlab command line: pipeline stages, standalone purification and analyses.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>

#include "szlab/config.hpp"
#include "szlab/defense.hpp"
#include "szlab/experiment.hpp"
#include "szlab/parallel.hpp"
#include "szlab/report.hpp"
#include "szlab/tensor_io.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (flat TOML); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Master seed, overrides [experiment] seed");
  app->add_option("--out", c.out, "Report directory")->required();
  app->add_option("--threads", c.threads, "Worker threads (0 keeps the config or SZLAB_THREADS)");
}

szlab::ExperimentConfig load(const Common& c) {
  szlab::ExperimentConfig cfg = c.config.empty() ? szlab::ExperimentConfig{} : szlab::load_experiment_config(c.config);
  if (c.seed) cfg.seed = c.seed;
  if (c.threads > 0) cfg.threads = c.threads;
  cfg.validate();
  cfg.require_seed();
  return cfg;
}

bool is_pgm(const std::string& path) { return std::filesystem::path(path).extension() == ".pgm"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"szlab: toy diffusion lab for poisoning and safe-zone training"};
  app.require_subcommand(1);

  struct StageCmd {
    const char* name;
    const char* help;
    szlab::Stage stage;
  };
  const StageCmd stage_cmds[] = {
      {"gen-data", "Generate the synthetic concept dataset", szlab::Stage::data},
      {"pretrain", "Fit the autoencoder and pretrain the toy diffusion model", szlab::Stage::pretrain},
      {"poison", "Craft poisoned copies of the configured concepts", szlab::Stage::poison},
      {"train-ti", "Textual inversion for every ablation arm", szlab::Stage::ti},
      {"evaluate", "Generate from each learned concept and score against the clean references", szlab::Stage::eval},
  };
  std::vector<Common> stage_opts(std::size(stage_cmds));
  std::vector<CLI::App*> stage_apps;
  for (std::size_t k = 0; k < std::size(stage_cmds); ++k) {
    auto* sub = app.add_subcommand(stage_cmds[k].name, stage_cmds[k].help);
    add_common(sub, stage_opts[k]);
    stage_apps.push_back(sub);
  }

  Common run_opts;
  std::vector<std::string> run_stages;
  auto* run = app.add_subcommand("run", "Full pipeline: data, pretrain, poison, ti, eval, analysis");
  add_common(run, run_opts);
  run->add_option("--stages", run_stages, "Only these stages (data, pretrain, poison, ti, eval, analysis)")
      ->delimiter(',');

  Common analyze_opts;
  std::string analysis_name;
  auto* analyze = app.add_subcommand("analyze", "One analysis over an existing report directory");
  add_common(analyze, analyze_opts);
  std::vector<std::string> analysis_names;
  for (auto a : szlab::all_analyses()) analysis_names.push_back(szlab::to_string(a));
  analyze->add_option("kind", analysis_name, "Which analysis")->required()->check(CLI::IsMember(analysis_names));

  std::string purify_in, purify_out;
  int quality = 25;
  auto* purify = app.add_subcommand("purify", "JPEG-purify one image (TNSR1 or PGM by extension)");
  purify->add_option("--in", purify_in, "Input image")->required()->check(CLI::ExistingFile);
  purify->add_option("--out", purify_out, "Output image")->required();
  purify->add_option("--quality", quality, "JPEG quality 1..100")->check(CLI::Range(1, 100));

  CLI11_PARSE(app, argc, argv);

  try {
    if (purify->parsed()) {
      const szlab::Tensor x = is_pgm(purify_in) ? szlab::read_pgm(purify_in) : szlab::read_tensor(purify_in);
      const szlab::Tensor y = szlab::jpeg_compress(x, szlab::JpegConfig{quality});
      if (is_pgm(purify_out)) szlab::write_pgm(purify_out, y);
      else szlab::write_tensor(purify_out, y);
      return 0;
    }
    const auto start = std::chrono::steady_clock::now();
    if (run->parsed()) {
      const auto cfg = load(run_opts);
      std::vector<szlab::Stage> stages;
      for (const auto& s : run_stages) stages.push_back(szlab::stage_from_string(s));
      szlab::run_experiment(cfg, run_opts.out, stages);
    } else if (analyze->parsed()) {
      const auto cfg = load(analyze_opts);
      szlab::run_experiment(cfg, analyze_opts.out, {szlab::Stage::analysis},
                            {szlab::analysis_from_string(analysis_name)});
    } else {
      for (std::size_t k = 0; k < stage_apps.size(); ++k) {
        if (!stage_apps[k]->parsed()) continue;
        const auto cfg = load(stage_opts[k]);
        szlab::run_experiment(cfg, stage_opts[k].out, {stage_cmds[k].stage});
      }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "done in %.1f s\n", secs);
  } catch (const szlab::StageFailure& e) {
    std::fprintf(stderr, "szlab: %s\n", e.what());
    return 2;
  } catch (const szlab::ConfigError& e) {
    std::fprintf(stderr, "szlab: config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "szlab: %s\n", e.what());
    return 1;
  }
  return 0;
}
