#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "latentcl/cli/pipeline.hpp"

using namespace latentcl;
using namespace latentcl::cli;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string checkpoint;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Experiment config (key = value lines)");
  app->add_option("--seed", c.seed, "Override the config seed");
  app->add_option("--out", c.out, "Output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  validate(cfg);
  return cfg;
}

latentmodel::ModelParams load_checked(const std::string& path, const ExperimentConfig& cfg) {
  if (path.empty()) throw PipelineError("--checkpoint is required");
  if (!fs::exists(path)) throw PipelineError("checkpoint not found: " + path);
  auto p = latentmodel::load_checkpoint(path);
  check_compatible(p, cfg);
  return p;
}

std::vector<std::uint64_t> seed_list(const std::vector<std::uint64_t>& given, const ExperimentConfig& cfg) {
  if (!given.empty()) return given;
  return {cfg.seed, cfg.seed + 1, cfg.seed + 2};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-trajectory contrastive training on toy mazes"};
  app.require_subcommand(1);

  Common gen_opt, train_opt, eval_opt, an_opt, cmp_opt, abl_opt;

  auto* gen = app.add_subcommand("gen-data", "Write train/rl/test maze datasets");
  add_common(gen, gen_opt);

  std::string stage_text;
  auto* train = app.add_subcommand("train", "Run one training stage");
  add_common(train, train_opt);
  train->add_option("--stage", stage_text, "warmup, sft or grpo")->required();
  train->add_option("--checkpoint", train_opt.checkpoint, "Input checkpoint (defaults to the previous stage)");

  std::string eval_data;
  auto* eval = app.add_subcommand("eval", "Greedy accuracy on a dataset");
  add_common(eval, eval_opt);
  eval->add_option("--checkpoint", eval_opt.checkpoint)->required();
  eval->add_option("--data", eval_data, "Dataset file (defaults to the generated test split)");

  std::string what;
  std::vector<double> sigmas;
  std::size_t cases = 40, repeats = 20, project_items = 50;
  auto* an = app.add_subcommand("analyze", "Latent-space analyses");
  add_common(an, an_opt);
  an->add_option("what", what, "dispersion, noise or project")
      ->required()
      ->check(CLI::IsMember({"dispersion", "noise", "project"}));
  an->add_option("--checkpoint", an_opt.checkpoint)->required();
  an->add_option("--sigmas", sigmas, "Noise levels for `noise`");
  an->add_option("--cases", cases, "Test cases for `dispersion`");
  an->add_option("--repeats", repeats, "Rollouts per case for `dispersion`");
  an->add_option("--items", project_items, "Test items for `project`");

  std::string other_config;
  std::vector<std::uint64_t> cmp_seeds, abl_seeds;
  auto* cmp = app.add_subcommand("compare", "Compare two configs across seeds");
  add_common(cmp, cmp_opt);
  cmp->add_option("--against", other_config, "Second config")->required();
  cmp->add_option("--seeds", cmp_seeds, "Seeds (default: seed, seed+1, seed+2)");

  auto* abl = app.add_subcommand("ablate", "Ablation variants across seeds");
  add_common(abl, abl_opt);
  abl->add_option("--seeds", abl_seeds, "Seeds (default: seed, seed+1, seed+2)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto cfg = resolve(gen_opt);
      auto s = make_data(cfg);
      const fs::path out(gen_opt.out);
      taskgen::write_dataset(out / "train.jsonl", s.train);
      taskgen::write_dataset(out / "rl.jsonl", s.rl);
      taskgen::write_dataset(out / "test.jsonl", s.test);
      std::cout << "wrote " << s.train.items.size() << "/" << s.rl.items.size() << "/" << s.test.items.size()
                << " mazes to " << out.string() << "\n";
    } else if (*train) {
      const Stage stage = parse_stage(stage_text);
      auto cfg = resolve(train_opt);
      std::optional<fs::path> input;
      if (!train_opt.checkpoint.empty()) input = fs::path(train_opt.checkpoint);
      auto r = run_stage(cfg, stage, train_opt.out, input);
      std::cout << stage_name(stage) << " test_accuracy " << analysis::fmt(r.test_accuracy) << " -> "
                << stage_dir(train_opt.out, cfg, stage).string() << "\n";
    } else if (*eval) {
      auto cfg = resolve(eval_opt);
      auto items = eval_data.empty() ? make_data(cfg).test.items : taskgen::read_dataset(eval_data).items;
      auto r = evaluate_checkpoint(eval_opt.checkpoint, cfg, items, fs::path(eval_opt.out) / "eval.csv");
      std::cout << "accuracy " << analysis::fmt(r.accuracy) << "\n";
    } else if (*an) {
      auto cfg = resolve(an_opt);
      auto p = load_checked(an_opt.checkpoint, cfg);
      const auto test = make_data(cfg).test.items;
      const fs::path out(an_opt.out);
      fs::create_directories(out);
      if (what == "dispersion") {
        auto r = analysis::rollout_dispersion_study(
            p, test, cfg.k,
            {cases, repeats, cfg.temperature, cfg.latent_sampling_std, cfg.seed});
        write_file(out / "dispersion.csv", analysis::dispersion_csv(r));
        std::cout << "dispersion " << analysis::fmt(r.overall) << "\n";
      } else if (what == "noise") {
        if (sigmas.empty()) sigmas = default_noise_sigmas();
        auto rows = analysis::noise_robustness(p, test, cfg.k, sigmas, {cfg.seed});
        write_file(out / "noise.csv", analysis::noise_csv(rows));
        for (const auto& r : rows) std::cout << "sigma " << analysis::fmt(r.sigma) << " accuracy " << analysis::fmt(r.accuracy) << "\n";
      } else {
        std::vector<taskgen::MazeInstance> items(test.begin(), test.begin() + std::min(project_items, test.size()));
        auto [pts, step_of] = analysis::collect_latents(p, items, cfg.k, cfg.k);
        auto proj = analysis::pca2(pts);
        std::vector<std::vector<analysis::Vec>> groups(cfg.k);
        for (std::size_t i = 0; i < pts.size(); ++i) groups[step_of[i]].push_back(pts[i]);
        auto disp = analysis::centroid_dispersion(groups);
        write_file(out / "projection.csv", analysis::projection_csv(proj.coords, step_of));
        write_file(out / "projection.svg", analysis::scatter_svg(proj.coords, step_of, disp.per_step, "latent tokens (PCA)"));
        std::cout << "projected " << pts.size() << " latent tokens\n";
      }
    } else if (*cmp) {
      auto a = resolve(cmp_opt);
      auto b = load_config(other_config);
      validate(b);
      auto rows = compare(a, b, seed_list(cmp_seeds, a));
      const auto csv = comparison_csv(rows);
      write_file(fs::path(cmp_opt.out) / "compare.csv", csv);
      std::cout << csv;
    } else if (*abl) {
      auto cfg = resolve(abl_opt);
      std::vector<SeedStudy> studies;
      for (auto seed : seed_list(abl_seeds, cfg)) studies.push_back(run_seed_study(cfg, seed));
      const auto csv = ablation_csv(studies);
      write_file(fs::path(abl_opt.out) / "ablation.csv", csv);
      std::cout << csv;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const taskgen::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const PipelineError& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return 3;
  } catch (const latentmodel::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
