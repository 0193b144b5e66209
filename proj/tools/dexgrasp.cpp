#include <CLI11.hpp>
#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

#include "dexgrasp/pipeline.hpp"

using namespace dexgrasp;

int main(int argc, char** argv) {
  CLI::App app{"zero-shot task-oriented dexterous grasp synthesis"};
  app.require_subcommand(1);

  std::string task_path, config_path, out_dir = "out", backend, results_dir;
  std::string initial_path;
  uint64_t seed = 0;
  bool have_seed = false;
  int jobs = 1;
  bool force_points = false, skip_points = false, ablate_initial = false;
  std::vector<std::string> task_paths;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "pipeline config JSON");
    cmd->add_option("--backend", backend, "fixture | heuristic | http");
    cmd->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) { have_seed = true; });
    cmd->add_option("--out-dir", out_dir, "output directory");
  };

  auto* plan = app.add_subcommand("plan", "run the full pipeline on one or more tasks");
  plan->add_option("task", task_paths, "task JSON file(s)")->required();
  plan->add_option("--jobs", jobs, "parallel tasks");
  plan->add_flag("--force-point-level", force_points, "always infer point-level contacts");
  plan->add_flag("--skip-point-level", skip_points, "never infer point-level contacts");
  add_common(plan);

  auto* refine = app.add_subcommand("refine", "refine a grasp from a result JSON");
  refine->add_option("task", task_path, "task JSON file")->required();
  refine->add_option("--initial", initial_path, "result JSON providing pose and contacts")
      ->required();
  refine->add_flag("--ablate-initial", ablate_initial,
                   "ignore the staged initializer; start from the contact-region center with a "
                   "random rotation and extended fingers");
  add_common(refine);

  auto* evaluate = app.add_subcommand("evaluate", "aggregate result JSONs into CSV + JSON");
  evaluate->add_option("results", results_dir, "directory of *.result.json files")->required();
  evaluate->add_option("--out-dir", out_dir, "output directory");

  auto* prompts = app.add_subcommand("render-prompts", "write the visual prompt images");
  prompts->add_option("task", task_path, "task JSON file")->required();
  add_common(prompts);

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (!backend.empty()) {
      if (backend != "fixture" && backend != "heuristic" && backend != "http")
        throw Error(ErrorCode::ConfigError, "backend must be fixture, heuristic, or http");
      cfg.backend = backend;
    }
    if (have_seed) cfg.seed = seed;
    if (force_points) cfg.force_point_level = true;
    if (skip_points) cfg.skip_point_level = true;
    if (cfg.force_point_level && cfg.skip_point_level)
      throw Error(ErrorCode::ConfigError, "--force-point-level conflicts with --skip-point-level");

    if (plan->parsed()) {
      std::vector<TaskSpec> tasks;
      for (const auto& p : task_paths) tasks.push_back(load_task(p));
      std::mutex mu;
      std::atomic<size_t> next{0};
      std::exception_ptr failure;
      auto worker = [&] {
        for (size_t i = next++; i < tasks.size(); i = next++) {
          try {
            auto result = run_plan(tasks[i], cfg, out_dir);
            std::lock_guard<std::mutex> lock(mu);
            std::cout << tasks[i].name << ": total energy " << result.energy.total
                      << ", p_dep " << result.metrics.p_dep_cm << " cm"
                      << (result.metrics.twist
                              ? ""
                              : result.metrics.sim_suc ? ", hold ok" : ", hold failed")
                      << "\n";
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      };
      std::vector<std::thread> pool;
      for (int t = 1; t < std::min<int>(jobs, int(tasks.size())); ++t)
        pool.emplace_back(worker);
      worker();
      for (auto& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
    } else if (refine->parsed()) {
      TaskSpec task = load_task(task_path);
      std::ifstream f(initial_path);
      if (!f) throw Error(ErrorCode::InputError, "cannot open " + initial_path);
      auto prev = result_from_json(nlohmann::json::parse(f));
      auto result = run_refine(task, cfg, prev.initial, prev.contacts, out_dir, ablate_initial);
      std::cout << task.name << ": total energy " << result.energy.total << ", p_dep "
                << result.metrics.p_dep_cm << " cm\n";
    } else if (evaluate->parsed()) {
      auto summary = run_evaluate(results_dir, out_dir);
      std::cout << summary.aggregate.dump(2) << "\n";
    } else if (prompts->parsed()) {
      TaskSpec task = load_task(task_path);
      run_render_prompts(task, cfg, out_dir);
      std::cout << "wrote prompt images to " << out_dir << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
