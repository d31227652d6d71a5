#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twintune/campaign.hpp"

namespace {

using namespace twintune;

int worker_override(const CLI::Option* flag, int flag_value, int cfg_value) {
  if (flag->count() > 0) return flag_value;
  if (const char* env = std::getenv("TWINTUNE_WORKERS")) return std::atoi(env);
  return cfg_value;
}

Eigen::VectorXd parse_theta_csv(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    vals.push_back(std::stod(item));
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) out[static_cast<Eigen::Index>(i)] = vals[i];
  return out;
}

void print_validation(const std::vector<PathMetrics>& rows) {
  std::printf("%-20s %8s %10s %12s %10s %12s\n", "path", "holdout", "h_path", "h_velocity",
              "h_cost", "kpi");
  for (const PathMetrics& r : rows) {
    std::printf("%-20s %8s %10.4f %12.4f %10.4f %12.4f%s\n", r.path.c_str(),
                r.holdout ? "yes" : "no", r.h_path, r.h_velocity, r.h_cost, r.kpi,
                r.completed ? "" : "  (diverged)");
  }
}

int cmd_tune(const std::string& config_file, const CLI::Option* workers_flag, int workers,
             const std::string& mode, std::uint64_t seed, bool seed_set, const std::string& out) {
  CampaignConfig cfg = load_campaign_config(config_file);
  cfg.workers = worker_override(workers_flag, workers, cfg.workers);
  if (!mode.empty()) cfg.hp.mode = parse_mode(mode);
  if (seed_set) cfg.campaign_seed = seed;
  if (!out.empty()) cfg.output_dir = out;

  const CampaignSummary s = run_campaign(cfg);
  for (const UpdateReport& r : s.iterations) {
    std::printf("k=%-3d kpi=%-12.5f accepted=%d c_k=%-8.4f a_k=%-10.5g trace_P=%.5g\n", r.k,
                r.kpi_target, r.accepted ? 1 : 0, r.c_k, r.a_used, r.trace_P);
  }
  std::ostringstream theta;
  for (Eigen::Index i = 0; i < s.belief_final.theta.size(); ++i) {
    if (i) theta << ",";
    theta << s.belief_final.theta[i];
  }
  std::printf("final theta: %s\n", theta.str().c_str());
  if (cfg.oracle == OracleKind::kSurface) {
    const Basin b =
        nearest_basin(cfg.surface, Eigen::Vector2d(s.belief_final.theta[0], s.belief_final.theta[1]));
    std::printf("final basin: %s\n", b == Basin::kWell ? "well (global)" : "dimple (local)");
  }
  std::printf("accepted %d of %d updates\n", s.accepted_count, cfg.iterations);
  if (!cfg.output_dir.empty()) std::printf("outputs: %s\n", cfg.output_dir.c_str());
  if (!s.error.empty()) {
    std::fprintf(stderr, "campaign aborted at %s\n", s.error.c_str());
    return 1;
  }
  return 0;
}

int cmd_validate(const std::string& config_file, const std::string& theta_csv) {
  const CampaignConfig cfg = load_campaign_config(config_file);
  const Eigen::VectorXd theta = parse_theta_csv(theta_csv);
  print_validation(validate_params(theta, cfg));
  return 0;
}

int cmd_baseline(const std::string& config_file, int seeds, const CLI::Option* workers_flag,
                 int workers, const std::string& out) {
  CampaignConfig cfg = load_campaign_config(config_file);
  cfg.workers = worker_override(workers_flag, workers, cfg.workers);
  if (!out.empty()) cfg.output_dir = out;
  const std::vector<BaselineRow> rows = run_baseline_suite(cfg, seeds);
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    const std::string file = (std::filesystem::path(cfg.output_dir) / "baseline.csv").string();
    write_baseline_csv(rows, file);
    std::printf("wrote %s\n", file.c_str());
  }
  // Final-iteration medians per mode.
  for (const char* mode : {"auks", "constant_covariance", "ukf_only"}) {
    std::vector<double> kpi, trace;
    for (const BaselineRow& r : rows) {
      if (r.mode == mode && r.k == cfg.iterations) {
        kpi.push_back(r.kpi_target);
        trace.push_back(r.trace_P);
      }
    }
    if (kpi.empty()) continue;
    std::sort(kpi.begin(), kpi.end());
    std::sort(trace.begin(), trace.end());
    std::printf("%-22s median final kpi=%-12.5f median final trace_P=%.5g  (%zu seeds)\n", mode,
                kpi[kpi.size() / 2], trace[trace.size() / 2], kpi.size());
  }
  return 0;
}

int cmd_dump_config(const std::string& kind, const std::string& out) {
  CampaignConfig cfg;
  if (kind == "sim2sim")
    cfg = bundled_sim2sim_config();
  else if (kind == "surface")
    cfg = bundled_surface_config();
  else
    throw std::runtime_error("unknown config kind \"" + kind + "\" (expected sim2sim|surface)");
  if (out.empty()) {
    std::cout << campaign_config_json(cfg);
  } else {
    save_campaign_config(cfg, out);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auto-calibration of receding-horizon controller weights on digital twins"};
  app.require_subcommand(1);

  std::string config_file, mode, out, theta_csv, kind = "sim2sim";
  int workers = 0;
  std::uint64_t seed = 0;
  int seeds = 10;

  CLI::App* tune = app.add_subcommand("tune", "run a tuning campaign");
  tune->add_option("--config", config_file, "campaign config JSON")->required();
  CLI::Option* tune_workers = tune->add_option("--workers", workers, "worker thread count");
  tune->add_option("--mode", mode, "auks|constant_covariance|ukf_only|spsa_only");
  CLI::Option* seed_opt = tune->add_option("--seed", seed, "campaign seed");
  tune->add_option("--out", out, "output directory override");

  CLI::App* validate = app.add_subcommand("validate", "evaluate a parameter set on every path");
  validate->add_option("--config", config_file, "campaign config JSON")->required();
  validate->add_option("--theta", theta_csv, "comma-separated parameter values")->required();

  CLI::App* baseline = app.add_subcommand("baseline", "mode-ablation sweep over seeds");
  baseline->add_option("--config", config_file, "campaign config JSON")->required();
  baseline->add_option("--seeds", seeds, "number of campaign seeds");
  CLI::Option* base_workers = baseline->add_option("--workers", workers, "worker thread count");
  baseline->add_option("--out", out, "output directory override");

  CLI::App* dump = app.add_subcommand("dump-config", "print or write a bundled config");
  dump->add_option("--kind", kind, "sim2sim|surface");
  dump->add_option("--out", out, "file to write (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tune->parsed())
      return cmd_tune(config_file, tune_workers, workers, mode, seed, seed_opt->count() > 0, out);
    if (validate->parsed()) return cmd_validate(config_file, theta_csv);
    if (baseline->parsed()) return cmd_baseline(config_file, seeds, base_workers, workers, out);
    if (dump->parsed()) return cmd_dump_config(kind, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
