#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twintune/executor.hpp"
#include "twintune/synthetic.hpp"
#include "twintune/tuner.hpp"

namespace twintune {

enum class OracleKind { kVehicle, kSurface };

const char* oracle_name(OracleKind kind);
OracleKind parse_oracle(const std::string& name);
const char* mode_name(TunerMode mode);
TunerMode parse_mode(const std::string& name);

// Sim2Sim scenario: the tuner explores on randomized copies of the nominal
// twin while the target plant (deliberately mismatched) stands in for the
// real system. Noise levels for tuning rollouts live in the DR spec; the
// embedded RolloutConfig carries only window/discretization/controller
// settings and keeps its own noise arrays at zero.
struct VehicleScenario {
  PlantParams nominal;
  PlantParams target;
  DomainRandomizationSpec dr;
  std::vector<std::string> path_files;  // empty: bundled library
  std::vector<PathGeometry> paths;      // resolved at load/factory time
  double train_fraction = 0.8;          // leading fraction of paths used for tuning
  RolloutConfig rollout;
};

struct CampaignConfig {
  std::uint64_t campaign_seed = 1;
  int iterations = 5;
  int workers = 0;  // <= 0: hardware concurrency (flag/env can override)
  OracleKind oracle = OracleKind::kVehicle;
  TunerHyperparams hp;
  Eigen::VectorXd theta0;
  Eigen::VectorXd P0_diag;         // diagonal initializers for the belief
  Eigen::VectorXd C_dtheta0_diag;
  Eigen::VectorXd C_v0_diag;
  VehicleScenario vehicle;  // used when oracle == kVehicle
  SurfaceSpec surface;      // used when oracle == kSurface
  std::string output_dir;   // empty: nothing written
  bool write_traces = false;
};

void validate_campaign(const CampaignConfig& cfg);

// Number of leading paths available to the tuning loop (>= 1).
int train_path_count(const CampaignConfig& cfg);

// Strict JSON round trip: unknown or missing keys raise std::runtime_error
// naming the offending key. campaign_config_json is the canonical
// serialization (sorted keys, stable float formatting).
CampaignConfig load_campaign_config(const std::string& filename);
std::string campaign_config_json(const CampaignConfig& cfg);
void save_campaign_config(const CampaignConfig& cfg, const std::string& filename);

// Bundled scenarios mirrored by the files under configs/.
CampaignConfig bundled_sim2sim_config();
CampaignConfig bundled_surface_config();

struct PathMetrics {
  std::string path;
  bool holdout = false;
  double h_path = 0.0;
  double h_velocity = 0.0;
  double h_cost = 0.0;
  double kpi = 0.0;
  bool completed = true;
};

struct CampaignSummary {
  std::vector<UpdateReport> iterations;
  std::vector<PathMetrics> validation_initial;  // theta0 on every path (vehicle only)
  std::vector<PathMetrics> validation_tuned;    // final theta on every path (vehicle only)
  ParameterBelief belief_final;
  int accepted_count = 0;
  std::string error;  // empty on a clean run; set when an iteration aborted the campaign
};

// Batch rollout oracle over the Sim2Sim scenario. Job mapping: the center
// sigma point and the safety candidate run on the exact nominal twin, the
// target job on the target plant, and every other job on a plant drawn from
// the DR spec with the job seed. The training path for iteration k is drawn
// from the training split when path randomization is on, path 0 otherwise.
class VehicleOracleSuite final : public OracleSuite {
 public:
  explicit VehicleOracleSuite(const CampaignConfig& cfg);

  int output_dim() const override { return 3; }
  std::vector<OracleEval> evaluate(const std::vector<OracleJob>& jobs, int k) override;

  int path_index_for(int k) const;

 private:
  CampaignConfig cfg_;  // owning copy: keeps paths stable across calls
  int train_count_ = 1;
};

// K iterations of the tuner against the configured oracle, plus initial/final
// validation sweeps on vehicle campaigns. When output_dir is set, writes
// iterations.csv, spread.csv, validation.csv (vehicle), summary.json, and
// (with write_traces) a final target-rollout trace — all byte-stable across
// reruns and worker counts.
CampaignSummary run_campaign(const CampaignConfig& cfg);

// Deterministic noiseless rollouts of theta on the target plant over every
// configured path (holdout = beyond the training split).
std::vector<PathMetrics> validate_params(const Eigen::VectorXd& theta, const CampaignConfig& cfg);

struct BaselineRow {
  std::string mode;
  std::uint64_t campaign_seed = 0;
  int k = 0;
  double kpi_target = 0.0;
  double trace_P = 0.0;
  bool accepted = false;
};

// Ablation sweep: reruns the campaign under {auks, constant_covariance,
// ukf_only} with identical seeds campaign_seed .. campaign_seed+seed_count-1
// and collects per-iteration KPI and trace(P) series.
std::vector<BaselineRow> run_baseline_suite(const CampaignConfig& cfg, int seed_count);
void write_baseline_csv(const std::vector<BaselineRow>& rows, const std::string& filename);

}  // namespace twintune
