#pragma once

// Seeded micro-lab experiments: warm-up, difficulty bucketing, curation and
// training arms, with per-step accuracy and gradient-norm telemetry.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcsft/curator.hpp"
#include "dcsft/grpo.hpp"
#include "dcsft/microlab/kernels.hpp"
#include "dcsft/microlab/task.hpp"
#include "dcsft/microlab/trainers.hpp"

namespace dcsft::lab {

enum class TrainerKind { Sft, Grpo };

struct ArmSpec {
  std::string name;
  TrainerKind trainer = TrainerKind::Sft;
  CurationPlan plan;
  std::optional<double> lr;  // falls back to the config's lr or grpo_lr
};

struct WarmupConfig {
  double fraction = 0.05;
  int steps = 1000;
  double lr = 0.2;
};

struct LabConfig {
  SyntheticTaskSpec task;
  WarmupConfig warmup;
  double temperature = 0.9;
  int bucket_g = 8;
  int steps = 200;
  double lr = 0.005;
  double grpo_lr = 0.01;
  GrpoConfig grpo;
  int n_seeds = 20;
  std::uint64_t seed = 0;
  int eval_every = 10;
  int smoothing_window = 10;
  int norm_window = 50;
  std::vector<ArmSpec> arms;
  std::vector<double> sweep_rhos{0.0, 0.05, 0.135, 0.25};

  void validate() const;
};

/// Per-bucket SFT (balanced), full SFT, SFT-M, SFT-EM and GRPO on the full set.
std::vector<ArmSpec> default_arms();

/// One SFT arm per sweep ratio, named "hard-ratio-<rho>".
std::vector<ArmSpec> sweep_arms(const LabConfig& config);

LabConfig lab_config_from_json(const nlohmann::json& j);
nlohmann::json lab_config_to_json(const LabConfig& config);
LabConfig load_lab_config(const std::filesystem::path& path);

struct StepLog {
  int step = 0;
  double id_acc = 0;   // NaN on steps without evaluation
  double ood_acc = 0;  // NaN on steps without evaluation
  double grad_norm = 0;
  double grad_norm_smoothed = 0;            // trailing mean over smoothing_window
  std::array<double, 3> bucket_norms{};     // easy, medium, hard; NaN when absent
};

struct SeedRun {
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> bucket_sizes{};  // train-set difficulty histogram
  std::array<std::size_t, 3> train_counts{};  // curated training set per bucket
  std::optional<double> achieved_hard_ratio;
  double warm_id = 0;
  double warm_ood = 0;
  double final_id = 0;
  double final_ood = 0;
  std::vector<StepLog> steps;
  GrpoStats grpo_totals;

  /// Mean raw gradient norm over the first `window` steps; bucket -1 means
  /// the whole batch. NaN if the bucket is absent.
  double mean_grad_norm(int window, int bucket = -1) const;
};

struct ArmReport {
  ArmSpec arm;
  double lr = 0;
  std::vector<SeedRun> runs;  // seed order

  std::vector<double> final_ood() const;
  std::vector<double> final_id() const;
};

struct ExperimentResult {
  LabConfig config;
  std::vector<ArmReport> arms;

  const ArmReport& arm(const std::string& name) const;
};

struct RunOptions {
  Backend backend = Backend::Parallel;
  bool parallel_seeds = true;
};

/// Runs config.arms (default_arms() when empty) over n_seeds seeds. Throws
/// InfeasiblePlan when an arm's curation plan cannot be met for some seed.
ExperimentResult run_experiment(const LabConfig& config, const RunOptions& options = {});

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(std::size_t wins, std::size_t n);

double mean(std::span<const double> v);
double stddev(std::span<const double> v);

/// Per-arm CSV (seed, step, accuracies, raw and smoothed norms, bucket norms).
void write_arm_csv(const std::filesystem::path& path, const ArmReport& report);
nlohmann::json summary_json(const ExperimentResult& result);

/// Writes <dir>/<arm>.csv for every arm plus <dir>/summary.json; returns the paths.
std::vector<std::filesystem::path> write_reports(const std::filesystem::path& dir, const ExperimentResult& result);

}  // namespace dcsft::lab
