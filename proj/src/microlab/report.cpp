#include <cmath>
#include <fstream>

#include "dcsft/microlab/experiment.hpp"

namespace dcsft::lab {

using json = nlohmann::json;

namespace {

std::string cell(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json stats_of(const std::vector<double>& v) {
  std::vector<double> finite;
  for (double x : v) {
    if (!std::isnan(x)) finite.push_back(x);
  }
  if (finite.empty()) return {{"mean", nullptr}, {"std", nullptr}};
  return {{"mean", mean(finite)}, {"std", stddev(finite)}};
}

}  // namespace

double sign_test_p(std::size_t wins, std::size_t n) {
  if (wins > n) throw InvalidInput("sign_test_p: wins exceed trials");
  // Sum of C(n, k) / 2^n for k >= wins, accumulated in log space.
  double p = 0;
  for (std::size_t k = wins; k <= n; ++k) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
                         std::lgamma(static_cast<double>(n - k) + 1);
    p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_arm_csv(const std::filesystem::path& path, const ArmReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "seed,step,id_acc,ood_acc,grad_norm,grad_norm_smoothed,norm_easy,norm_medium,norm_hard\n";
  for (const auto& run : report.runs) {
    for (const auto& s : run.steps) {
      out << run.seed_index << ',' << s.step << ',' << cell(s.id_acc) << ',' << cell(s.ood_acc) << ','
          << cell(s.grad_norm) << ',' << cell(s.grad_norm_smoothed) << ',' << cell(s.bucket_norms[0]) << ','
          << cell(s.bucket_norms[1]) << ',' << cell(s.bucket_norms[2]) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json summary_json(const ExperimentResult& result) {
  const int window = result.config.norm_window;
  json arms = json::array();
  for (const auto& rep : result.arms) {
    std::vector<double> id, ood, norm, norm_b[3], train, rho, warm_id, warm_ood;
    std::vector<double> sizes[3];
    for (const auto& r : rep.runs) {
      id.push_back(r.final_id);
      ood.push_back(r.final_ood);
      warm_id.push_back(r.warm_id);
      warm_ood.push_back(r.warm_ood);
      norm.push_back(r.mean_grad_norm(window));
      for (int b = 0; b < 3; ++b) {
        norm_b[b].push_back(r.mean_grad_norm(window, b));
        sizes[b].push_back(static_cast<double>(r.bucket_sizes[static_cast<std::size_t>(b)]));
      }
      train.push_back(static_cast<double>(r.train_counts[0] + r.train_counts[1] + r.train_counts[2]));
      rho.push_back(r.achieved_hard_ratio.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    arms.push_back({
        {"name", rep.arm.name},
        {"trainer", rep.arm.trainer == TrainerKind::Sft ? "sft" : "grpo"},
        {"plan", rep.arm.plan.name()},
        {"balance", rep.arm.plan.balance == Balance::MinSubset ? "min" : "none"},
        {"lr", rep.lr},
        {"seeds", rep.runs.size()},
        {"final_id_acc", stats_of(id)},
        {"final_ood_acc", stats_of(ood)},
        {"warm_id_acc", stats_of(warm_id)},
        {"warm_ood_acc", stats_of(warm_ood)},
        {"grad_norm_first_steps", stats_of(norm)},
        {"bucket_grad_norm_first_steps",
         {{"easy", stats_of(norm_b[0])}, {"medium", stats_of(norm_b[1])}, {"hard", stats_of(norm_b[2])}}},
        {"bucket_sizes", {{"easy", stats_of(sizes[0])}, {"medium", stats_of(sizes[1])}, {"hard", stats_of(sizes[2])}}},
        {"train_size", stats_of(train)},
        {"achieved_hard_ratio", stats_of(rho)},
    });
  }
  return {{"tool_version", std::string(kToolVersion)},
          {"norm_window", window},
          {"config", lab_config_to_json(result.config)},
          {"arms", arms}};
}

std::vector<std::filesystem::path> write_reports(const std::filesystem::path& dir, const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& rep : result.arms) {
    auto p = dir / (rep.arm.name + ".csv");
    write_arm_csv(p, rep);
    paths.push_back(std::move(p));
  }
  auto summary = dir / "summary.json";
  std::ofstream out(summary, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + summary.string());
  out << summary_json(result).dump(2) << '\n';
  paths.push_back(std::move(summary));
  return paths;
}

}  // namespace dcsft::lab
