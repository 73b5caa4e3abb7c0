// Prints the directional statistics used to pick the default lab config:
// hard vs medium OOD, the hard-ratio sweep, bucket gradient norms and
// SFT-M vs GRPO vs full SFT, all over the same seeds.

#include <algorithm>
#include <fstream>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "dcsft/microlab/experiment.hpp"

using namespace dcsft::lab;

namespace {

std::size_t wins(const std::vector<double>& lo, const std::vector<double>& hi) {
  std::size_t w = 0;
  for (std::size_t i = 0; i < lo.size(); ++i) w += lo[i] < hi[i];
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micro-lab calibration report", "dcsft-calibrate"};
  std::string config_path;
  std::string set_json;
  app.add_option("--config", config_path)->check(CLI::ExistingFile);
  app.add_option("--set", set_json, "JSON object merged over the config");
  CLI11_PARSE(app, argc, argv);

  nlohmann::json j = nlohmann::json::object();
  if (!config_path.empty()) j = nlohmann::json::parse(std::ifstream(config_path));
  if (!set_json.empty()) j.merge_patch(nlohmann::json::parse(set_json));
  LabConfig cfg = lab_config_from_json(j);

  // Bucket sizes alone are cheap; check the sweep is feasible first.
  LabConfig probe = cfg;
  probe.steps = 0;
  probe.arms = {default_arms()[3]};
  const auto sizes = run_experiment(probe);
  std::vector<double> hard_frac;
  for (const auto& run : sizes.arms[0].runs)
    hard_frac.push_back(static_cast<double>(run.bucket_sizes[2]) /
                        static_cast<double>(run.bucket_sizes[0] + run.bucket_sizes[1] + run.bucket_sizes[2]));
  std::printf("hard fraction mean %.4f min %.4f\n", mean(hard_frac),
              *std::min_element(hard_frac.begin(), hard_frac.end()));
  std::sort(hard_frac.begin(), hard_frac.end());
  for (double f : hard_frac) std::printf(" %.3f", f);
  std::printf("\n");
  std::fflush(stdout);

  cfg.arms = default_arms();
  for (auto& a : sweep_arms(cfg)) cfg.arms.push_back(a);

  ExperimentResult r;
  try {
    r = run_experiment(cfg);
  } catch (const dcsft::InfeasiblePlan& e) {
    std::cout << "infeasible: " << e.what() << '\n';
    return 1;
  }
  const auto n = static_cast<std::size_t>(cfg.n_seeds);
  for (const auto& a : r.arms) {
    std::printf("%-22s id %.4f ood %.4f\n", a.arm.name.c_str(), mean(a.final_id()), mean(a.final_ood()));
  }
  const auto hard = r.arm("sft-hard").final_ood(), med = r.arm("sft-medium").final_ood();
  const double id_gap = std::abs(mean(r.arm("sft-hard").final_id()) - mean(r.arm("sft-medium").final_id()));
  const auto w6 = wins(hard, med);
  std::printf("C6 hard<medium OOD %zu/%zu p=%.4g id_gap=%.4f\n", w6, n, sign_test_p(w6, n), id_gap);

  const auto r0 = r.arm("hard-ratio-0").final_ood();
  const auto r05 = r.arm("hard-ratio-0.05").final_ood();
  const auto r25 = r.arm("hard-ratio-0.25").final_ood();
  const auto w7 = wins(r25, r0);
  std::printf("C7 rho.25<rho0 %zu/%zu p=%.4g drop05=%.5f drop25=%.5f\n", w7, n, sign_test_p(w7, n),
              mean(r0) - mean(r05), mean(r0) - mean(r25));

  std::vector<double> nh, ne;
  for (const auto& run : r.arm("sft-hard").runs) nh.push_back(run.mean_grad_norm(cfg.norm_window));
  for (const auto& run : r.arm("sft-easy").runs) ne.push_back(run.mean_grad_norm(cfg.norm_window));
  std::printf("C8 norm hard %.4f easy %.4f\n", mean(nh), mean(ne));

  const double m = mean(r.arm("sft-m").final_ood()), g = mean(r.arm("grpo-full").final_ood()),
               f = mean(r.arm("sft-full").final_ood());
  std::printf("C9 sft-m %.4f grpo %.4f full %.4f |m-g|=%.4f\n", m, g, f, std::abs(m - g));

  return 0;
}
