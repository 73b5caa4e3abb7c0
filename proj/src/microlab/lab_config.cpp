#include <charconv>
#include <fstream>
#include <set>

#include "dcsft/microlab/experiment.hpp"

namespace dcsft::lab {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw InvalidInput(where + " must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw InvalidInput("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

std::string rho_label(double rho) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, rho);
  return std::string(buf, end);
}

std::string_view trainer_name(TrainerKind k) { return k == TrainerKind::Sft ? "sft" : "grpo"; }

TrainerKind parse_trainer(const std::string& s) {
  if (s == "sft") return TrainerKind::Sft;
  if (s == "grpo") return TrainerKind::Grpo;
  throw InvalidInput("unknown trainer \"" + s + "\" (expected sft or grpo)");
}

ArmSpec arm_from_json(const json& j) {
  reject_unknown(j, {"name", "trainer", "plan", "balance", "lr"}, "arm");
  ArmSpec arm;
  arm.trainer = parse_trainer(j.value("trainer", std::string("sft")));
  arm.plan = CurationPlan::parse(j.value("plan", std::string("full")));
  const auto balance = j.value("balance", std::string("none"));
  if (balance == "min") {
    arm.plan.balance = Balance::MinSubset;
  } else if (balance != "none") {
    throw InvalidInput("balance must be none or min");
  }
  if (j.contains("lr")) arm.lr = j.at("lr").get<double>();
  arm.name = j.value("name", std::string(trainer_name(arm.trainer)) + "-" + arm.plan.name());
  return arm;
}

json arm_to_json(const ArmSpec& arm) {
  json j = {{"name", arm.name},
            {"trainer", trainer_name(arm.trainer)},
            {"plan", arm.plan.name()},
            {"balance", arm.plan.balance == Balance::MinSubset ? "min" : "none"}};
  if (arm.lr) j["lr"] = *arm.lr;
  return j;
}

ArmSpec make_arm(std::string name, TrainerKind trainer, CurationPlan plan) {
  ArmSpec a;
  a.name = std::move(name);
  a.trainer = trainer;
  a.plan = plan;
  return a;
}

}  // namespace

void LabConfig::validate() const {
  task.validate();
  grpo.validate();
  if (!(warmup.fraction >= 0 && warmup.fraction < 1)) throw InvalidInput("warm-up fraction must be in [0, 1)");
  if (warmup.steps < 0) throw InvalidInput("warm-up steps must be >= 0");
  if (!(temperature > 0)) throw InvalidInput("temperature must be > 0");
  if (bucket_g < 2) throw InvalidInput("bucket_g must be >= 2");
  if (steps < 0) throw InvalidInput("steps must be >= 0");
  if (!(lr > 0) || !(grpo_lr > 0) || !(warmup.lr > 0)) throw InvalidInput("learning rates must be > 0");
  if (n_seeds < 1) throw InvalidInput("n_seeds must be >= 1");
  if (eval_every < 1) throw InvalidInput("eval_every must be >= 1");
  if (smoothing_window < 1) throw InvalidInput("smoothing_window must be >= 1");
  if (norm_window < 1) throw InvalidInput("norm_window must be >= 1");
  std::set<std::string> names;
  for (const auto& a : arms) {
    a.plan.validate();
    if (a.lr && !(*a.lr > 0)) throw InvalidInput("arm " + a.name + ": lr must be > 0");
    if (!names.insert(a.name).second) throw InvalidInput("duplicate arm name " + a.name);
  }
  for (double r : sweep_rhos) {
    if (!(r >= 0 && r < 1)) throw InvalidInput("sweep ratios must be in [0, 1)");
  }
}

std::vector<ArmSpec> default_arms() {
  return {
      make_arm("sft-easy", TrainerKind::Sft, CurationPlan::bucket_only(DifficultyLabel::Easy, Balance::MinSubset)),
      make_arm("sft-medium", TrainerKind::Sft, CurationPlan::bucket_only(DifficultyLabel::Medium, Balance::MinSubset)),
      make_arm("sft-hard", TrainerKind::Sft, CurationPlan::bucket_only(DifficultyLabel::Hard, Balance::MinSubset)),
      make_arm("sft-full", TrainerKind::Sft, CurationPlan::of(PlanVariant::Full)),
      make_arm("sft-m", TrainerKind::Sft, CurationPlan::of(PlanVariant::SftM)),
      make_arm("sft-em", TrainerKind::Sft, CurationPlan::of(PlanVariant::SftEM)),
      make_arm("grpo-full", TrainerKind::Grpo, CurationPlan::of(PlanVariant::Full)),
  };
}

std::vector<ArmSpec> sweep_arms(const LabConfig& config) {
  std::vector<ArmSpec> out;
  for (double rho : config.sweep_rhos)
    out.push_back(make_arm("hard-ratio-" + rho_label(rho), TrainerKind::Sft, CurationPlan::hard_ratio(rho)));
  return out;
}

LabConfig lab_config_from_json(const json& j) {
  reject_unknown(j, {"task", "warmup", "temperature", "bucket_g", "steps", "lr", "grpo_lr", "grpo", "n_seeds", "seed",
                     "eval_every", "smoothing_window", "norm_window", "arms", "sweep"},
                 "lab config");
  LabConfig c;
  try {
    if (auto it = j.find("task"); it != j.end()) {
      const json& t = *it;
      reject_unknown(t, {"d", "classes", "n_train", "n_id_test", "n_ood_test", "proto_scale", "noise_sigma",
                         "ood_rotation_angle", "label_noise_rate", "ambiguous_rate", "pull", "nuisance_cue"},
                     "task");
      read(t, "d", c.task.d);
      read(t, "classes", c.task.classes);
      read(t, "n_train", c.task.n_train);
      read(t, "n_id_test", c.task.n_id_test);
      read(t, "n_ood_test", c.task.n_ood_test);
      read(t, "proto_scale", c.task.proto_scale);
      read(t, "noise_sigma", c.task.noise_sigma);
      read(t, "ood_rotation_angle", c.task.ood_rotation_angle);
      read(t, "label_noise_rate", c.task.label_noise_rate);
      read(t, "ambiguous_rate", c.task.ambiguous_rate);
      read(t, "nuisance_cue", c.task.nuisance_cue);
      if (auto p = t.find("pull"); p != t.end()) {
        const auto pull = p->get<std::vector<double>>();
        if (pull.size() != 2) throw InvalidInput("task.pull must be [lo, hi]");
        c.task.pull_lo = pull[0];
        c.task.pull_hi = pull[1];
      }
    }
    if (auto it = j.find("warmup"); it != j.end()) {
      reject_unknown(*it, {"fraction", "steps", "lr"}, "warmup");
      read(*it, "fraction", c.warmup.fraction);
      read(*it, "steps", c.warmup.steps);
      read(*it, "lr", c.warmup.lr);
    }
    if (auto it = j.find("grpo"); it != j.end()) {
      reject_unknown(*it, {"g", "epsilon", "beta", "delta", "std"}, "grpo");
      read(*it, "g", c.grpo.g);
      read(*it, "epsilon", c.grpo.epsilon);
      read(*it, "beta", c.grpo.beta);
      read(*it, "delta", c.grpo.delta);
      const auto std_kind = it->value("std", std::string("population"));
      if (std_kind == "sample") {
        c.grpo.std_kind = StdKind::Sample;
      } else if (std_kind != "population") {
        throw InvalidInput("grpo.std must be population or sample");
      }
    }
    read(j, "temperature", c.temperature);
    read(j, "bucket_g", c.bucket_g);
    read(j, "steps", c.steps);
    read(j, "lr", c.lr);
    read(j, "grpo_lr", c.grpo_lr);
    read(j, "n_seeds", c.n_seeds);
    read(j, "seed", c.seed);
    read(j, "eval_every", c.eval_every);
    read(j, "smoothing_window", c.smoothing_window);
    read(j, "norm_window", c.norm_window);
    if (auto it = j.find("arms"); it != j.end()) {
      for (const auto& a : *it) c.arms.push_back(arm_from_json(a));
    }
    read(j, "sweep", c.sweep_rhos);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("lab config: ") + e.what());
  }
  c.validate();
  return c;
}

json lab_config_to_json(const LabConfig& c) {
  json arms = json::array();
  for (const auto& a : c.arms) arms.push_back(arm_to_json(a));
  return {
      {"task",
       {{"d", c.task.d},
        {"classes", c.task.classes},
        {"n_train", c.task.n_train},
        {"n_id_test", c.task.n_id_test},
        {"n_ood_test", c.task.n_ood_test},
        {"proto_scale", c.task.proto_scale},
        {"noise_sigma", c.task.noise_sigma},
        {"ood_rotation_angle", c.task.ood_rotation_angle},
        {"label_noise_rate", c.task.label_noise_rate},
        {"ambiguous_rate", c.task.ambiguous_rate},
        {"pull", {c.task.pull_lo, c.task.pull_hi}},
        {"nuisance_cue", c.task.nuisance_cue}}},
      {"warmup", {{"fraction", c.warmup.fraction}, {"steps", c.warmup.steps}, {"lr", c.warmup.lr}}},
      {"temperature", c.temperature},
      {"bucket_g", c.bucket_g},
      {"steps", c.steps},
      {"lr", c.lr},
      {"grpo_lr", c.grpo_lr},
      {"grpo",
       {{"g", c.grpo.g},
        {"epsilon", c.grpo.epsilon},
        {"beta", c.grpo.beta},
        {"delta", c.grpo.delta},
        {"std", c.grpo.std_kind == StdKind::Sample ? "sample" : "population"}}},
      {"n_seeds", c.n_seeds},
      {"seed", c.seed},
      {"eval_every", c.eval_every},
      {"smoothing_window", c.smoothing_window},
      {"norm_window", c.norm_window},
      {"arms", arms},
      {"sweep", c.sweep_rhos},
  };
}

LabConfig load_lab_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return lab_config_from_json(j);
}

}  // namespace dcsft::lab
