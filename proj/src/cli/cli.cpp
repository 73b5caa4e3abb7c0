#include "dcsft/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "dcsft/core_model.hpp"
#include "dcsft/curator.hpp"
#include "dcsft/grpo.hpp"
#include "dcsft/microlab/experiment.hpp"
#include "dcsft/sampler.hpp"

namespace dcsft {

using json = nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Histogram {
  std::size_t easy = 0, medium = 0, hard = 0;
  std::size_t total() const { return easy + medium + hard; }
};

Histogram histogram_of(std::span<const VerifiedResponseSet> sets) {
  Histogram h;
  for (const auto& v : sets) {
    switch (v.difficulty) {
      case DifficultyLabel::Easy: ++h.easy; break;
      case DifficultyLabel::Medium: ++h.medium; break;
      case DifficultyLabel::Hard: ++h.hard; break;
    }
  }
  return h;
}

void print_histogram(std::ostream& out, const Histogram& h) {
  auto line = [&](const char* name, std::size_t n) {
    const double pct = h.total() == 0 ? 0.0 : 100.0 * static_cast<double>(n) / static_cast<double>(h.total());
    out << std::left << std::setw(7) << name << std::right << std::setw(8) << n << "  " << std::fixed
        << std::setprecision(1) << pct << "%\n";
    out.unsetf(std::ios::floatfield);
  };
  line("easy", h.easy);
  line("medium", h.medium);
  line("hard", h.hard);
  out << std::left << std::setw(7) << "total" << std::right << std::setw(8) << h.total() << '\n';
}

// ---------------------------------------------------------------------------
// Flag bundles

struct SampleFlags {
  std::string data;
  std::string base_url = "http://localhost:8000";
  std::string model;
  int g = 8;
  double temperature = 0.9;
  double top_p = 1.0;
  std::optional<std::int64_t> seed;
  std::string cache = "responses.cache.jsonl";
  std::string out = "verified.jsonl";
  int max_in_flight = 8;
  double timeout = 60;
  int retries = 3;
  double backoff = 0.5;
  std::string mode = "auto";
  double iou = kDefaultIouThreshold;
  std::int64_t max_pixels = kDefaultMaxPixels;
  std::string api_key_env = kDefaultApiKeyEnv;
};

struct CurateFlags {
  std::string responses;
  std::string data;
  std::string variant = "sft-em";
  std::string bucket;
  std::optional<double> rho;
  std::string balance = "none";
  std::optional<std::size_t> target_size;
  std::uint64_t seed = 0;
  std::string out = "curated.jsonl";
  std::string manifest;
  std::int64_t max_pixels = kDefaultMaxPixels;
};

struct StatsFlags {
  std::string responses;
  std::size_t examples = 3;
  bool as_json = false;
};

struct AdvantageFlags {
  std::string rewards;
  double delta = 1e-4;
  double epsilon = 0.2;
  double beta = 0.04;
  std::string std_kind = "population";
};

struct LabFlags {
  std::string config;
  bool sweep = false;
  std::string out = "lab_out";
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::optional<int> steps;
  bool serial = false;
};

// ---------------------------------------------------------------------------
// Handlers

int cmd_sample(const SampleFlags& f, RunRecord& rec, std::ostream& out, std::ostream& err) {
  SamplingParams params;
  params.g = f.g;
  params.temperature = f.temperature;
  params.top_p = f.top_p;
  params.seed = f.seed;
  params.model_id = f.model;
  try {
    params.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }

  EndpointConfig endpoint;
  endpoint.base_url = f.base_url;
  endpoint.max_in_flight = f.max_in_flight;
  endpoint.request_timeout = f.timeout;
  endpoint.max_retries = f.retries;
  endpoint.backoff_base = f.backoff;
  endpoint.mode = f.mode == "batched"    ? CompletionMode::Batched
                  : f.mode == "per-seed" ? CompletionMode::PerSeed
                                         : CompletionMode::Auto;
  if (const char* key = std::getenv(f.api_key_env.c_str()); key != nullptr && *key != '\0') endpoint.api_key = key;
  try {
    endpoint.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }

  rec.config = {{"data", f.data},           {"base_url", f.base_url},     {"model", f.model},
                {"g", f.g},                 {"temperature", f.temperature}, {"top_p", f.top_p},
                {"seed", f.seed ? json(*f.seed) : json(nullptr)},
                {"cache", f.cache},         {"out", f.out},               {"max_in_flight", f.max_in_flight},
                {"timeout", f.timeout},     {"retries", f.retries},       {"backoff", f.backoff},
                {"mode", f.mode},           {"iou", f.iou},               {"max_pixels", f.max_pixels},
                {"api_key_env", f.api_key_env}};
  rec.input_digests[f.data] = file_digest(f.data);

  const auto samples = load_dataset(f.data);
  ResponseCache cache{std::filesystem::path(f.cache)};
  CollectionResult collected;
  try {
    collected = collect_responses(samples, params, endpoint, cache);
  } catch (const AuthError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  VerifyOptions vopts;
  vopts.iou_threshold = f.iou;
  vopts.max_pixels = f.max_pixels;
  const auto verified = verify_batch(collected.sets, samples, params, vopts);
  write_verified_jsonl(f.out, verified);
  rec.outputs = {f.out, f.cache};

  out << "collected " << collected.sets.size() << " of " << samples.size() << " samples (" << collected.cache_hits
      << " cache hits, " << collected.network_requests << " network requests)\n";
  print_histogram(out, histogram_of(verified));
  if (!collected.failures.empty()) {
    err << collected.failures.size() << " sample(s) failed:\n";
    for (const auto& fail : collected.failures) {
      err << "  " << fail.sample_id << ": " << fail.message;
      if (fail.last_status != 0) err << " (HTTP " << fail.last_status << ')';
      err << '\n';
    }
    return kExitFailure;
  }
  return kExitOk;
}

CurationPlan plan_from_flags(const CurateFlags& f) {
  CurationPlan plan;
  if (f.variant == "sft-m") {
    plan = CurationPlan::of(PlanVariant::SftM);
  } else if (f.variant == "sft-em") {
    plan = CurationPlan::of(PlanVariant::SftEM);
  } else if (f.variant == "full") {
    plan = CurationPlan::of(PlanVariant::Full);
  } else if (f.variant == "bucket") {
    if (f.bucket.empty()) throw UsageError("--variant bucket needs --bucket easy|medium|hard");
    plan = CurationPlan::bucket_only(parse_difficulty(f.bucket));
  } else if (f.variant == "hard-ratio") {
    if (!f.rho) throw UsageError("--variant hard-ratio needs --rho");
    plan = CurationPlan::hard_ratio(*f.rho);
  } else {
    throw UsageError("unknown variant " + f.variant);
  }
  if (!f.bucket.empty() && f.variant != "bucket") throw UsageError("--bucket only applies to --variant bucket");
  if (f.rho && f.variant != "hard-ratio") throw UsageError("--rho only applies to --variant hard-ratio");
  plan.balance = f.balance == "min" ? Balance::MinSubset : Balance::None;
  plan.seed = f.seed;
  plan.target_size = f.target_size;
  try {
    plan.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  return plan;
}

int cmd_curate(const CurateFlags& f, RunRecord& rec, std::ostream& out, std::ostream& err) {
  const CurationPlan plan = plan_from_flags(f);
  std::filesystem::path manifest_path = f.manifest;
  if (manifest_path.empty()) manifest_path = std::filesystem::path(f.out).replace_extension(".manifest.json");

  rec.config = {{"responses", f.responses}, {"data", f.data},       {"variant", f.variant},
                {"plan", plan.name()},      {"balance", f.balance}, {"seed", f.seed},
                {"out", f.out},             {"manifest", manifest_path.string()},
                {"max_pixels", f.max_pixels}};
  if (f.target_size) rec.config["target_size"] = *f.target_size;
  rec.input_digests[f.responses] = file_digest(f.responses);
  rec.input_digests[f.data] = file_digest(f.data);

  const auto verified = read_verified_jsonl(f.responses);
  const auto samples = load_dataset(f.data);
  CuratedSet curated;
  try {
    curated = build_curated_set(verified, plan);
  } catch (const InfeasiblePlan& e) {
    err << "error: infeasible plan: " << e.what() << '\n';
    return kExitFailure;
  }
  EmitOptions eopts;
  eopts.max_pixels = f.max_pixels;
  emit_sft_dataset(curated.ids, samples, f.out, eopts);
  write_manifest(manifest_path, curated.manifest);
  rec.outputs = {f.out, manifest_path.string()};

  print_histogram(out, histogram_of(verified));
  const auto& m = curated.manifest;
  out << "plan " << plan.name() << ": emitted " << m.emitted_count << " (easy " << m.draws.easy.size() << ", medium "
      << m.draws.medium.size() << ", hard " << m.draws.hard.size() << ")\n";
  if (plan.variant == PlanVariant::HardRatio) {
    const auto achieved = m.achieved_hard_ratio();
    out << "achieved hard ratio " << (achieved ? fmt(*achieved) : std::string("n/a")) << " (target " << fmt(plan.rho)
        << ")\n";
  }
  out << "wrote " << f.out << " and " << manifest_path.string() << '\n';
  return kExitOk;
}

int cmd_stats(const StatsFlags& f, RunRecord& rec, std::ostream& out) {
  rec.config = {{"responses", f.responses}, {"examples", f.examples}, {"json", f.as_json}};
  rec.input_digests[f.responses] = file_digest(f.responses);
  const auto verified = read_verified_jsonl(f.responses);
  const auto h = histogram_of(verified);
  const Buckets b = bucket(verified);
  auto head = [&](const std::vector<std::string>& ids) {
    return std::vector<std::string>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(f.examples, ids.size())));
  };
  if (f.as_json) {
    out << json{{"total", h.total()},
                {"counts", {{"easy", h.easy}, {"medium", h.medium}, {"hard", h.hard}}},
                {"examples", {{"easy", head(b.easy)}, {"medium", head(b.medium)}, {"hard", head(b.hard)}}}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  print_histogram(out, h);
  if (f.examples > 0 && h.total() > 0) {
    out << "examples:\n";
    for (auto label : {DifficultyLabel::Easy, DifficultyLabel::Medium, DifficultyLabel::Hard}) {
      const auto ids = head(b[label]);
      if (ids.empty()) continue;
      out << "  " << to_string(label) << ':';
      for (const auto& id : ids) out << ' ' << id;
      out << '\n';
    }
  }
  return kExitOk;
}

int cmd_advantage(const AdvantageFlags& f, RunRecord& rec, std::ostream& out) {
  std::vector<double> rewards;
  std::stringstream ss(f.rewards);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw UsageError("--rewards: cannot parse '" + item + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos) throw UsageError("--rewards: cannot parse '" + item + "'");
    rewards.push_back(v);
  }
  if (rewards.size() < 2) throw UsageError("--rewards needs at least 2 values (group size g >= 2)");
  StdKind kind = StdKind::Population;
  if (f.std_kind == "sample") kind = StdKind::Sample;
  rec.config = {{"rewards", rewards}, {"delta", f.delta}, {"std", f.std_kind}};

  RewardGroup group;
  try {
    group = RewardGroup::compute(rewards, f.delta, kind);
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  out << "g " << rewards.size() << '\n';
  out << "mean " << fmt(group.mean) << '\n';
  out << "std " << fmt(group.std) << '\n';
  out << "advantages";
  for (double a : group.advantages) out << ' ' << fmt(a);
  out << '\n';
  out << "zero_update " << (is_zero_update_group(rewards) ? "true" : "false") << '\n';
  return kExitOk;
}

int cmd_lab(const LabFlags& f, RunRecord& rec, std::ostream& out) {
  lab::LabConfig config;
  if (!f.config.empty()) {
    rec.input_digests[f.config] = file_digest(f.config);
    config = lab::load_lab_config(f.config);
  }
  if (f.seed) config.seed = *f.seed;
  if (f.seeds) config.n_seeds = *f.seeds;
  if (f.steps) config.steps = *f.steps;
  if (f.sweep) config.arms = lab::sweep_arms(config);
  try {
    config.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }

  lab::RunOptions opts;
  if (f.serial) {
    opts.backend = lab::Backend::Serial;
    opts.parallel_seeds = false;
  }
  const auto result = lab::run_experiment(config, opts);
  rec.config = lab::lab_config_to_json(result.config);
  rec.config["sweep_mode"] = f.sweep;
  rec.config["out"] = f.out;
  const auto paths = lab::write_reports(f.out, result);
  for (const auto& p : paths) rec.outputs.push_back(p.string());

  out << std::left << std::setw(22) << "arm" << std::right << std::setw(10) << "train" << std::setw(10) << "id"
      << std::setw(10) << "ood" << std::setw(12) << "grad_norm" << '\n';
  for (const auto& arm : result.arms) {
    std::vector<double> train, norm;
    for (const auto& r : arm.runs) {
      train.push_back(static_cast<double>(r.train_counts[0] + r.train_counts[1] + r.train_counts[2]));
      norm.push_back(r.mean_grad_norm(config.norm_window));
    }
    const auto id = arm.final_id();
    const auto ood = arm.final_ood();
    out << std::left << std::setw(22) << arm.arm.name << std::right << std::fixed << std::setprecision(1)
        << std::setw(10) << lab::mean(train) << std::setprecision(4) << std::setw(10) << lab::mean(id)
        << std::setw(10) << lab::mean(ood) << std::setw(12) << lab::mean(norm) << '\n';
    out.unsetf(std::ios::floatfield);
  }
  out << "reports in " << f.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Difficulty-aware data curation and a GRPO/SFT micro-lab.", "dcsft"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  std::string run_log = "dcsft-runs.jsonl";
  app.add_option("--run-log", run_log, "Append-only run log (one JSON line per run)")->capture_default_str();

  SampleFlags sf;
  auto* sample = app.add_subcommand("sample", "Collect g responses per sample and verify them");
  sample->add_option("--data", sf.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  sample->add_option("--base-url", sf.base_url, "OpenAI-compatible endpoint")->capture_default_str();
  sample->add_option("--model", sf.model, "Model name sent to the endpoint");
  sample->add_option("--g", sf.g, "Responses per sample")->capture_default_str();
  sample->add_option("--temperature", sf.temperature)->capture_default_str();
  sample->add_option("--top-p", sf.top_p)->capture_default_str();
  sample->add_option("--seed", sf.seed, "Sampling seed; per-seed requests use seed + k");
  sample->add_option("--cache", sf.cache, "Response cache JSONL")->capture_default_str();
  sample->add_option("--out", sf.out, "Verified responses JSONL")->capture_default_str();
  sample->add_option("--max-in-flight", sf.max_in_flight)->capture_default_str()->check(CLI::PositiveNumber);
  sample->add_option("--timeout", sf.timeout, "Request timeout in seconds")->capture_default_str();
  sample->add_option("--retries", sf.retries)->capture_default_str()->check(CLI::NonNegativeNumber);
  sample->add_option("--backoff", sf.backoff, "Base backoff in seconds")->capture_default_str();
  sample->add_option("--mode", sf.mode)->capture_default_str()->check(CLI::IsMember({"auto", "batched", "per-seed"}));
  sample->add_option("--iou", sf.iou, "Grounding IoU threshold")->capture_default_str();
  sample->add_option("--max-pixels", sf.max_pixels)->capture_default_str();
  sample->add_option("--api-key-env", sf.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();

  CurateFlags cf;
  auto* curate = app.add_subcommand("curate", "Build a difficulty-curated SFT dataset");
  curate->add_option("--responses", cf.responses, "Verified responses JSONL")->required()->check(CLI::ExistingFile);
  curate->add_option("--data", cf.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  curate->add_option("--variant", cf.variant)
      ->capture_default_str()
      ->check(CLI::IsMember({"sft-m", "sft-em", "full", "bucket", "hard-ratio"}));
  curate->add_option("--bucket", cf.bucket)->check(CLI::IsMember({"easy", "medium", "hard"}));
  curate->add_option("--rho", cf.rho, "Hard ratio in [0, 1]");
  curate->add_option("--balance", cf.balance)->capture_default_str()->check(CLI::IsMember({"none", "min"}));
  curate->add_option("--target-size", cf.target_size);
  curate->add_option("--seed", cf.seed)->capture_default_str();
  curate->add_option("--out", cf.out)->capture_default_str();
  curate->add_option("--manifest", cf.manifest, "Manifest path (default: <out> with .manifest.json)");
  curate->add_option("--max-pixels", cf.max_pixels)->capture_default_str();

  StatsFlags stf;
  auto* stats = app.add_subcommand("stats", "Difficulty histogram of verified responses");
  stats->add_option("--responses", stf.responses)->required()->check(CLI::ExistingFile);
  stats->add_option("--examples", stf.examples, "Example ids per bucket")->capture_default_str();
  stats->add_flag("--json", stf.as_json);

  AdvantageFlags af;
  auto* advantage = app.add_subcommand("advantage", "Group-normalized advantages for a reward vector");
  advantage->add_option("--rewards", af.rewards, "Comma-separated rewards")->required();
  advantage->add_option("--delta", af.delta)->capture_default_str();
  advantage->add_option("--std", af.std_kind)->capture_default_str()->check(CLI::IsMember({"population", "sample"}));

  LabFlags lf;
  auto* labcmd = app.add_subcommand("lab", "Run micro-lab experiments");
  labcmd->add_option("--config", lf.config, "Lab config JSON")->check(CLI::ExistingFile);
  labcmd->add_flag("--sweep", lf.sweep, "Run the hard-ratio sweep instead of the configured arms");
  labcmd->add_option("--out", lf.out, "Report directory")->capture_default_str();
  labcmd->add_option("--seed", lf.seed);
  labcmd->add_option("--seeds", lf.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  labcmd->add_option("--steps", lf.steps)->check(CLI::NonNegativeNumber);
  labcmd->add_flag("--serial", lf.serial, "Serial kernels and seeds");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunRecord rec;
  rec.started_at = utc_now();
  rec.tool_version = std::string(kToolVersion);
  const auto t0 = std::chrono::steady_clock::now();
  int code = kExitOk;
  try {
    if (sample->parsed()) {
      rec.subcommand = "sample";
      code = cmd_sample(sf, rec, out, err);
    } else if (curate->parsed()) {
      rec.subcommand = "curate";
      code = cmd_curate(cf, rec, out, err);
    } else if (stats->parsed()) {
      rec.subcommand = "stats";
      code = cmd_stats(stf, rec, out);
    } else if (advantage->parsed()) {
      rec.subcommand = "advantage";
      code = cmd_advantage(af, rec, out);
    } else {
      rec.subcommand = "lab";
      code = cmd_lab(lf, rec, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kExitFailure;
  }
  rec.exit_code = code;
  rec.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    append_run_record(run_log, rec);
  } catch (const std::exception& e) {
    err << "warning: " << e.what() << '\n';
  }
  return code;
}

}  // namespace dcsft
