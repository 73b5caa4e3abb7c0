#include "dcsft/curator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "dcsft/digest.hpp"
#include "dcsft/rng.hpp"
#include "dcsft/sampler.hpp"

namespace dcsft {

using json = nlohmann::json;

namespace {

std::string format_number(double v) {
  if (std::isfinite(v) && v == std::round(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<std::string> keep_indices(const std::vector<std::string>& items,
                                      std::vector<std::size_t> picked) {
  std::sort(picked.begin(), picked.end());
  std::vector<std::string> out;
  out.reserve(picked.size());
  for (auto i : picked) out.push_back(items[i]);
  return out;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plan

CurationPlan CurationPlan::bucket_only(DifficultyLabel label, Balance balance) {
  CurationPlan p;
  p.variant = PlanVariant::BucketOnly;
  p.bucket = label;
  p.balance = balance;
  return p;
}

CurationPlan CurationPlan::hard_ratio(double rho) {
  CurationPlan p;
  p.variant = PlanVariant::HardRatio;
  p.rho = rho;
  return p;
}

CurationPlan CurationPlan::of(PlanVariant variant) {
  CurationPlan p;
  p.variant = variant;
  return p;
}

std::string CurationPlan::name() const {
  switch (variant) {
    case PlanVariant::BucketOnly: return "bucket:" + std::string(to_string(bucket));
    case PlanVariant::SftM: return "sft-m";
    case PlanVariant::SftEM: return "sft-em";
    case PlanVariant::Full: return "full";
    case PlanVariant::HardRatio: return "hard-ratio:" + format_number(rho);
  }
  return "full";
}

CurationPlan CurationPlan::parse(std::string_view text) {
  if (text == "sft-m") return of(PlanVariant::SftM);
  if (text == "sft-em") return of(PlanVariant::SftEM);
  if (text == "full") return of(PlanVariant::Full);
  if (text.starts_with("bucket:")) return bucket_only(parse_difficulty(text.substr(7)));
  if (text.starts_with("hard-ratio:")) {
    const auto num = text.substr(11);
    double rho = 0;
    auto [end, ec] = std::from_chars(num.data(), num.data() + num.size(), rho);
    if (ec != std::errc() || end != num.data() + num.size())
      throw InvalidInput("bad hard ratio in plan '" + std::string(text) + "'");
    auto p = hard_ratio(rho);
    p.validate();
    return p;
  }
  throw InvalidInput("unknown plan '" + std::string(text) + "'");
}

void CurationPlan::validate() const {
  if (variant == PlanVariant::HardRatio) {
    if (!(rho >= 0 && rho <= 1)) throw InvalidInput("hard ratio must be in [0, 1]");
    if (target_size) throw InvalidInput("target size cannot be combined with a hard-ratio plan");
  }
}

// ---------------------------------------------------------------------------
// Buckets

std::vector<std::string>& Buckets::operator[](DifficultyLabel l) {
  switch (l) {
    case DifficultyLabel::Easy: return easy;
    case DifficultyLabel::Medium: return medium;
    case DifficultyLabel::Hard: return hard;
  }
  return hard;
}

const std::vector<std::string>& Buckets::operator[](DifficultyLabel l) const {
  return const_cast<Buckets&>(*this)[l];
}

Buckets bucket(std::span<const VerifiedResponseSet> verified) {
  Buckets b;
  for (const auto& v : verified) b[v.difficulty].push_back(v.sample_id);
  return b;
}

Buckets balance_to_smallest(const Buckets& buckets, std::uint64_t seed) {
  if (buckets.total() == 0) throw InvalidInput("balance_to_smallest: all buckets are empty");
  const std::size_t m =
      std::min({buckets.easy.size(), buckets.medium.size(), buckets.hard.size()});
  Buckets out;
  for (auto label : {DifficultyLabel::Easy, DifficultyLabel::Medium, DifficultyLabel::Hard}) {
    const auto& src = buckets[label];
    Rng rng(derive_seed(seed, to_string(label)));
    out[label] = keep_indices(src, rng.sample_without_replacement(src.size(), m));
  }
  return out;
}

std::optional<std::size_t> hard_count_for_ratio(std::size_t easy_medium, double rho) {
  if (!(rho >= 0 && rho <= 1)) throw InvalidInput("hard ratio must be in [0, 1]");
  if (rho == 0) return 0;
  if (rho == 1) return easy_medium == 0 ? std::optional<std::size_t>(0) : std::nullopt;
  // k / (n + k) is increasing in k, so the best integer sits next to the real root.
  const double n = static_cast<double>(easy_medium);
  const double real = rho * n / (1 - rho);
  const auto lo = static_cast<std::size_t>(std::floor(real));
  const auto hi = lo + 1;
  auto err = [&](std::size_t k) {
    const double kk = static_cast<double>(k);
    return std::abs(kk / (n + kk) - rho);
  };
  if (n == 0) return lo == 0 ? hi : lo;  // any k > 0 gives ratio 1
  return err(hi) < err(lo) ? hi : lo;
}

// ---------------------------------------------------------------------------
// Curation

std::optional<double> CurationManifest::achieved_hard_ratio() const {
  if (emitted_count == 0) return std::nullopt;
  return static_cast<double>(draws.hard.size()) / static_cast<double>(emitted_count);
}

json CurationManifest::to_json() const {
  json plan_j = {{"name", plan.name()},
                 {"balance", plan.balance == Balance::MinSubset ? "min" : "none"},
                 {"seed", plan.seed}};
  if (plan.variant == PlanVariant::HardRatio) {
    plan_j["rho"] = plan.rho;
    plan_j["mixing"] = "easy+medium kept whole; hard samples added";
  }
  if (plan.target_size) plan_j["target_size"] = *plan.target_size;
  json j = {{"tool_version", tool_version},
            {"input_digest", input_digest},
            {"plan", plan_j},
            {"bucket_counts", {{"easy", easy_count}, {"medium", medium_count}, {"hard", hard_count}}},
            {"emitted_count", emitted_count},
            {"draws", {{"easy", draws.easy}, {"medium", draws.medium}, {"hard", draws.hard}}}};
  const auto ratio = achieved_hard_ratio();
  j["achieved_hard_ratio"] = ratio ? json(*ratio) : json(nullptr);
  return j;
}

std::string verified_digest(std::span<const VerifiedResponseSet> verified) {
  json material = json::array();
  for (const auto& v : verified) material.push_back({v.sample_id, v.rewards});
  return sha256_hex(material.dump());
}

CuratedSet build_curated_set(std::span<const VerifiedResponseSet> verified,
                             const CurationPlan& plan) {
  plan.validate();
  const Buckets all = bucket(verified);
  Buckets pool = all;
  if (plan.balance == Balance::MinSubset && all.total() > 0) {
    pool = balance_to_smallest(all, derive_seed(plan.seed, "balance"));
  }

  Buckets drawn;
  switch (plan.variant) {
    case PlanVariant::BucketOnly:
      drawn[plan.bucket] = pool[plan.bucket];
      break;
    case PlanVariant::SftM:
      drawn.medium = pool.medium;
      break;
    case PlanVariant::SftEM:
      drawn.easy = pool.easy;
      drawn.medium = pool.medium;
      break;
    case PlanVariant::Full:
      drawn = pool;
      break;
    case PlanVariant::HardRatio: {
      drawn.easy = pool.easy;
      drawn.medium = pool.medium;
      const std::size_t em = pool.easy.size() + pool.medium.size();
      const std::size_t available = pool.hard.size();
      const auto k = hard_count_for_ratio(em, plan.rho);
      if (!k || *k > available) {
        const double max_rho =
            em + available == 0 ? 0.0 : static_cast<double>(available) / static_cast<double>(em + available);
        throw InfeasiblePlan("hard ratio " + format_number(plan.rho) + " needs " +
                                 (k ? std::to_string(*k) : std::string("unbounded")) +
                                 " hard samples but only " + std::to_string(available) +
                                 " are available (max achievable ratio " + format_number(max_rho) + ")",
                             max_rho);
      }
      Rng rng(derive_seed(plan.seed, "hard-draw"));
      drawn.hard = keep_indices(pool.hard, rng.sample_without_replacement(available, *k));
      break;
    }
  }

  if (plan.target_size) {
    const std::size_t have = drawn.total();
    if (*plan.target_size > have)
      throw InvalidInput("target size " + std::to_string(*plan.target_size) + " exceeds the " +
                         std::to_string(have) + " available samples");
    std::vector<std::pair<DifficultyLabel, std::string>> flat;
    for (auto label : {DifficultyLabel::Easy, DifficultyLabel::Medium, DifficultyLabel::Hard})
      for (const auto& id : drawn[label]) flat.emplace_back(label, id);
    Rng rng(derive_seed(plan.seed, "target"));
    auto picked = rng.sample_without_replacement(flat.size(), *plan.target_size);
    std::sort(picked.begin(), picked.end());
    Buckets kept;
    for (auto i : picked) kept[flat[i].first].push_back(flat[i].second);
    drawn = std::move(kept);
  }

  CuratedSet out;
  for (auto label : {DifficultyLabel::Easy, DifficultyLabel::Medium, DifficultyLabel::Hard})
    out.ids.insert(out.ids.end(), drawn[label].begin(), drawn[label].end());
  Rng order(derive_seed(plan.seed, "order"));
  order.shuffle(out.ids);

  auto& m = out.manifest;
  m.input_digest = verified_digest(verified);
  m.plan = plan;
  m.easy_count = all.easy.size();
  m.medium_count = all.medium.size();
  m.hard_count = all.hard.size();
  m.emitted_count = out.ids.size();
  m.draws = Buckets{sorted(drawn.easy), sorted(drawn.medium), sorted(drawn.hard)};
  m.tool_version = std::string(kToolVersion);
  return out;
}

// ---------------------------------------------------------------------------
// Emission

std::string render_answer(const Sample& sample, const EmitOptions& opts) {
  switch (sample.task_kind) {
    case TaskKind::Classification: return std::get<LabelAnswer>(sample.gold).label;
    case TaskKind::Generic: return std::get<TextAnswer>(sample.gold).answer;
    case TaskKind::Grounding: {
      BBox b = std::get<BoxAnswer>(sample.gold).box;
      if (auto size = image_size_of(sample)) b = rescale_box(b, *size, opts.max_pixels);
      return "[" + format_number(b.x1) + ", " + format_number(b.y1) + ", " + format_number(b.x2) +
             ", " + format_number(b.y2) + "]";
    }
  }
  throw InvalidInput("sample " + sample.id + ": unknown task kind");
}

json sft_record(const Sample& sample, const EmitOptions& opts) {
  const std::string user = sample.image_ref ? "<image>" + sample.prompt : sample.prompt;
  json j = {{"messages", json::array({{{"role", "user"}, {"content", user}},
                                      {{"role", "assistant"}, {"content", render_answer(sample, opts)}}})}};
  if (sample.image_ref) j["images"] = json::array({*sample.image_ref});
  return j;
}

void emit_sft_dataset(std::span<const std::string> ids, std::span<const Sample> samples,
                      const std::filesystem::path& path, const EmitOptions& opts) {
  std::unordered_map<std::string_view, const Sample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);
  std::vector<std::string> lines;
  lines.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidInput("curated id \"" + id + "\" has no sample");
    lines.push_back(sft_record(*it->second, opts).dump());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_manifest(const std::filesystem::path& path, const CurationManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest.to_json().dump(2) << '\n';
}

}  // namespace dcsft
