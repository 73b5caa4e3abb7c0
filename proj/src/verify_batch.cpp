#include <exception>
#include <fstream>
#include <unordered_map>

#include "dcsft/sampler.hpp"

namespace dcsft {

double score_response(const Sample& sample, std::string_view response, const VerifyOptions& opts) {
  switch (sample.task_kind) {
    case TaskKind::Classification:
      return reward_of(verify_classification(response, std::get<LabelAnswer>(sample.gold).label));
    case TaskKind::Generic:
      return reward_of(verify_generic(response, std::get<TextAnswer>(sample.gold).answer));
    case TaskKind::Grounding: {
      BBox gold = std::get<BoxAnswer>(sample.gold).box;
      if (auto size = image_size_of(sample)) gold = rescale_box(gold, *size, opts.max_pixels);
      return reward_of(verify_grounding(response, gold, opts.iou_threshold));
    }
  }
  throw InvalidInput("sample " + sample.id + ": unknown task kind");
}

std::vector<VerifiedResponseSet> verify_batch(std::span<const ResponseSet> sets,
                                              std::span<const Sample> samples,
                                              const SamplingParams& params,
                                              const VerifyOptions& opts) {
  std::unordered_map<std::string_view, const Sample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);

  std::vector<const Sample*> matched(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto it = by_id.find(sets[i].sample_id);
    if (it == by_id.end())
      throw InvalidInput("response set for unknown sample \"" + sets[i].sample_id + "\"");
    matched[i] = it->second;
  }

  std::vector<VerifiedResponseSet> out(sets.size());
  std::vector<std::exception_ptr> errors(sets.size());
  const auto count = static_cast<std::ptrdiff_t>(sets.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      const auto& set = sets[static_cast<std::size_t>(i)];
      const Sample& sample = *matched[static_cast<std::size_t>(i)];
      std::vector<double> rewards;
      rewards.reserve(set.responses.size());
      for (const auto& r : set.responses) rewards.push_back(score_response(sample, r, opts));
      out[static_cast<std::size_t>(i)] =
          VerifiedResponseSet::from_rewards(set.sample_id, set.responses, std::move(rewards), params);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

json verified_to_json(const VerifiedResponseSet& v) {
  json params = {{"g", v.params.g}, {"temperature", v.params.temperature}, {"top_p", v.params.top_p}};
  params["seed"] = v.params.seed ? json(*v.params.seed) : json(nullptr);
  return {{"sample_id", v.sample_id},
          {"model", v.params.model_id},
          {"params", params},
          {"responses", v.responses},
          {"rewards", v.rewards},
          {"difficulty", std::string(to_string(v.difficulty))}};
}

VerifiedResponseSet verified_from_json(const json& j) {
  SamplingParams p;
  const json& pj = j.at("params");
  p.g = pj.at("g").get<int>();
  p.temperature = pj.at("temperature").get<double>();
  p.top_p = pj.at("top_p").get<double>();
  if (pj.contains("seed") && !pj.at("seed").is_null()) p.seed = pj.at("seed").get<std::int64_t>();
  p.model_id = j.value("model", "");
  auto v = VerifiedResponseSet::from_rewards(j.at("sample_id").get<std::string>(),
                                             j.at("responses").get<std::vector<std::string>>(),
                                             j.at("rewards").get<std::vector<double>>(), p);
  if (auto it = j.find("difficulty"); it != j.end()) {
    if (parse_difficulty(it->get<std::string>()) != v.difficulty)
      throw InvalidInput("sample " + v.sample_id + ": stored difficulty disagrees with rewards");
  }
  return v;
}

void write_verified_jsonl(const std::filesystem::path& path,
                          std::span<const VerifiedResponseSet> sets) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& v : sets) out << verified_to_json(v).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<VerifiedResponseSet> read_verified_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<VerifiedResponseSet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(verified_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DatasetError(line_no, e.what());
    } catch (const InvalidInput& e) {
      throw DatasetError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace dcsft
