#include <fstream>

#include "dcsft/digest.hpp"
#include "dcsft/sampler.hpp"

namespace dcsft {

namespace {

json params_to_json(const SamplingParams& p) {
  json j = {{"g", p.g}, {"temperature", p.temperature}, {"top_p", p.top_p}};
  j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
  return j;
}

SamplingParams params_from_json(const json& j, std::string model) {
  SamplingParams p;
  p.g = j.at("g").get<int>();
  p.temperature = j.at("temperature").get<double>();
  p.top_p = j.at("top_p").get<double>();
  if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::int64_t>();
  p.model_id = std::move(model);
  return p;
}

}  // namespace

std::string make_cache_key(const Sample& sample, const SamplingParams& params) {
  // nlohmann::json objects serialize with sorted keys, so the dump is canonical.
  json material = {
      {"model", params.model_id},
      {"sample_id", sample.id},
      {"prompt", sample.prompt},
      {"image", sample.image_ref ? json(*sample.image_ref) : json(nullptr)},
      {"temperature", params.temperature},
      {"top_p", params.top_p},
      {"g", params.g},
      {"seed", params.seed ? json(*params.seed) : json(nullptr)},
  };
  return sha256_hex(material.dump());
}

json cache_entry_to_json(const CacheEntry& e) {
  return {{"key", e.key},
          {"sample_id", e.sample_id},
          {"model", e.model},
          {"params", params_to_json(e.params)},
          {"responses", e.responses}};
}

CacheEntry cache_entry_from_json(const json& j) {
  CacheEntry e;
  e.key = j.at("key").get<std::string>();
  e.sample_id = j.at("sample_id").get<std::string>();
  e.model = j.at("model").get<std::string>();
  e.params = params_from_json(j.at("params"), e.model);
  e.responses = j.at("responses").get<std::vector<std::string>>();
  return e;
}

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      CacheEntry e = cache_entry_from_json(json::parse(line));
      entries_[e.key] = std::move(e.responses);
    } catch (const json::exception&) {
      ++skipped_lines_;
    }
  }
}

std::optional<std::vector<std::string>> ResponseCache::lookup(const std::string& key) const {
  std::shared_lock lock(map_mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::append(const CacheEntry& entry) {
  if (path_) {
    std::lock_guard file_lock(file_mutex_);
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to cache " + path_->string());
    out << cache_entry_to_json(entry).dump() << '\n';
    out.flush();
  }
  std::unique_lock lock(map_mutex_);
  entries_[entry.key] = entry.responses;
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(map_mutex_);
  return entries_.size();
}

}  // namespace dcsft
