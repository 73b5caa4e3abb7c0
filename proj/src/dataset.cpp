#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "dcsft/sampler.hpp"

namespace dcsft {

namespace {

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw InvalidInput(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw InvalidInput(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

GoldAnswer gold_from_json(const json& g) {
  if (!g.is_object() || g.size() != 1)
    throw InvalidInput("\"gold\" must be an object with exactly one of label, box, answer");
  if (g.contains("label")) return LabelAnswer{require_string(g, "label")};
  if (g.contains("answer")) return TextAnswer{require_string(g, "answer")};
  if (g.contains("box")) {
    const json& b = g.at("box");
    if (!b.is_array() || b.size() != 4)
      throw InvalidInput("\"gold.box\" must be [x1, y1, x2, y2]");
    for (const auto& v : b) {
      if (!v.is_number()) throw InvalidInput("\"gold.box\" entries must be numbers");
    }
    return BoxAnswer{make_bbox(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                               b[3].get<double>())};
  }
  throw InvalidInput("\"gold\" must hold one of label, box, answer");
}

json gold_to_json(const GoldAnswer& gold) {
  return std::visit(
      [](const auto& g) -> json {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, LabelAnswer>) {
          return {{"label", g.label}};
        } else if constexpr (std::is_same_v<T, BoxAnswer>) {
          return {{"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}};
        } else {
          return {{"answer", g.answer}};
        }
      },
      gold);
}

}  // namespace

Sample sample_from_json(const json& j) {
  if (!j.is_object()) throw InvalidInput("record must be a JSON object");
  Sample s;
  s.id = require_string(j, "id");
  if (s.id.empty()) throw InvalidInput("\"id\" must be non-empty");
  s.task_kind = parse_task_kind(require_string(j, "task"));
  s.prompt = require_string(j, "prompt");
  if (auto it = j.find("image"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw InvalidInput("\"image\" must be a string");
    s.image_ref = it->get<std::string>();
  }
  s.gold = gold_from_json(require(j, "gold"));
  if (!gold_matches_kind(s.gold, s.task_kind))
    throw InvalidInput("gold answer does not match task \"" + std::string(to_string(s.task_kind)) +
                       "\"");
  if (auto it = j.find("meta"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw InvalidInput("\"meta\" must be an object");
    for (const auto& [k, v] : it->items()) {
      s.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  return s;
}

json sample_to_json(const Sample& s) {
  json j = {{"id", s.id}, {"task", std::string(to_string(s.task_kind))},
            {"prompt", s.prompt}, {"gold", gold_to_json(s.gold)}};
  if (s.image_ref) j["image"] = *s.image_ref;
  if (!s.meta.empty()) j["meta"] = s.meta;
  return j;
}

std::vector<Sample> parse_dataset(std::istream& in) {
  std::vector<Sample> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s;
    try {
      s = sample_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw DatasetError(line_no, std::string("invalid JSON: ") + e.what());
    } catch (const InvalidInput& e) {
      throw DatasetError(line_no, e.what());
    }
    if (!seen.insert(s.id).second) throw DatasetError(line_no, "duplicate id \"" + s.id + "\"");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  return parse_dataset(in);
}

std::optional<ImageSize> image_size_of(const Sample& s) {
  auto read = [&](const char* key) -> std::optional<int> {
    auto it = s.meta.find(key);
    if (it == s.meta.end()) return std::nullopt;
    int v = 0;
    const auto& text = it->second;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || v <= 0)
      throw InvalidInput("sample " + s.id + ": meta." + key + " must be a positive integer");
    return v;
  };
  auto w = read("width");
  auto h = read("height");
  if (!w || !h) return std::nullopt;
  return ImageSize{*w, *h};
}

}  // namespace dcsft
