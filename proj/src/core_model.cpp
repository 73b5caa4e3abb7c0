#include "dcsft/core_model.hpp"

#include <algorithm>

namespace dcsft {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Classification: return "classification";
    case TaskKind::Grounding: return "grounding";
    case TaskKind::Generic: return "generic";
  }
  return "generic";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "classification") return TaskKind::Classification;
  if (text == "grounding") return TaskKind::Grounding;
  if (text == "generic") return TaskKind::Generic;
  throw InvalidInput("unknown task kind '" + std::string(text) + "'");
}

bool BBox::valid() const {
  return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2;
}

BBox make_bbox(double x1, double y1, double x2, double y2) {
  BBox b{x1, y1, x2, y2};
  if (!b.valid()) throw InvalidInput("invalid bbox: need 0 <= x1 < x2 and 0 <= y1 < y2");
  return b;
}

bool gold_matches_kind(const GoldAnswer& gold, TaskKind kind) {
  switch (kind) {
    case TaskKind::Classification: return std::holds_alternative<LabelAnswer>(gold);
    case TaskKind::Grounding: return std::holds_alternative<BoxAnswer>(gold);
    case TaskKind::Generic: return std::holds_alternative<TextAnswer>(gold);
  }
  return false;
}

void SamplingParams::validate() const {
  if (g < 2) throw InvalidInput("g must be >= 2");
  if (!(temperature > 0)) throw InvalidInput("temperature must be > 0");
  if (!(top_p > 0 && top_p <= 1)) throw InvalidInput("top_p must be in (0, 1]");
}

std::string_view to_string(DifficultyLabel label) {
  switch (label) {
    case DifficultyLabel::Easy: return "easy";
    case DifficultyLabel::Medium: return "medium";
    case DifficultyLabel::Hard: return "hard";
  }
  return "hard";
}

DifficultyLabel parse_difficulty(std::string_view text) {
  if (text == "easy") return DifficultyLabel::Easy;
  if (text == "medium") return DifficultyLabel::Medium;
  if (text == "hard") return DifficultyLabel::Hard;
  throw InvalidInput("unknown difficulty '" + std::string(text) + "'");
}

DifficultyLabel classify_difficulty(std::span<const double> rewards) {
  if (rewards.empty()) throw InvalidInput("classify_difficulty: empty reward list");
  std::size_t correct = 0;
  for (double r : rewards) {
    if (r == 1.0) {
      ++correct;
    } else if (r != 0.0) {
      throw InvalidInput("classify_difficulty: rewards must be 0 or 1");
    }
  }
  if (correct == rewards.size()) return DifficultyLabel::Easy;
  if (correct == 0) return DifficultyLabel::Hard;
  return DifficultyLabel::Medium;
}

VerifiedResponseSet VerifiedResponseSet::from_rewards(std::string sample_id,
                                                      std::vector<std::string> responses,
                                                      std::vector<double> rewards,
                                                      SamplingParams params) {
  if (responses.size() != rewards.size())
    throw InvalidInput("response/reward count mismatch for sample " + sample_id);
  VerifiedResponseSet out;
  out.difficulty = classify_difficulty(rewards);
  out.sample_id = std::move(sample_id);
  out.responses = std::move(responses);
  out.rewards = std::move(rewards);
  out.params = std::move(params);
  return out;
}

}  // namespace dcsft
