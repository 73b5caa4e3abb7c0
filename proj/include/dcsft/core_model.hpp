#pragma once

// Domain types shared by the curation pipeline and the micro-lab.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dcsft {

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Raised when a caller violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { Classification, Grounding, Generic };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

/// Axis-aligned box in pixel coordinates, origin top-left.
struct BBox {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws InvalidInput unless x1 < x2, y1 < y2 and all coordinates are >= 0.
BBox make_bbox(double x1, double y1, double x2, double y2);

struct LabelAnswer {
  std::string label;
  friend bool operator==(const LabelAnswer&, const LabelAnswer&) = default;
};
struct BoxAnswer {
  BBox box;
  friend bool operator==(const BoxAnswer&, const BoxAnswer&) = default;
};
struct TextAnswer {
  std::string answer;
  friend bool operator==(const TextAnswer&, const TextAnswer&) = default;
};

using GoldAnswer = std::variant<LabelAnswer, BoxAnswer, TextAnswer>;

/// True when the populated GoldAnswer variant is the one `kind` requires.
bool gold_matches_kind(const GoldAnswer& gold, TaskKind kind);

struct Sample {
  std::string id;
  TaskKind task_kind = TaskKind::Generic;
  std::string prompt;
  std::optional<std::string> image_ref;
  GoldAnswer gold;
  std::map<std::string, std::string> meta;
};

struct SamplingParams {
  int g = 8;
  double temperature = 0.9;
  double top_p = 1.0;
  std::optional<std::int64_t> seed;
  std::string model_id;

  /// Throws InvalidInput on g < 2, temperature <= 0 or top_p outside (0, 1].
  void validate() const;
};

enum class DifficultyLabel { Easy, Medium, Hard };

std::string_view to_string(DifficultyLabel label);
DifficultyLabel parse_difficulty(std::string_view text);

/// Easy when every reward is 1, Hard when every reward is 0, Medium otherwise.
/// Throws InvalidInput on an empty list or a reward outside {0, 1}.
DifficultyLabel classify_difficulty(std::span<const double> rewards);

/// Binary rule-based reward.
constexpr double reward_of(bool correct) { return correct ? 1.0 : 0.0; }

struct VerifiedResponseSet {
  std::string sample_id;
  std::vector<std::string> responses;
  std::vector<double> rewards;
  DifficultyLabel difficulty = DifficultyLabel::Hard;
  SamplingParams params;

  /// Builds the set and derives `difficulty` from the rewards.
  static VerifiedResponseSet from_rewards(std::string sample_id,
                                          std::vector<std::string> responses,
                                          std::vector<double> rewards,
                                          SamplingParams params);
};

}  // namespace dcsft
