#pragma once

// Task-specific correctness judges. All functions are pure.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dcsft/core_model.hpp"

namespace dcsft {

inline constexpr std::int64_t kDefaultMaxPixels = 802816;  // 896 x 896
inline constexpr double kDefaultIouThreshold = 0.5;

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// Substring after the last case-insensitive "answer:", or the whole text.
std::string_view extract_answer(std::string_view response);

/// Trim, drop trailing `.,;:!?`, lowercase.
std::string normalize_answer(std::string_view text);

bool verify_classification(std::string_view response, std::string_view gold_label);

/// Exact match under the same normalization as classification.
bool verify_generic(std::string_view response, std::string_view gold_answer);

/// First "[a, b, c, d]" group of four numbers anywhere in the text (this also
/// covers a JSON object holding a four-element array). Coordinates are
/// reordered so x1 < x2 and y1 < y2; negative values are clamped to 0.
/// Returns nullopt when no group is found or the box is degenerate.
std::optional<BBox> parse_bbox(std::string_view response);

double iou(const BBox& a, const BBox& b);

bool verify_grounding(std::string_view response, const BBox& gold,
                      double threshold = kDefaultIouThreshold);

/// Maps a box from the original image into the resized image the model sees.
/// The per-side cap is floor(sqrt(max_pixels)), i.e. 896 for the default.
/// Throws InvalidInput when the box leaves the image or the size is not positive.
BBox rescale_box(const BBox& box, ImageSize original, std::int64_t max_pixels = kDefaultMaxPixels);

/// Size of the resized image under the same rule as rescale_box.
ImageSize rescaled_size(ImageSize original, std::int64_t max_pixels = kDefaultMaxPixels);

}  // namespace dcsft
