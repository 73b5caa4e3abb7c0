#include "dcsft/verifiers.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>

namespace dcsft {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_trailing_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

void skip_spaces(std::string_view s, std::size_t& pos) {
  while (pos < s.size() && is_space(s[pos])) ++pos;
}

std::optional<double> read_number(std::string_view s, std::size_t& pos) {
  skip_spaces(s, pos);
  if (pos >= s.size()) return std::nullopt;
  std::size_t start = pos;
  if (s[pos] == '+') ++start, ++pos;
  double value = 0;
  auto [end, ec] = std::from_chars(s.data() + start, s.data() + s.size(), value);
  if (ec != std::errc() || !std::isfinite(value)) return std::nullopt;
  pos = static_cast<std::size_t>(end - s.data());
  return value;
}

// Parses "[n, n, n, n]" starting at an opening bracket.
std::optional<std::array<double, 4>> read_quad(std::string_view s, std::size_t pos) {
  ++pos;
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    auto v = read_number(s, pos);
    if (!v) return std::nullopt;
    out[i] = *v;
    skip_spaces(s, pos);
    if (pos >= s.size()) return std::nullopt;
    const char expected = i == 3 ? ']' : ',';
    if (s[pos] != expected) return std::nullopt;
    ++pos;
  }
  return out;
}

}  // namespace

std::string_view extract_answer(std::string_view response) {
  static constexpr std::string_view kMarker = "answer:";
  if (response.size() < kMarker.size()) return response;
  for (std::size_t i = response.size() - kMarker.size() + 1; i-- > 0;) {
    bool match = true;
    for (std::size_t j = 0; j < kMarker.size(); ++j) {
      if (lower(response[i + j]) != kMarker[j]) {
        match = false;
        break;
      }
    }
    if (match) return response.substr(i + kMarker.size());
  }
  return response;
}

std::string normalize_answer(std::string_view text) {
  text = trim(text);
  while (!text.empty() && is_trailing_punct(text.back())) text.remove_suffix(1);
  text = trim(text);
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), lower);
  return out;
}

bool verify_classification(std::string_view response, std::string_view gold_label) {
  return normalize_answer(extract_answer(response)) == normalize_answer(gold_label);
}

bool verify_generic(std::string_view response, std::string_view gold_answer) {
  return verify_classification(response, gold_answer);
}

std::optional<BBox> parse_bbox(std::string_view response) {
  for (std::size_t pos = response.find('['); pos != std::string_view::npos;
       pos = response.find('[', pos + 1)) {
    auto quad = read_quad(response, pos);
    if (!quad) continue;
    auto [a, b, c, d] = *quad;
    BBox box{std::max(0.0, std::min(a, c)), std::max(0.0, std::min(b, d)),
             std::max(0.0, std::max(a, c)), std::max(0.0, std::max(b, d))};
    if (!box.valid()) return std::nullopt;
    return box;
  }
  return std::nullopt;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool verify_grounding(std::string_view response, const BBox& gold, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw InvalidInput("IoU threshold must be in (0, 1]");
  auto predicted = parse_bbox(response);
  return predicted && iou(*predicted, gold) >= threshold;
}

namespace {

double rescale_factor(ImageSize original, std::int64_t max_pixels) {
  if (original.width <= 0 || original.height <= 0) throw InvalidInput("image size must be positive");
  if (max_pixels <= 0) throw InvalidInput("max_pixels must be positive");
  const auto side = static_cast<double>(
      static_cast<std::int64_t>(std::floor(std::sqrt(static_cast<double>(max_pixels)))));
  const auto area = static_cast<std::int64_t>(original.width) * original.height;
  if (area <= max_pixels && original.width <= side && original.height <= side) return 1.0;
  return std::min({side / original.width, side / original.height, 1.0});
}

}  // namespace

ImageSize rescaled_size(ImageSize original, std::int64_t max_pixels) {
  const double s = rescale_factor(original, max_pixels);
  if (s == 1.0) return original;
  return {static_cast<int>(std::lround(original.width * s)),
          static_cast<int>(std::lround(original.height * s))};
}

BBox rescale_box(const BBox& box, ImageSize original, std::int64_t max_pixels) {
  const double s = rescale_factor(original, max_pixels);
  if (!box.valid() || box.x2 > original.width || box.y2 > original.height)
    throw InvalidInput("box lies outside the image");
  if (s == 1.0) return box;
  const ImageSize scaled = rescaled_size(original, max_pixels);
  const double w = scaled.width;
  const double h = scaled.height;
  auto scale = [s](double v, double hi) { return std::clamp(std::round(v * s), 0.0, hi); };
  BBox out{scale(box.x1, w), scale(box.y1, h), scale(box.x2, w), scale(box.y2, h)};
  // Rounding can collapse sub-pixel boxes; keep at least one pixel.
  if (out.x2 <= out.x1) {
    out.x2 = std::min(out.x1 + 1, w);
    out.x1 = out.x2 - 1;
  }
  if (out.y2 <= out.y1) {
    out.y2 = std::min(out.y1 + 1, h);
    out.y1 = out.y2 - 1;
  }
  return out;
}

}  // namespace dcsft
