#pragma once

// Difficulty buckets and curated training-set construction (medium-only,
// easy+medium, hard-ratio mixtures) plus SFT dataset emission.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcsft/core_model.hpp"
#include "dcsft/verifiers.hpp"

namespace dcsft {

enum class PlanVariant { BucketOnly, SftM, SftEM, HardRatio, Full };
enum class Balance { None, MinSubset };

struct CurationPlan {
  PlanVariant variant = PlanVariant::SftEM;
  DifficultyLabel bucket = DifficultyLabel::Medium;  // BucketOnly
  double rho = 0.0;                                  // HardRatio
  Balance balance = Balance::None;
  std::uint64_t seed = 0;
  std::optional<std::size_t> target_size;

  static CurationPlan bucket_only(DifficultyLabel label, Balance balance = Balance::None);
  static CurationPlan hard_ratio(double rho);
  static CurationPlan of(PlanVariant variant);

  /// "bucket:medium", "sft-m", "sft-em", "full", "hard-ratio:0.05".
  std::string name() const;
  /// Inverse of name(); balance, seed and target size keep their defaults.
  static CurationPlan parse(std::string_view text);

  void validate() const;
};

/// Sample ids per difficulty, each in input order.
struct Buckets {
  std::vector<std::string> easy;
  std::vector<std::string> medium;
  std::vector<std::string> hard;

  std::vector<std::string>& operator[](DifficultyLabel l);
  const std::vector<std::string>& operator[](DifficultyLabel l) const;
  std::size_t total() const { return easy.size() + medium.size() + hard.size(); }
};

Buckets bucket(std::span<const VerifiedResponseSet> verified);

/// Uniformly subsamples every bucket, without replacement, to the smallest
/// bucket's size. Survivors keep input order. Throws InvalidInput when all
/// buckets are empty.
Buckets balance_to_smallest(const Buckets& buckets, std::uint64_t seed);

/// Number of hard samples to add to `easy_medium` others so hard/total is as
/// close to rho as possible (ties go to the smaller count). Returns nullopt
/// for rho = 1 with a non-empty easy+medium set.
std::optional<std::size_t> hard_count_for_ratio(std::size_t easy_medium, double rho);

class InfeasiblePlan : public std::runtime_error {
 public:
  InfeasiblePlan(const std::string& what, double max_achievable_rho)
      : std::runtime_error(what), max_rho_(max_achievable_rho) {}
  double max_achievable_rho() const { return max_rho_; }

 private:
  double max_rho_;
};

struct CurationManifest {
  std::string input_digest;
  CurationPlan plan;
  std::size_t easy_count = 0;
  std::size_t medium_count = 0;
  std::size_t hard_count = 0;
  std::size_t emitted_count = 0;
  Buckets draws;  // sorted ids drawn from each bucket
  std::string tool_version;

  std::optional<double> achieved_hard_ratio() const;
  nlohmann::json to_json() const;
};

struct CuratedSet {
  std::vector<std::string> ids;  // shuffled by the plan seed
  CurationManifest manifest;
};

/// Digest of the verified inputs (ids and rewards, in order).
std::string verified_digest(std::span<const VerifiedResponseSet> verified);

CuratedSet build_curated_set(std::span<const VerifiedResponseSet> verified, const CurationPlan& plan);

struct EmitOptions {
  std::int64_t max_pixels = kDefaultMaxPixels;
};

/// Assistant turn for a sample. Grounding boxes are rescaled into the
/// model's image space when the original size is known.
std::string render_answer(const Sample& sample, const EmitOptions& opts = {});

/// {"messages": [user, assistant], "images": [...]?}; the user turn carries
/// an "<image>" tag when the sample has an image.
nlohmann::json sft_record(const Sample& sample, const EmitOptions& opts = {});

/// Writes one record per id, in the given order. Throws InvalidInput for an
/// id with no sample and std::runtime_error when the path is not writable.
void emit_sft_dataset(std::span<const std::string> ids, std::span<const Sample> samples,
                      const std::filesystem::path& path, const EmitOptions& opts = {});

void write_manifest(const std::filesystem::path& path, const CurationManifest& manifest);

}  // namespace dcsft
