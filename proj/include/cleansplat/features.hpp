#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cleansplat/image.hpp"

namespace cleansplat {

inline constexpr int kDefaultPatchSize = 14;

/// Patch-grid features of one image, row-major patch order.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int grid_w, int grid_h, int dim, int patch_size);
  FeatureMap(int grid_w, int grid_h, int dim, int patch_size, std::vector<float> values);

  int grid_w() const { return grid_w_; }
  int grid_h() const { return grid_h_; }
  int dim() const { return dim_; }
  int patch_size() const { return patch_size_; }
  std::size_t patch_count() const { return static_cast<std::size_t>(grid_w_) * grid_h_; }

  std::span<const float> patch(std::size_t i) const {
    return {values_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<float> patch(std::size_t i) { return {values_.data() + i * dim_, static_cast<std::size_t>(dim_)}; }
  std::span<const float> values() const { return values_; }

  bool operator==(const FeatureMap&) const = default;

 private:
  int grid_w_ = 0;
  int grid_h_ = 0;
  int dim_ = 0;
  int patch_size_ = kDefaultPatchSize;
  std::vector<float> values_;
};

inline int grid_extent(int pixels, int patch_size) { return (pixels + patch_size - 1) / patch_size; }

/// Per-pixel instance ids for one view (0 = background).
struct IdMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> ids;

  std::uint16_t at(int x, int y) const { return ids[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const IdMap&) const = default;
};

/// Instance metadata the oracle needs to turn ids into semantic classes.
struct SceneSemantics {
  std::uint64_t seed = 0;
  std::map<std::uint16_t, std::uint16_t> instance_class;  // missing instance -> class = id
  /// (frame, instance) -> class, for content whose appearance class changes over time.
  std::map<std::pair<std::size_t, std::uint16_t>, std::uint16_t> frame_overrides;

  std::uint16_t class_of(std::uint16_t instance, std::optional<std::size_t> frame) const;
};

struct OracleParams {
  int dim = 32;
  int patch_size = kDefaultPatchSize;
  double noise_sigma = 0.05;
};

/// Fixed unit-variance embedding for a semantic class, drawn from the scene seed.
std::vector<float> class_embedding(std::uint64_t scene_seed, std::uint16_t cls, int dim);

/// Synthetic stand-in for a foundation-model feature extractor: each patch
/// gets its majority class's embedding (ties to the smallest class id) plus
/// Gaussian jitter drawn from `noise_seed`.
FeatureMap oracle_features(const Image& image, const IdMap& ids, const SceneSemantics& semantics,
                           std::optional<std::size_t> frame, std::uint64_t noise_seed,
                           const OracleParams& params = {});

enum class FeatureFileErrorKind { MissingFile, BadMagic, UnsupportedVersion, DimensionOverflow, TruncatedPayload };

class FeatureFileError : public std::runtime_error {
 public:
  FeatureFileError(FeatureFileErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  FeatureFileErrorKind kind() const { return kind_; }

 private:
  FeatureFileErrorKind kind_;
};

/// "TFEA", u32 version (1), u32 grid_w, grid_h, dim, patch_size, then float32
/// values; little-endian.
void write_features(const FeatureMap& map, const std::filesystem::path& path);
FeatureMap file_features(const std::filesystem::path& path);

/// Feature source for the transient mask predictor.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual FeatureMap reference(std::size_t frame, const Image& image) const = 0;
  /// Features of a render from frame `frame`'s camera; `ids` is the rendered
  /// instance map when the caller has one. nullopt when unsupported.
  virtual std::optional<FeatureMap> rendered(std::size_t frame, const Image& render,
                                             const IdMap* ids) const = 0;
};

class OracleFeatureProvider : public FeatureProvider {
 public:
  OracleFeatureProvider(std::vector<IdMap> frame_ids, SceneSemantics semantics, OracleParams params,
                        std::uint64_t noise_seed);

  FeatureMap reference(std::size_t frame, const Image& image) const override;
  std::optional<FeatureMap> rendered(std::size_t frame, const Image& render,
                                     const IdMap* ids) const override;

 private:
  std::vector<IdMap> frame_ids_;
  SceneSemantics semantics_;
  OracleParams params_;
  std::uint64_t noise_seed_;
};

/// Reads `<dir>/<frame>.tfea`; renders are not covered by exported files.
class FileFeatureProvider : public FeatureProvider {
 public:
  explicit FileFeatureProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

  FeatureMap reference(std::size_t frame, const Image& image) const override;
  std::optional<FeatureMap> rendered(std::size_t, const Image&, const IdMap*) const override {
    return std::nullopt;
  }

 private:
  std::filesystem::path dir_;
};

}  // namespace cleansplat
