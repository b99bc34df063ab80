#include "cleansplat/features.hpp"

#include <fstream>
#include <limits>
#include <random>
#include <unordered_map>

#include "cleansplat/binio.hpp"

namespace cleansplat {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'E', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 31;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 step over the combined value
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

FeatureMap::FeatureMap(int grid_w, int grid_h, int dim, int patch_size)
    : FeatureMap(grid_w, grid_h, dim, patch_size,
                 std::vector<float>(static_cast<std::size_t>(grid_w) * grid_h * dim, 0.0f)) {}

FeatureMap::FeatureMap(int grid_w, int grid_h, int dim, int patch_size, std::vector<float> values)
    : grid_w_(grid_w), grid_h_(grid_h), dim_(dim), patch_size_(patch_size), values_(std::move(values)) {
  if (grid_w < 1 || grid_h < 1 || dim < 1 || patch_size < 1) {
    throw DimensionError("feature map dimensions must be positive");
  }
  if (values_.size() != static_cast<std::size_t>(grid_w) * grid_h * dim) {
    throw DimensionError("feature value count does not match grid and dim");
  }
}

std::uint16_t SceneSemantics::class_of(std::uint16_t instance, std::optional<std::size_t> frame) const {
  if (frame) {
    const auto it = frame_overrides.find({*frame, instance});
    if (it != frame_overrides.end()) return it->second;
  }
  const auto it = instance_class.find(instance);
  return it == instance_class.end() ? instance : it->second;
}

std::vector<float> class_embedding(std::uint64_t scene_seed, std::uint16_t cls, int dim) {
  std::mt19937_64 rng(mix(scene_seed, 0x1000 + cls));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<float> e(dim);
  for (float& v : e) v = static_cast<float>(n(rng));
  return e;
}

FeatureMap oracle_features(const Image& image, const IdMap& ids, const SceneSemantics& semantics,
                           std::optional<std::size_t> frame, std::uint64_t noise_seed,
                           const OracleParams& params) {
  if (ids.width != image.width() || ids.height != image.height() ||
      ids.ids.size() != static_cast<std::size_t>(ids.width) * ids.height) {
    throw DimensionError("id map does not match image dimensions");
  }
  const int ps = params.patch_size;
  const int gw = grid_extent(image.width(), ps);
  const int gh = grid_extent(image.height(), ps);
  FeatureMap out(gw, gh, params.dim, ps);
  std::unordered_map<std::uint16_t, std::vector<float>> embeddings;
  std::mt19937_64 rng(mix(noise_seed, 0x7e57));
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      std::map<std::uint16_t, int> votes;
      for (int y = gy * ps; y < std::min((gy + 1) * ps, image.height()); ++y) {
        for (int x = gx * ps; x < std::min((gx + 1) * ps, image.width()); ++x) {
          ++votes[semantics.class_of(ids.at(x, y), frame)];
        }
      }
      std::uint16_t best = 0;
      int best_count = -1;
      for (const auto& [cls, count] : votes) {
        if (count > best_count) {
          best = cls;
          best_count = count;
        }
      }
      auto it = embeddings.find(best);
      if (it == embeddings.end()) {
        it = embeddings.emplace(best, class_embedding(semantics.seed, best, params.dim)).first;
      }
      auto dst = out.patch(static_cast<std::size_t>(gy) * gw + gx);
      for (int k = 0; k < params.dim; ++k) {
        const double noise = params.noise_sigma > 0.0 ? params.noise_sigma * jitter(rng) : 0.0;
        dst[k] = static_cast<float>(it->second[k] + noise);
      }
    }
  }
  return out;
}

void write_features(const FeatureMap& map, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FeatureFileError(FeatureFileErrorKind::MissingFile, "cannot write " + path.string());
  out.write(kMagic, 4);
  binio::put_u32(out, kVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(map.grid_w()));
  binio::put_u32(out, static_cast<std::uint32_t>(map.grid_h()));
  binio::put_u32(out, static_cast<std::uint32_t>(map.dim()));
  binio::put_u32(out, static_cast<std::uint32_t>(map.patch_size()));
  for (float v : map.values()) binio::put_f32(out, v);
}

FeatureMap file_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FeatureFileError(FeatureFileErrorKind::MissingFile, "feature file not found: " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw FeatureFileError(FeatureFileErrorKind::BadMagic, "not a TFEA feature file: " + path.string());
  }
  std::uint32_t header[5];
  for (auto& h : header) {
    if (!binio::get_u32(in, h)) {
      throw FeatureFileError(FeatureFileErrorKind::TruncatedPayload, "truncated header in " + path.string());
    }
  }
  if (header[0] != kVersion) {
    throw FeatureFileError(FeatureFileErrorKind::UnsupportedVersion,
                           "unsupported TFEA version " + std::to_string(header[0]));
  }
  const std::uint64_t gw = header[1], gh = header[2], dim = header[3], ps = header[4];
  const auto limit = static_cast<std::uint64_t>(std::numeric_limits<int>::max());
  if (gw == 0 || gh == 0 || dim == 0 || ps == 0 || gw > limit || gh > limit || dim > limit ||
      ps > limit || gw * gh > kMaxValues || gw * gh * dim > kMaxValues) {
    throw FeatureFileError(FeatureFileErrorKind::DimensionOverflow,
                           "implausible feature dimensions in " + path.string());
  }
  std::vector<float> values(gw * gh * dim);
  for (float& v : values) {
    if (!binio::get_f32(in, v)) {
      throw FeatureFileError(FeatureFileErrorKind::TruncatedPayload, "truncated payload in " + path.string());
    }
  }
  return FeatureMap(static_cast<int>(gw), static_cast<int>(gh), static_cast<int>(dim),
                    static_cast<int>(ps), std::move(values));
}

OracleFeatureProvider::OracleFeatureProvider(std::vector<IdMap> frame_ids, SceneSemantics semantics,
                                             OracleParams params, std::uint64_t noise_seed)
    : frame_ids_(std::move(frame_ids)),
      semantics_(std::move(semantics)),
      params_(params),
      noise_seed_(noise_seed) {}

FeatureMap OracleFeatureProvider::reference(std::size_t frame, const Image& image) const {
  if (frame >= frame_ids_.size()) throw std::out_of_range("no id map for frame");
  return oracle_features(image, frame_ids_[frame], semantics_, frame,
                         mix(noise_seed_, 2 * frame), params_);
}

std::optional<FeatureMap> OracleFeatureProvider::rendered(std::size_t frame, const Image& render,
                                                          const IdMap* ids) const {
  if (!ids) return std::nullopt;
  return oracle_features(render, *ids, semantics_, frame, mix(noise_seed_, 2 * frame + 1), params_);
}

FeatureMap FileFeatureProvider::reference(std::size_t frame, const Image& image) const {
  FeatureMap map = file_features(dir_ / (std::to_string(frame) + ".tfea"));
  if (map.grid_w() != grid_extent(image.width(), map.patch_size()) ||
      map.grid_h() != grid_extent(image.height(), map.patch_size())) {
    throw DimensionError("feature grid does not match frame " + std::to_string(frame));
  }
  return map;
}

}  // namespace cleansplat
